//! Core arithmetic and protocol logic for password-authenticated secret
//! sharing over Mersenne-prime fields.
//!
//! - [`field`]: GF(2^m - 1) with fold reduction.
//! - [`sharing`]: Shamir sharings and interpolation at zero.
//! - [`scheme`]: registration, pre-computation, masked responses, MAC check.
//! - [`adversary`]: Monte Carlo and exact checks of the scheme's security claims.

pub mod adversary;
pub mod field;
pub mod scheme;
pub mod sharing;
pub mod stats;

pub use field::{FieldElement, FieldError, MersennePrime, MERSENNE_EXPONENTS};
pub use scheme::{DataId, OwnerId, Quorum, SchemeError, SchemeParams};
pub use sharing::{Share, SharePolynomial, SharingError};
