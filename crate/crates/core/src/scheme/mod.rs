//! Password-authenticated secret sharing.
//!
//! Three phases: registration (data blocks at degree 2t, password at
//! degree t), pre-computation (per-server randomizer and zero sharings,
//! consumed once) and reconstruction (masked responses that only unmask
//! under the registered password, checked by a polynomial MAC).

mod blocks;
mod protocol;

use std::fmt;

use thiserror::Error;

use crate::field::{FieldError, MersennePrime};
use crate::sharing::SharingError;

pub use blocks::{block_count, compute_mac, decode_blocks, encode_blocks, BlockVector};
pub use protocol::{
    contribution_from_polynomials, encode_password, gen_precomputed_contribution, make_request,
    reconstruct, register, request_from_polynomial, respond, respond_all, response_value,
    share_blocks, verify_and_decode, Contribution, PrecomputedSet, ReconstructionRequest,
    RegistrationBundle, Response,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("data must not be empty")]
    EmptyData,
    #[error("password needs {bits} bits, at most {max} allowed")]
    PasswordTooLarge { bits: u64, max: u32 },
    #[error("improper request: quorum has {got} servers, expected {expected}")]
    ImproperQuorum { expected: usize, got: usize },
    #[error("invalid quorum: {0}")]
    InvalidQuorum(String),
    #[error("pre-computed set was prepared for a different quorum")]
    QuorumMismatch,
    #[error("server {0} is not part of the quorum")]
    NotInQuorum(u32),
    #[error("pre-computed set already consumed")]
    SetConsumed,
    #[error("block {0} out of range")]
    BlockOutOfRange(usize),
    #[error("block {0} does not fit in m - 1 bits")]
    BlockOverflow(usize),
    #[error("padding bits of the final block are not zero")]
    NonZeroPadding,
    #[error("block count {blocks} does not match byte length {byte_len}")]
    InconsistentLength { blocks: usize, byte_len: u64 },
    #[error("block vector has no MAC block")]
    MissingMac,
    #[error("responses disagree on the number of blocks")]
    ResponseLengthMismatch,
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Server count n, corruption bound t and the field.
///
/// Data and zero sharings use degree 2t; password, randomizer and request
/// sharings use degree t; a quorum has 2t + 1 members.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemeParams {
    n: u32,
    t: u32,
    field: MersennePrime,
}

impl SchemeParams {
    pub fn new(n: u32, t: u32, field: MersennePrime) -> Result<Self, SchemeError> {
        if t < 1 {
            return Err(SchemeError::InvalidParams("t must be at least 1".into()));
        }
        if (n as u64) < 2 * t as u64 + 1 {
            return Err(SchemeError::InvalidParams(format!(
                "n = {n} servers cannot tolerate t = {t}; need n >= 2t + 1"
            )));
        }
        if field.from_u64(n as u64).to_u64() != Some(n as u64) {
            return Err(SchemeError::InvalidParams(format!(
                "n = {n} is not below q = 2^{} - 1",
                field.exponent()
            )));
        }
        Ok(Self { n, t, field })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn field(&self) -> &MersennePrime {
        &self.field
    }

    pub fn data_degree(&self) -> usize {
        2 * self.t as usize
    }

    pub fn password_degree(&self) -> usize {
        self.t as usize
    }

    pub fn quorum_size(&self) -> usize {
        2 * self.t as usize + 1
    }

    /// Payload bits per block, m - 1.
    pub fn limb_bits(&self) -> u32 {
        self.field.exponent() - 1
    }

    /// Default quorum: the 2t + 1 lowest indices.
    pub fn default_quorum(&self) -> Quorum {
        Quorum((1..=self.quorum_size() as u32).collect())
    }

    /// All servers, used as the pool key when pre-computation runs across
    /// every server instead of per quorum.
    pub fn all_servers(&self) -> Quorum {
        Quorum((1..=self.n).collect())
    }
}

/// A sorted set of distinct server indices in 1..=n.
///
/// The size is not checked here; servers reject requests whose quorum is
/// not exactly 2t + 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quorum(Vec<u32>);

impl Quorum {
    pub fn new(mut members: Vec<u32>, n: u32) -> Result<Self, SchemeError> {
        members.sort_unstable();
        for w in members.windows(2) {
            if w[0] == w[1] {
                return Err(SchemeError::InvalidQuorum(format!("server {} listed twice", w[0])));
            }
        }
        if let Some(&bad) = members.iter().find(|&&j| j == 0 || j > n) {
            return Err(SchemeError::InvalidQuorum(format!("no server {bad} among 1..={n}")));
        }
        Ok(Self(members))
    }

    pub fn members(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: u32) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &Quorum) -> bool {
        self.0.iter().all(|&j| other.contains(j))
    }

    /// Bit j - 1 set for each member j, ceil(n / 8) octets.
    pub fn to_bitmap(&self, n: u32) -> Vec<u8> {
        let mut out = vec![0u8; (n as usize).div_ceil(8)];
        for &j in &self.0 {
            let bit = (j - 1) as usize;
            out[bit / 8] |= 1 << (bit % 8);
        }
        out
    }

    pub fn from_bitmap(bitmap: &[u8], n: u32) -> Result<Self, SchemeError> {
        let mut members = Vec::new();
        for (i, byte) in bitmap.iter().enumerate() {
            for b in 0..8 {
                if byte & (1 << b) != 0 {
                    members.push((i * 8 + b + 1) as u32);
                }
            }
        }
        Self::new(members, n)
    }
}

impl fmt::Display for Quorum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OwnerId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DataId(pub u64);

impl fmt::Display for OwnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for DataId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for DataId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s.trim_start_matches("0x"), 16).map(DataId)
    }
}
