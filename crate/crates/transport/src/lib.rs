//! Key supply and one-time-pad transport.
//!
//! [`keysupply`] simulates a QKD key network: per-link key generation,
//! trusted hop-by-hop relay, routing and an application-facing supply agent
//! with key lifecycle and audit. [`frame`] and [`endpoint`] turn delivered
//! keys into one-time-pad encrypted, Wegman-Carter authenticated frames.
//! [`ksa`] carries key requests themselves over sealed frames.

pub mod checks;
pub mod endpoint;
pub mod frame;
pub mod keysupply;
pub mod ksa;
pub mod wc;

pub use endpoint::{EndpointError, Incoming, KeyProvider, SecureEndpoint, UsageAudit};
pub use frame::{AuthFrame, FrameError, FrameHeader, KeyMaterial, KeystreamCursor, ReceiverState, MAX_PAYLOAD};
pub use keysupply::{KeyFile, KeyId, KeyNetwork, KeyNetworkConfig, KeyState, KeySupplyError, NodeId, Topology};
pub use ksa::{BootstrapProvider, DirectKsa, KsaClient, KsaServer, KsaTransport};
