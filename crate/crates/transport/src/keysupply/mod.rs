//! Simulated QKD key network.
//!
//! The quantum layer is a seeded generator per link; both endpoints run
//! their own copy of the generator and therefore pool identical octets.
//! Above it sit key management agents (pools and hop-by-hop relay), a key
//! management server (routing table, audit log) and key supply agents that
//! hand key files to registered applications.

mod audit;
mod keyfile;
mod network;
mod topology;

pub use audit::{AuditLog, AuditRecord};
pub use keyfile::{KeyFile, KeyId, KeyState};
pub use network::{find_overlaps, ExpiryReport, KeyNetwork, KeyNetworkConfig, KeySource, LinkLedger, NetworkClock, Origin};
pub use topology::{catalog_link, LinkSpec, LinkStatus, RoutingTable, Topology, LINK_CATALOG};

use thiserror::Error;

pub type NodeId = u16;

#[derive(Debug, Error)]
pub enum KeySupplyError {
    #[error("unknown link {0}")]
    UnknownLink(String),
    #[error("no route from node {from} to node {to}")]
    NoRoute { from: NodeId, to: NodeId },
    #[error("link {link} holds {available} key octets, {needed} needed")]
    InsufficientKey { link: String, needed: u64, available: u64 },
    #[error("application {0} is not registered with the key supply")]
    Unauthorized(String),
    #[error("unknown key {0}")]
    UnknownKey(KeyId),
    #[error("key {0} has expired")]
    Expired(KeyId),
    #[error("key {0} was already consumed")]
    Consumed(KeyId),
    #[error("configuration: {0}")]
    Config(String),
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("key supply channel: {0}")]
    Channel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KeySupplyError {
    /// Errors that may clear once more key has been generated.
    pub fn is_retryable(&self) -> bool {
        matches!(self, KeySupplyError::InsufficientKey { .. })
    }
}
