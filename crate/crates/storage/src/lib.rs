//! Storage servers and owner client for password-protected secret sharing
//! over a QKD-keyed transport.

pub mod bench;
pub mod cluster;
pub mod config;
pub mod deploy;
pub mod keystats;
pub mod net;
pub mod owner;
pub mod peer;
pub mod server;
pub mod store;
pub mod wire;
