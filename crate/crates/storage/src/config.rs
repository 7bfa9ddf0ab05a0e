//! Line-oriented `key = value` configuration.
//!
//! Recognized keys: `owner_id`, `m`, `n`, `t`, `server.<j>` (host:port),
//! `kms` (host:port), `state_dir`, `node.<app>`, `bootstrap.<app>` (64 hex
//! digits), `rate_limit` (attempts per hour, 0 for none), `pool_mode`
//! (`per-quorum` or `all-servers`), `precompute_batch`, `seed`.

use std::collections::BTreeMap;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::server::PoolMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

fn value_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl FromStr for Config {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?
            .parse()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| value_err(key, e.to_string())),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key).ok_or_else(|| value_err(key, "missing"))?;
        v.parse().map_err(|e: T::Err| value_err(key, e.to_string()))
    }

    /// Entries `prefix.<suffix>` as (suffix, value).
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries.iter().filter_map(move |(k, v)| {
            k.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|s| (s, v.as_str()))
        })
    }

    pub fn address(&self, key: &str) -> Result<SocketAddr, ConfigError> {
        let v = self.get(key).ok_or_else(|| value_err(key, "missing"))?;
        resolve(key, v)
    }

    /// `server.<j>` endpoints by index.
    pub fn servers(&self) -> Result<BTreeMap<u32, SocketAddr>, ConfigError> {
        self.with_prefix("server")
            .map(|(j, v)| {
                let key = format!("server.{j}");
                let j: u32 = j.parse().map_err(|_| value_err(&key, "index must be a number"))?;
                Ok((j, resolve(&key, v)?))
            })
            .collect()
    }

    /// The bootstrap seed of `app`.
    pub fn bootstrap_seed(&self, app: &str) -> Result<[u8; 32], ConfigError> {
        let key = format!("bootstrap.{app}");
        let v = self.get(&key).ok_or_else(|| value_err(&key, "missing"))?;
        let mut seed = [0u8; 32];
        hex::decode_to_slice(v, &mut seed).map_err(|e| value_err(&key, e.to_string()))?;
        Ok(seed)
    }

    pub fn state_dir(&self) -> PathBuf {
        PathBuf::from(self.get("state_dir").unwrap_or("qss-state"))
    }

    pub fn pool_mode(&self) -> Result<PoolMode, ConfigError> {
        match self.get("pool_mode").unwrap_or("per-quorum") {
            "per-quorum" => Ok(PoolMode::PerQuorum),
            "all-servers" => Ok(PoolMode::AllServers),
            other => Err(value_err("pool_mode", format!("unknown mode {other}"))),
        }
    }
}

fn resolve(key: &str, v: &str) -> Result<SocketAddr, ConfigError> {
    v.to_socket_addrs()
        .map_err(|e| value_err(key, e.to_string()))?
        .next()
        .ok_or_else(|| value_err(key, "no address"))
}
