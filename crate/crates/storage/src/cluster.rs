//! A deployment spread over processes: one key supply process, one process
//! per storage server and owner clients, all reading the same
//! configuration file.

use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use qss_core::{MersennePrime, OwnerId, SchemeParams};
use qss_transport::endpoint::SecureEndpoint;
use qss_transport::keysupply::{KeyNetwork, KeyNetworkConfig, NodeId, Topology};
use qss_transport::ksa::{KsaClient, KsaServer};

use crate::config::{Config, ConfigError};
use crate::deploy::{derive_bootstrap_seed, DeployError, KsaHub, KSA_APP};
use crate::net::{serve_tcp, Network, TcpNetwork};
use crate::owner::OwnerClient;
use crate::peer::{owner_app, owner_sender, server_app, server_sender, Messenger};
use crate::server::{RateLimit, ServerConfig, StorageServer};
use crate::store::BundleStore;

#[derive(Clone, Debug)]
pub struct ClusterConfig {
    pub params: SchemeParams,
    pub owner: OwnerId,
    /// Every owner the key network serves.
    pub owners: Vec<OwnerId>,
    pub servers: BTreeMap<u32, SocketAddr>,
    pub kms: SocketAddr,
    pub state_dir: PathBuf,
    pub seed: u64,
    pub server: ServerConfig,
    pub topology: Topology,
    source: Config,
}

impl ClusterConfig {
    pub fn from_config(c: &Config) -> Result<Self, ConfigError> {
        let m: u32 = c.parse_or("m", 521)?;
        let n: u32 = c.parse_or("n", 4)?;
        let t: u32 = c.parse_or("t", 1)?;
        let field = MersennePrime::new(m).map_err(|e| value_err("m", e))?;
        let params = SchemeParams::new(n, t, field).map_err(|e| value_err("n", e))?;
        let owner = OwnerId(c.parse_or("owner_id", 1)?);
        let mut owners = match c.get("owners") {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse().map(OwnerId).map_err(|e| value_err("owners", e)))
                .collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };
        if !owners.contains(&owner) {
            owners.push(owner);
        }
        let servers = c.servers()?;
        if let Some(j) = (1..=n).find(|j| !servers.contains_key(j)) {
            return Err(value_err(&format!("server.{j}"), "missing"));
        }
        let mut server = ServerConfig::new(0);
        server.rate_limit = match c.parse_or("rate_limit", 10u32)? {
            0 => None,
            attempts => Some(RateLimit {
                attempts,
                window: Duration::from_secs(3600),
            }),
        };
        server.pool_mode = c.pool_mode()?;
        server.precompute_batch = c.parse_or("precompute_batch", 1)?;
        let seed = c.parse_or("seed", 1)?;
        Ok(Self {
            params,
            owner,
            owners,
            servers,
            kms: c.address("kms")?,
            state_dir: c.state_dir(),
            seed,
            server,
            topology: Topology::testbed(seed),
            source: c.clone(),
        })
    }

    fn node_for(&self, app: &str, default: NodeId) -> Result<NodeId, ConfigError> {
        self.source.parse_or(&format!("node.{app}"), default)
    }

    /// Applications and their nodes; server j defaults to node j, wrapping.
    pub fn apps(&self) -> Result<BTreeMap<String, NodeId>, ConfigError> {
        let nodes = &self.topology.nodes;
        let mut apps = BTreeMap::new();
        for &o in &self.owners {
            let app = owner_app(o);
            apps.insert(app.clone(), self.node_for(&app, nodes[0])?);
        }
        for j in 1..=self.params.n() {
            let app = server_app(j);
            apps.insert(app.clone(), self.node_for(&app, nodes[(j as usize - 1) % nodes.len()])?);
        }
        Ok(apps)
    }

    /// `bootstrap.<app>` if given, else derived from the seed.
    pub fn bootstrap_seed(&self, app: &str) -> Result<[u8; 32], ConfigError> {
        match self.source.get(&format!("bootstrap.{app}")) {
            Some(_) => self.source.bootstrap_seed(app),
            None => Ok(derive_bootstrap_seed(self.seed, app)),
        }
    }

    /// The key network and its supply agents, for the key supply process.
    pub fn build_kms(&self) -> Result<(Arc<KeyNetwork>, KsaHub), DeployError> {
        let apps = self.apps().map_err(cfg_err)?;
        let mut kcfg = KeyNetworkConfig::new(self.topology.clone());
        kcfg.instance = self.seed;
        kcfg.storage_dir = Some(self.state_dir.join("kms"));
        for (app, &node) in &apps {
            kcfg = kcfg.with_app(app.clone(), node);
        }
        let keys = Arc::new(KeyNetwork::new(kcfg)?);
        let mut agents = Vec::new();
        for &node in &self.topology.nodes {
            let served = apps
                .iter()
                .filter(|(_, &n)| n == node)
                .map(|(a, _)| Ok((a.clone(), self.bootstrap_seed(a)?)))
                .collect::<Result<Vec<_>, ConfigError>>()
                .map_err(cfg_err)?;
            let dir = self.state_dir.join("kms").join(format!("ksa{node}"));
            agents.push(Arc::new(KsaServer::new(keys.clone(), node, &served, Some(&dir))?));
        }
        Ok((keys, KsaHub::new(agents)))
    }

    pub fn network(&self) -> Arc<TcpNetwork> {
        let mut book: HashMap<String, SocketAddr> = self.servers.iter().map(|(&j, &a)| (server_app(j), a)).collect();
        book.insert(KSA_APP.to_string(), self.kms);
        Arc::new(TcpNetwork::new(book, None))
    }

    fn messenger(&self, app: &str, sender: u16, network: Arc<TcpNetwork>) -> Result<Messenger, DeployError> {
        let dir = self.state_dir.join(app);
        std::fs::create_dir_all(&dir)?;
        let seed = self.bootstrap_seed(app).map_err(cfg_err)?;
        let net = network.clone();
        let from = app.to_string();
        let provider = KsaClient::new(app, seed, Some(&dir.join("bootstrap.cursor")), move |frames: Vec<Vec<u8>>| {
            net.call(&from, KSA_APP, frames).map_err(|e| e.to_string())
        })?;
        let endpoint = SecureEndpoint::new(app, sender, Arc::new(provider));
        Ok(Messenger::new(endpoint, network, None))
    }

    pub fn owner_client(&self) -> Result<OwnerClient, DeployError> {
        let app = owner_app(self.owner);
        let messenger = self.messenger(&app, owner_sender(self.owner), self.network())?;
        Ok(OwnerClient::new(self.owner, self.params.clone(), messenger))
    }

    /// Opens server j's bundle log and listens on its configured address.
    pub fn start_server(&self, j: u32) -> Result<(Arc<StorageServer>, JoinHandle<()>), DeployError> {
        let addr = *self
            .servers
            .get(&j)
            .ok_or_else(|| DeployError::Config(format!("no address for server {j}")))?;
        let app = server_app(j);
        let store = BundleStore::open(&self.state_dir.join(&app).join("bundles.log"))?;
        let mut cfg = self.server.clone();
        cfg.index = j;
        let messenger = self.messenger(&app, server_sender(j), self.network())?;
        let server = Arc::new(StorageServer::new(cfg, store, messenger));
        let handle = serve_tcp(TcpListener::bind(addr)?, server.clone());
        Ok((server, handle))
    }
}

fn value_err(key: &str, e: impl ToString) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        msg: e.to_string(),
    }
}

fn cfg_err(e: ConfigError) -> DeployError {
    DeployError::Config(e.to_string())
}

pub const EXIT_AUTH: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

/// Process exit status for a failed owner operation.
pub fn exit_code(e: &crate::owner::OwnerError) -> i32 {
    use crate::owner::OwnerError;
    use crate::wire::ErrorCode;
    match e {
        OwnerError::AuthenticationFailed => EXIT_AUTH,
        OwnerError::Scheme(_) => EXIT_USAGE,
        _ => match OwnerClient::refusal(e) {
            Some(ErrorCode::UnknownData | ErrorCode::ImproperQuorum | ErrorCode::NotInQuorum | ErrorCode::Malformed) => {
                EXIT_USAGE
            }
            _ => EXIT_TRANSPORT,
        },
    }
}

/// The owner's record of registered data: `data_id<TAB>byte_len` lines.
pub fn catalog_path(state_dir: &std::path::Path, owner: OwnerId) -> PathBuf {
    state_dir.join(owner_app(owner)).join("catalog")
}

pub fn catalog_add(path: &std::path::Path, id: qss_core::DataId, byte_len: u64) -> std::io::Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{id}\t{byte_len}")
}

/// Total bytes registered; zero when nothing has been.
pub fn catalog_bytes(path: &std::path::Path) -> std::io::Result<u64> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e),
    };
    Ok(text
        .lines()
        .filter_map(|l| l.split('\t').nth(1)?.parse::<u64>().ok())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_sums_registered_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = catalog_path(dir.path(), OwnerId(3));
        assert_eq!(catalog_bytes(&path).unwrap(), 0);
        catalog_add(&path, qss_core::DataId(1), 100).unwrap();
        catalog_add(&path, qss_core::DataId(2), 23).unwrap();
        assert_eq!(catalog_bytes(&path).unwrap(), 123);
    }

    #[test]
    fn config_needs_every_server_address() {
        let c: Config = "n = 3\nt = 1\nkms = 127.0.0.1:7000\nserver.1 = 127.0.0.1:7001\nserver.2 = 127.0.0.1:7002".parse().unwrap();
        assert!(ClusterConfig::from_config(&c).is_err());
        let mut c = c;
        c.set("server.3", "127.0.0.1:7003");
        c.set("rate_limit", "0");
        let cc = ClusterConfig::from_config(&c).unwrap();
        assert!(cc.server.rate_limit.is_none());
        assert_eq!(cc.apps().unwrap().len(), 4);
    }
}
