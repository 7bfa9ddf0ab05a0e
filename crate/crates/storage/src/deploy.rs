//! A complete deployment in one process: simulated key network, one supply
//! agent per node, n storage servers and any number of owners, connected
//! by loopback or by local TCP sockets.

use std::collections::{BTreeMap, HashMap};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use qss_core::{OwnerId, SchemeParams};
use qss_transport::endpoint::{KeyProvider, SecureEndpoint, UsageAudit};
use qss_transport::frame::AuthFrame;
use qss_transport::keysupply::{KeyNetwork, KeyNetworkConfig, KeySupplyError, NodeId, Topology};
use qss_transport::ksa::{bootstrap_app_tag, KsaClient, KsaServer};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::net::{serve_tcp, Handler, Loopback, Network, TcpNetwork, TrafficLog};
use crate::owner::OwnerClient;
use crate::peer::{owner_app, owner_sender, server_app, server_sender, Messenger};
use crate::server::{ServerConfig, StorageServer};
use crate::store::{BundleStore, StoreError};

/// Application name of the supply agents' shared listener.
pub const KSA_APP: &str = "ksa";

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Keys(#[from] KeySupplyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
}

/// Bootstrap seed of `app` when none is configured. Anyone who knows the
/// deployment seed can derive it, so this suits tests and demonstrations.
pub fn derive_bootstrap_seed(seed: u64, app: &str) -> [u8; 32] {
    let tag = crc32fast::hash(app.as_bytes()) as u64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_b007 ^ (tag << 32));
    let mut s = [0u8; 32];
    rng.fill_bytes(&mut s);
    s
}

/// Routes bootstrap-sealed requests to the agent holding the sender's seed.
pub struct KsaHub {
    agents: Vec<Arc<KsaServer>>,
}

impl KsaHub {
    pub fn new(agents: Vec<Arc<KsaServer>>) -> Self {
        Self { agents }
    }
}

impl Handler for KsaHub {
    fn handle(&self, frames: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
        let Some(tag) = frames
            .first()
            .and_then(|f| AuthFrame::decode(f).ok())
            .and_then(|f| bootstrap_app_tag(&f.header.enc_key))
        else {
            return Vec::new();
        };
        let Some(agent) = self.agents.iter().find(|a| a.serves(tag)) else {
            return Vec::new();
        };
        agent.handle(&frames).unwrap_or_else(|e| {
            log::warn!("key supply request dropped: {e}");
            Vec::new()
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransportKind {
    #[default]
    Loopback,
    Tcp,
}

#[derive(Clone, Debug)]
pub struct DeploymentConfig {
    pub params: SchemeParams,
    pub owners: Vec<OwnerId>,
    pub topology: Topology,
    /// Node of server j at position j - 1; default spreads servers over
    /// the nodes in order, wrapping around.
    pub server_nodes: Option<Vec<NodeId>>,
    pub owner_node: NodeId,
    /// Template for every server; the index is filled in per server.
    pub server: ServerConfig,
    /// Bundle logs, key files, audit log and bootstrap cursors go here.
    pub state_dir: Option<PathBuf>,
    pub seed: u64,
    pub capture: bool,
    pub transport: TransportKind,
}

impl DeploymentConfig {
    /// Default testbed; the owner shares node 1 with server 1.
    pub fn new(params: SchemeParams) -> Self {
        Self {
            params,
            owners: vec![OwnerId(1)],
            topology: Topology::testbed(1),
            server_nodes: None,
            owner_node: 1,
            server: ServerConfig::new(0),
            state_dir: None,
            seed: 1,
            capture: false,
            transport: TransportKind::Loopback,
        }
    }

    fn node_of_server(&self, j: u32) -> NodeId {
        match &self.server_nodes {
            Some(nodes) => nodes[(j - 1) as usize],
            None => {
                let nodes = &self.topology.nodes;
                nodes[(j as usize - 1) % nodes.len()]
            }
        }
    }
}

pub struct Deployment {
    config: DeploymentConfig,
    keys: Arc<KeyNetwork>,
    network: Arc<dyn Network>,
    loopback: Option<Arc<Loopback>>,
    tcp: Option<Arc<TcpNetwork>>,
    servers: RwLock<Vec<Arc<StorageServer>>>,
    providers: HashMap<String, Arc<dyn KeyProvider>>,
    traffic: Option<Arc<TrafficLog>>,
    audit: Arc<UsageAudit>,
    _hub: Arc<KsaHub>,
}

impl Deployment {
    pub fn start(config: DeploymentConfig) -> Result<Self, DeployError> {
        let params = &config.params;
        if let Some(nodes) = &config.server_nodes {
            if nodes.len() != params.n() as usize {
                return Err(DeployError::Config(format!("{} server nodes for n = {}", nodes.len(), params.n())));
            }
        }
        let mut kcfg = KeyNetworkConfig::new(config.topology.clone());
        kcfg.instance = config.seed;
        kcfg.storage_dir = config.state_dir.as_ref().map(|d| d.join("kms"));
        for &o in &config.owners {
            kcfg = kcfg.with_app(owner_app(o), config.owner_node);
        }
        for j in 1..=params.n() {
            kcfg = kcfg.with_app(server_app(j), config.node_of_server(j));
        }
        let keys = Arc::new(KeyNetwork::new(kcfg)?);

        let seeds: BTreeMap<String, [u8; 32]> = keys
            .config()
            .apps
            .keys()
            .map(|app| (app.clone(), derive_bootstrap_seed(config.seed, app)))
            .collect();
        let mut agents = Vec::new();
        for &node in &config.topology.nodes {
            let apps: Vec<(String, [u8; 32])> = seeds
                .iter()
                .filter(|(a, _)| keys.config().apps.get(*a) == Some(&node))
                .map(|(a, s)| (a.clone(), *s))
                .collect();
            let dir = config.state_dir.as_ref().map(|d| d.join("kms").join(format!("ksa{node}")));
            agents.push(Arc::new(KsaServer::new(keys.clone(), node, &apps, dir.as_deref())?));
        }
        let hub = Arc::new(KsaHub::new(agents));

        let traffic = config.capture.then(|| Arc::new(TrafficLog::default()));
        let (network, loopback, tcp): (Arc<dyn Network>, _, _) = match config.transport {
            TransportKind::Loopback => {
                let lb = Arc::new(Loopback::new(traffic.clone()));
                lb.register(KSA_APP, hub.clone());
                (lb.clone(), Some(lb), None)
            }
            TransportKind::Tcp => {
                let tcp = Arc::new(TcpNetwork::new(HashMap::new(), traffic.clone()));
                let listener = TcpListener::bind("127.0.0.1:0")?;
                tcp.set_address(KSA_APP, listener.local_addr()?);
                serve_tcp(listener, hub.clone());
                (tcp.clone(), None, Some(tcp))
            }
        };

        let mut providers: HashMap<String, Arc<dyn KeyProvider>> = HashMap::new();
        for (app, seed) in &seeds {
            let cursor = match &config.state_dir {
                Some(d) => {
                    let dir = d.join(app);
                    std::fs::create_dir_all(&dir)?;
                    Some(dir.join("bootstrap.cursor"))
                }
                None => None,
            };
            let net = network.clone();
            let from = app.clone();
            let client = KsaClient::new(app, *seed, cursor.as_deref(), move |frames: Vec<Vec<u8>>| {
                net.call(&from, KSA_APP, frames).map_err(|e| e.to_string())
            })?;
            providers.insert(app.clone(), Arc::new(client));
        }

        let deployment = Self {
            config,
            keys,
            network,
            loopback,
            tcp,
            servers: RwLock::new(Vec::new()),
            providers,
            traffic,
            audit: Arc::new(UsageAudit::default()),
            _hub: hub,
        };
        let servers = (1..=deployment.config.params.n())
            .map(|j| deployment.launch_server(j))
            .collect::<Result<Vec<_>, _>>()?;
        *deployment.servers.write().expect("servers lock") = servers;
        Ok(deployment)
    }

    fn messenger(&self, app: &str, sender: u16) -> Messenger {
        let endpoint = SecureEndpoint::new(app, sender, self.providers[app].clone()).with_audit(self.audit.clone());
        Messenger::new(endpoint, self.network.clone(), self.traffic.clone())
    }

    fn launch_server(&self, j: u32) -> Result<Arc<StorageServer>, DeployError> {
        let app = server_app(j);
        let store = match &self.config.state_dir {
            Some(d) => BundleStore::open(&d.join(&app).join("bundles.log"))?,
            None => BundleStore::in_memory(),
        };
        let mut cfg = self.config.server.clone();
        cfg.index = j;
        let server = Arc::new(StorageServer::new(cfg, store, self.messenger(&app, server_sender(j))));
        if let Some(lb) = &self.loopback {
            lb.register(&app, server.clone());
        }
        if let Some(tcp) = &self.tcp {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            tcp.set_address(&app, listener.local_addr()?);
            serve_tcp(listener, server.clone());
        }
        Ok(server)
    }

    /// Replaces server j by a fresh process image over the same state
    /// directory: bundles come back from disk, pools start empty.
    pub fn restart_server(&self, j: u32) -> Result<Arc<StorageServer>, DeployError> {
        if self.config.state_dir.is_none() {
            return Err(DeployError::Config("restart needs a state directory".into()));
        }
        let mut servers = self.servers.write().expect("servers lock");
        // Release the old log before reopening it.
        let old = std::mem::replace(&mut servers[j as usize - 1], self.placeholder(j)?);
        drop(old);
        let server = self.launch_server(j)?;
        servers[j as usize - 1] = server.clone();
        Ok(server)
    }

    fn placeholder(&self, j: u32) -> Result<Arc<StorageServer>, DeployError> {
        let mut cfg = self.config.server.clone();
        cfg.index = j;
        Ok(Arc::new(StorageServer::new(cfg, BundleStore::in_memory(), self.messenger(&server_app(j), server_sender(j)))))
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    pub fn params(&self) -> &SchemeParams {
        &self.config.params
    }

    pub fn owner(&self, owner: OwnerId) -> OwnerClient {
        OwnerClient::new(owner, self.config.params.clone(), self.messenger(&owner_app(owner), owner_sender(owner)))
    }

    pub fn server(&self, j: u32) -> Arc<StorageServer> {
        self.servers.read().expect("servers lock")[j as usize - 1].clone()
    }

    pub fn key_network(&self) -> &Arc<KeyNetwork> {
        &self.keys
    }

    pub fn traffic(&self) -> Option<&Arc<TrafficLog>> {
        self.traffic.as_ref()
    }

    pub fn usage_audit(&self) -> &Arc<UsageAudit> {
        &self.audit
    }

    /// Takes server j off the network, or brings it back.
    pub fn set_server_down(&self, j: u32, down: bool) -> Result<(), DeployError> {
        match &self.loopback {
            Some(lb) => {
                lb.set_down(&server_app(j), down);
                Ok(())
            }
            None => Err(DeployError::Config("outages are simulated on loopback only".into())),
        }
    }

    /// QKD key octets delivered so far, by purpose.
    pub fn key_usage(&self) -> BTreeMap<String, u64> {
        self.keys.delivered_by_purpose()
    }
}
