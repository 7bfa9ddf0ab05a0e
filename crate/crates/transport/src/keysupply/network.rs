use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use zeroize::Zeroizing;

use super::audit::{AuditLog, AuditRecord};
use super::keyfile::{KeyFile, KeyId, KeyState};
use super::topology::{RoutingTable, Topology};
use super::{KeySupplyError, NodeId};

const HOUR_MS: u64 = 3_600_000;

/// Wall clock plus a simulated offset.
///
/// Waiting for a rate-limited link to produce key advances the offset
/// instead of sleeping. A manual clock starts at a fixed instant and only
/// moves through [`NetworkClock::advance`].
#[derive(Debug)]
pub struct NetworkClock {
    base: Option<u64>,
    offset: AtomicU64,
}

impl NetworkClock {
    pub fn system() -> Self {
        Self {
            base: None,
            offset: AtomicU64::new(0),
        }
    }

    pub fn manual(start_ms: u64) -> Self {
        Self {
            base: Some(start_ms),
            offset: AtomicU64::new(0),
        }
    }

    pub fn now(&self) -> u64 {
        let base = self.base.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0)
        });
        base + self.offset.load(Ordering::SeqCst)
    }

    pub fn advance(&self, ms: u64) {
        self.offset.fetch_add(ms, Ordering::SeqCst);
    }

    /// Total simulated waiting so far.
    pub fn simulated_ms(&self) -> u64 {
        self.offset.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Debug)]
pub struct KeyNetworkConfig {
    pub topology: Topology,
    /// Registered applications and the node whose supply agent serves them.
    pub apps: BTreeMap<String, NodeId>,
    /// Lifetime of delivered key files.
    pub key_ttl_ms: u64,
    /// Lifetime of pooled link key.
    pub pool_ttl_ms: u64,
    /// Generate missing link key when a request finds a pool short.
    pub on_demand: bool,
    /// Granularity of on-demand generation, in octets.
    pub generation_chunk: u64,
    /// Seeds the node random generators and prefixes every key id.
    pub instance: u64,
    /// Where key files and the audit log are written, if anywhere.
    pub storage_dir: Option<PathBuf>,
}

impl KeyNetworkConfig {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            apps: BTreeMap::new(),
            key_ttl_ms: 24 * HOUR_MS,
            pool_ttl_ms: 24 * HOUR_MS,
            on_demand: true,
            generation_chunk: 64 * 1024,
            instance: 1,
            storage_dir: None,
        }
    }

    pub fn with_app(mut self, app: impl Into<String>, node: NodeId) -> Self {
        self.apps.insert(app.into(), node);
        self
    }
}

/// Exact octet accounting for one link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkLedger {
    pub generated: u64,
    pub pooled: u64,
    pub consumed: u64,
    pub expired: u64,
}

impl LinkLedger {
    pub fn balanced(&self) -> bool {
        self.generated == self.pooled + self.consumed + self.expired
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExpiryReport {
    /// Key file copies moved to the expired state.
    pub key_files: usize,
    /// Pooled link octets dropped.
    pub pool_octets: u64,
}

/// Where delivered key octets came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Link(usize),
    NodeRng(NodeId),
}

/// A half-open range [start, end) of one origin's output stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeySource {
    pub origin: Origin,
    pub start: u64,
    pub end: u64,
}

/// Pairs of key ids whose source ranges overlap.
pub fn find_overlaps(sources: &[(KeyId, KeySource)]) -> Vec<(KeyId, KeyId)> {
    let mut sorted: Vec<&(KeyId, KeySource)> = sources.iter().collect();
    sorted.sort_by_key(|(_, s)| (s.origin, s.start));
    let mut out = Vec::new();
    for w in sorted.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.1.origin == b.1.origin && b.1.start < a.1.end {
            out.push((a.0, b.0));
        }
    }
    out
}

struct Chunk {
    start: u64,
    a: Zeroizing<Vec<u8>>,
    b: Zeroizing<Vec<u8>>,
    used: usize,
    expires_at: u64,
}

impl Chunk {
    fn remaining(&self) -> u64 {
        (self.a.len() - self.used) as u64
    }
}

struct LinkState {
    gen_a: ChaCha20Rng,
    gen_b: ChaCha20Rng,
    pool: VecDeque<Chunk>,
    ledger: LinkLedger,
    busy_until: u64,
}

struct Draw {
    near: Zeroizing<Vec<u8>>,
    far: Zeroizing<Vec<u8>>,
    ranges: Vec<(u64, u64)>,
}

impl LinkState {
    fn new(seed: u64) -> Self {
        Self {
            gen_a: ChaCha20Rng::seed_from_u64(seed),
            gen_b: ChaCha20Rng::seed_from_u64(seed),
            pool: VecDeque::new(),
            ledger: LinkLedger::default(),
            busy_until: 0,
        }
    }

    fn pooled(&self) -> u64 {
        self.pool.iter().map(Chunk::remaining).sum()
    }

    fn generate(&mut self, n: u64, rate: u64, now: u64, ttl: u64) -> u64 {
        let start = self.busy_until.max(now);
        let ready = start + (n * 1000).div_ceil(rate);
        let mut a = Zeroizing::new(vec![0u8; n as usize]);
        let mut b = Zeroizing::new(vec![0u8; n as usize]);
        self.gen_a.fill_bytes(&mut a);
        self.gen_b.fill_bytes(&mut b);
        self.pool.push_back(Chunk {
            start: self.ledger.generated,
            a,
            b,
            used: 0,
            expires_at: ready + ttl,
        });
        self.ledger.generated += n;
        self.ledger.pooled += n;
        self.busy_until = ready;
        ready
    }

    /// Takes n octets; `a_is_near` selects which endpoint's copy is `near`.
    fn draw(&mut self, n: u64, a_is_near: bool) -> Draw {
        let mut near = Zeroizing::new(Vec::with_capacity(n as usize));
        let mut far = Zeroizing::new(Vec::with_capacity(n as usize));
        let mut ranges = Vec::new();
        let mut left = n as usize;
        while left > 0 {
            let chunk = self.pool.front_mut().expect("caller checked the pool level");
            let take = left.min(chunk.a.len() - chunk.used);
            let (x, y) = (&chunk.a[chunk.used..chunk.used + take], &chunk.b[chunk.used..chunk.used + take]);
            let (x, y) = if a_is_near { (x, y) } else { (y, x) };
            near.extend_from_slice(x);
            far.extend_from_slice(y);
            let s = chunk.start + chunk.used as u64;
            ranges.push((s, s + take as u64));
            chunk.used += take;
            left -= take;
            if chunk.used == chunk.a.len() {
                self.pool.pop_front();
            }
        }
        self.ledger.pooled -= n;
        self.ledger.consumed += n;
        Draw { near, far, ranges }
    }

    fn expire(&mut self, now: u64) -> u64 {
        let mut dropped = 0;
        self.pool.retain(|c| {
            if c.expires_at <= now {
                dropped += c.remaining();
                false
            } else {
                true
            }
        });
        self.ledger.pooled -= dropped;
        self.ledger.expired += dropped;
        dropped
    }
}

struct NodeRng {
    rng: ChaCha20Rng,
    position: u64,
}

struct State {
    links: Vec<LinkState>,
    node_rngs: BTreeMap<NodeId, NodeRng>,
    /// Key file copies per application.
    stores: BTreeMap<String, BTreeMap<KeyId, KeyFile>>,
    next_key: u64,
    sources: Vec<(KeyId, KeySource)>,
    delivered: BTreeMap<String, u64>,
}

/// The whole simulated key network: quantum layer, KMAs, KMS and KSAs.
pub struct KeyNetwork {
    config: KeyNetworkConfig,
    routing: RoutingTable,
    clock: NetworkClock,
    audit: AuditLog,
    state: Mutex<State>,
}

impl KeyNetwork {
    pub fn new(config: KeyNetworkConfig) -> Result<Self, KeySupplyError> {
        Self::with_clock(config, NetworkClock::system())
    }

    pub fn with_clock(config: KeyNetworkConfig, clock: NetworkClock) -> Result<Self, KeySupplyError> {
        config.topology.validate()?;
        for (app, node) in &config.apps {
            if !config.topology.nodes.contains(node) {
                return Err(KeySupplyError::Config(format!("application {app} sits on unknown node {node}")));
            }
        }
        if config.generation_chunk == 0 {
            return Err(KeySupplyError::Config("generation chunk must be positive".into()));
        }
        let audit = match &config.storage_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                AuditLog::with_file(&dir.join("audit.log"))?
            }
            None => AuditLog::in_memory(),
        };
        let routing = RoutingTable::build(&config.topology, |_| 0);
        let state = State {
            links: config.topology.links.iter().map(|l| LinkState::new(l.seed)).collect(),
            node_rngs: config
                .topology
                .nodes
                .iter()
                .map(|&n| {
                    let seed = config.instance.rotate_left(16) ^ (n as u64).wrapping_mul(0xa076_1d64_78bd_642f);
                    (
                        n,
                        NodeRng {
                            rng: ChaCha20Rng::seed_from_u64(seed),
                            position: 0,
                        },
                    )
                })
                .collect(),
            stores: config.apps.keys().map(|a| (a.clone(), BTreeMap::new())).collect(),
            next_key: 0,
            sources: Vec::new(),
            delivered: BTreeMap::new(),
        };
        Ok(Self {
            config,
            routing,
            clock,
            audit,
            state: Mutex::new(state),
        })
    }

    pub fn config(&self) -> &KeyNetworkConfig {
        &self.config
    }

    pub fn clock(&self) -> &NetworkClock {
        &self.clock
    }

    pub fn topology(&self) -> &Topology {
        &self.config.topology
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("key network lock poisoned")
    }

    fn link_index(&self, name: &str) -> Result<usize, KeySupplyError> {
        self.config
            .topology
            .link_index(name)
            .ok_or_else(|| KeySupplyError::UnknownLink(name.to_string()))
    }

    fn node_of(&self, app: &str) -> Result<NodeId, KeySupplyError> {
        self.config
            .apps
            .get(app)
            .copied()
            .ok_or_else(|| KeySupplyError::Unauthorized(app.to_string()))
    }

    /// Runs the link's generator for `n` octets at both ends.
    ///
    /// Generation takes n / rate seconds; the clock is advanced to the
    /// moment the octets are ready. Returns that moment.
    pub fn generate_link_keys(&self, link: &str, n: u64) -> Result<u64, KeySupplyError> {
        let i = self.link_index(link)?;
        let mut st = self.lock();
        Ok(self.generate_locked(&mut st, i, n))
    }

    fn generate_locked(&self, st: &mut State, i: usize, n: u64) -> u64 {
        let now = self.clock.now();
        let rate = self.config.topology.links[i].rate;
        let ready = st.links[i].generate(n, rate, now, self.config.pool_ttl_ms);
        if ready > now {
            self.clock.advance(ready - now);
        }
        ready
    }

    /// Pooled octets still unused at `node`'s end of `link`.
    pub fn pool_snapshot(&self, link: &str, node: NodeId) -> Result<Vec<u8>, KeySupplyError> {
        let i = self.link_index(link)?;
        let spec = &self.config.topology.links[i];
        let a_side = if node == spec.a {
            true
        } else if node == spec.b {
            false
        } else {
            return Err(KeySupplyError::Config(format!("node {node} is not an end of {link}")));
        };
        let st = self.lock();
        Ok(st.links[i]
            .pool
            .iter()
            .flat_map(|c| {
                let copy = if a_side { &c.a } else { &c.b };
                copy[c.used..].to_vec()
            })
            .collect())
    }

    pub fn ledger(&self, link: &str) -> Result<LinkLedger, KeySupplyError> {
        let i = self.link_index(link)?;
        let st = self.lock();
        let mut l = st.links[i].ledger;
        l.pooled = st.links[i].pooled();
        Ok(l)
    }

    pub fn ledgers(&self) -> Vec<(String, LinkLedger)> {
        let st = self.lock();
        self.config
            .topology
            .links
            .iter()
            .zip(&st.links)
            .map(|(spec, s)| {
                let mut l = s.ledger;
                l.pooled = s.pooled();
                (spec.name.clone(), l)
            })
            .collect()
    }

    /// Routing table with current pool levels.
    pub fn routing_table(&self) -> RoutingTable {
        let st = self.lock();
        RoutingTable::build(&self.config.topology, |i| st.links[i].pooled())
    }

    fn hops(&self, path: &[NodeId]) -> Result<Vec<usize>, KeySupplyError> {
        path.windows(2)
            .map(|w| {
                self.config.topology.link_between(w[0], w[1]).ok_or(KeySupplyError::NoRoute {
                    from: w[0],
                    to: w[1],
                })
            })
            .collect()
    }

    /// Makes sure every hop can supply `n` octets, generating on demand if
    /// configured. Consumes nothing.
    fn reserve_capacity(&self, st: &mut State, hops: &[usize], n: u64) -> Result<(), KeySupplyError> {
        for &i in hops {
            let available = st.links[i].pooled();
            if available >= n {
                continue;
            }
            if !self.config.on_demand {
                return Err(KeySupplyError::InsufficientKey {
                    link: self.config.topology.links[i].name.clone(),
                    needed: n,
                    available,
                });
            }
            let chunk = self.config.generation_chunk;
            let deficit = (n - available).div_ceil(chunk) * chunk;
            self.generate_locked(st, i, deficit);
        }
        Ok(())
    }

    fn node_random(st: &mut State, node: NodeId, n: u64) -> (Zeroizing<Vec<u8>>, KeySource) {
        let r = st.node_rngs.get_mut(&node).expect("validated node");
        let mut k = Zeroizing::new(vec![0u8; n as usize]);
        r.rng.fill_bytes(&mut k);
        let src = KeySource {
            origin: Origin::NodeRng(node),
            start: r.position,
            end: r.position + n,
        };
        r.position += n;
        (k, src)
    }

    /// Relays `n` fresh octets from `src` to `dst`; returns the copies held
    /// at each end and the provenance of the octets.
    ///
    /// A direct link hands out pooled octets as they are. Over two or more
    /// hops a fresh key from the source's random generator is XOR-wrapped
    /// under each hop's link key and unwrapped by the next node. Either
    /// every hop is charged n octets or none is.
    fn relay_locked(
        &self,
        st: &mut State,
        src: NodeId,
        dst: NodeId,
        n: u64,
    ) -> Result<(Zeroizing<Vec<u8>>, Zeroizing<Vec<u8>>, Vec<KeySource>), KeySupplyError> {
        let path = self
            .routing
            .path(src, dst)
            .ok_or(KeySupplyError::NoRoute { from: src, to: dst })?
            .to_vec();
        let hops = self.hops(&path)?;
        self.reserve_capacity(st, &hops, n)?;
        match hops.len() {
            0 => {
                let (k, source) = Self::node_random(st, src, n);
                Ok((k.clone(), k, vec![source]))
            }
            1 => {
                let i = hops[0];
                let a_is_near = self.config.topology.links[i].a == src;
                let d = st.links[i].draw(n, a_is_near);
                let sources = d
                    .ranges
                    .iter()
                    .map(|&(start, end)| KeySource {
                        origin: Origin::Link(i),
                        start,
                        end,
                    })
                    .collect();
                Ok((d.near, d.far, sources))
            }
            _ => {
                let (key, source) = Self::node_random(st, src, n);
                let mut carried = key.clone();
                for (w, &i) in path.windows(2).zip(&hops) {
                    let a_is_near = self.config.topology.links[i].a == w[0];
                    let d = st.links[i].draw(n, a_is_near);
                    // w[0] wraps with its copy, w[1] unwraps with its own.
                    let wire: Vec<u8> = carried.iter().zip(d.near.iter()).map(|(k, p)| k ^ p).collect();
                    carried = Zeroizing::new(wire.iter().zip(d.far.iter()).map(|(c, p)| c ^ p).collect());
                }
                Ok((key, carried, vec![source]))
            }
        }
    }

    /// Key shared by two nodes over the routed path, outside any application.
    pub fn relay_key(&self, src: NodeId, dst: NodeId, n: u64) -> Result<(Vec<u8>, Vec<u8>), KeySupplyError> {
        let mut st = self.lock();
        let (a, b, _) = self.relay_locked(&mut st, src, dst, n)?;
        Ok((a.to_vec(), b.to_vec()))
    }

    /// Delivers a fresh key file of `n` octets to `app` and `peer_app`.
    ///
    /// Both supply agents keep a reserved copy; the peer fetches its copy by
    /// id. An audit record goes to the management server.
    pub fn ksa_request(&self, app: &str, peer_app: &str, n: u64, purpose: &str) -> Result<KeyFile, KeySupplyError> {
        let node = self.node_of(app)?;
        let peer_node = self.node_of(peer_app)?;
        if n == 0 {
            return Err(KeySupplyError::Config("key files must be non-empty".into()));
        }
        let mut st = self.lock();
        self.expire_locked(&mut st, self.clock.now())?;
        let (mine, theirs, sources) = self.relay_locked(&mut st, node, peer_node, n)?;
        let id = KeyId::from_parts(self.config.instance, st.next_key);
        st.next_key += 1;
        let now = self.clock.now();
        let route = self.routing.path(node, peer_node).unwrap_or(&[]).to_vec();
        let make = |octets: &[u8]| KeyFile {
            id,
            route: route.clone(),
            octets: octets.to_vec(),
            created_at: now,
            expires_at: now + self.config.key_ttl_ms,
            state: KeyState::Reserved,
        };
        let own = make(&mine);
        self.persist(app, &own)?;
        st.stores.get_mut(app).expect("registered").insert(id, own.clone());
        if peer_app != app {
            let copy = make(&theirs);
            self.persist(peer_app, &copy)?;
            st.stores.get_mut(peer_app).expect("registered").insert(id, copy);
        }
        st.sources.extend(sources.into_iter().map(|s| (id, s)));
        *st.delivered.entry(purpose.to_string()).or_default() += n;
        self.audit.append(AuditRecord {
            key_id: id,
            app: app.to_string(),
            peer_app: peer_app.to_string(),
            node,
            peer_node,
            octets: n,
            date: now,
            purpose: purpose.to_string(),
        })?;
        Ok(own)
    }

    /// The caller's copy of a key file that is still usable.
    pub fn ksa_fetch(&self, app: &str, id: &KeyId) -> Result<KeyFile, KeySupplyError> {
        self.node_of(app)?;
        let mut st = self.lock();
        self.expire_locked(&mut st, self.clock.now())?;
        let file = st
            .stores
            .get(app)
            .and_then(|s| s.get(id))
            .ok_or(KeySupplyError::UnknownKey(*id))?;
        match file.state {
            KeyState::Available | KeyState::Reserved => Ok(file.clone()),
            KeyState::Expired => Err(KeySupplyError::Expired(*id)),
            KeyState::Consumed => Err(KeySupplyError::Consumed(*id)),
        }
    }

    /// Marks the caller's copy consumed and erases its octets.
    pub fn mark_consumed(&self, app: &str, id: &KeyId) -> Result<(), KeySupplyError> {
        self.node_of(app)?;
        let mut st = self.lock();
        let file = st
            .stores
            .get_mut(app)
            .and_then(|s| s.get_mut(id))
            .ok_or(KeySupplyError::UnknownKey(*id))?;
        match file.state {
            KeyState::Available | KeyState::Reserved => {
                file.erase(KeyState::Consumed);
                let snapshot = file.clone();
                drop(st);
                self.persist(app, &snapshot)
            }
            KeyState::Expired => Err(KeySupplyError::Expired(*id)),
            KeyState::Consumed => Err(KeySupplyError::Consumed(*id)),
        }
    }

    /// Erases every key file copy and pooled link octet that is past expiry.
    pub fn expire_keys(&self, now: u64) -> Result<ExpiryReport, KeySupplyError> {
        let mut st = self.lock();
        self.expire_locked(&mut st, now)
    }

    fn expire_locked(&self, st: &mut State, now: u64) -> Result<ExpiryReport, KeySupplyError> {
        let mut report = ExpiryReport::default();
        for (app, store) in st.stores.iter_mut() {
            for file in store.values_mut() {
                if !file.state.is_erased() && file.expires_at <= now {
                    file.erase(KeyState::Expired);
                    report.key_files += 1;
                    self.persist(app, file)?;
                }
            }
        }
        for link in st.links.iter_mut() {
            report.pool_octets += link.expire(now);
        }
        Ok(report)
    }

    fn persist(&self, app: &str, file: &KeyFile) -> Result<(), KeySupplyError> {
        if let Some(dir) = &self.config.storage_dir {
            let dir = dir.join(app);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(format!("{}.key", file.id)), file.encode())?;
        }
        Ok(())
    }

    pub fn audit_records(&self) -> Vec<AuditRecord> {
        self.audit.records()
    }

    /// Octets delivered so far, per purpose tag.
    pub fn delivered_by_purpose(&self) -> BTreeMap<String, u64> {
        self.lock().delivered.clone()
    }

    pub fn delivered_total(&self) -> u64 {
        self.lock().delivered.values().sum()
    }

    /// Provenance of every delivered key file.
    pub fn delivered_sources(&self) -> Vec<(KeyId, KeySource)> {
        self.lock().sources.clone()
    }

    pub fn key_state(&self, app: &str, id: &KeyId) -> Option<KeyState> {
        self.lock().stores.get(app)?.get(id).map(|f| f.state)
    }
}
