//! Storage server: bundle storage, pre-computation rounds and
//! reconstruction responses.
//!
//! Pools hold pre-computed sets per (owner, data, member list) in slots of
//! l + 1 sets, one slot per reconstruction attempt. A slot is removed from
//! its pool when a request binds it, so no set is ever served twice. The
//! owner's first request in an attempt goes to the lowest-indexed quorum
//! member, which binds its oldest free slot; the other members are asked
//! for that same slot by id.
//!
//! A round run by server i for members M: i sends its contribution to
//! every other member, then a trigger to each; a triggered member sends
//! its own contribution to every other member before replying. Once all
//! triggers are answered every member holds every contribution and i sends
//! the commit. Members only move a round into their pools on commit.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use qss_core::scheme::block_count;
use qss_core::scheme::{gen_precomputed_contribution, respond_all, PrecomputedSet, ReconstructionRequest, RegistrationBundle};
use qss_core::{DataId, FieldElement, OwnerId, Quorum, SchemeParams};
use rand::RngCore;

use crate::net::Handler;
use crate::peer::{owner_sender, server_app, server_sender, CallError, Messenger};
use crate::store::{BundleStore, StoreError};
use crate::wire::{
    ErrorCode, Message, PrecompContrib, PrecompTrigger, PrecomputeRequest, ReconRequest, ReconResponse, RoundId,
    SlotId, StoreShares,
};

/// Upper bound on attempts pre-computed by one round.
pub const MAX_ROUND_ATTEMPTS: u32 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RateLimit {
    pub attempts: u32,
    pub window: Duration,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            attempts: 10,
            window: Duration::from_secs(3600),
        }
    }
}

/// Which servers a pool's sets are shared among.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoolMode {
    /// One pool per quorum; the sets serve only that quorum.
    #[default]
    PerQuorum,
    /// One pool over all n servers; any quorum draws from it.
    AllServers,
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub index: u32,
    /// Admitted reconstruction attempts per (owner, data); `None` is unlimited.
    pub rate_limit: Option<RateLimit>,
    pub pool_mode: PoolMode,
    /// Attempts pre-computed when a request finds the pool empty.
    pub precompute_batch: u32,
    pub lazy_precompute: bool,
}

impl ServerConfig {
    pub fn new(index: u32) -> Self {
        Self {
            index,
            rate_limit: Some(RateLimit::default()),
            pool_mode: PoolMode::default(),
            precompute_batch: 1,
            lazy_precompute: true,
        }
    }
}

type Refusal = Message;

/// Why a pre-computation round failed. `unreachable` names a member that
/// could not be contacted, so a client can choose a quorum without it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundError {
    pub unreachable: Option<u32>,
    pub detail: String,
}

impl From<String> for RoundError {
    fn from(detail: String) -> Self {
        Self { unreachable: None, detail }
    }
}

impl std::fmt::Display for RoundError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.detail)
    }
}

impl RoundError {
    fn call(k: u32, what: &str, e: CallError) -> Self {
        let unreachable = match &e {
            CallError::Net(_) => Some(k),
            CallError::Refused {
                code: ErrorCode::PeerUnreachable,
                detail,
                ..
            } => detail.parse().ok(),
            _ => None,
        };
        Self {
            unreachable,
            detail: format!("{what} server {k}: {e}"),
        }
    }

    fn refusal(self) -> Refusal {
        match self.unreachable {
            Some(k) => refuse(ErrorCode::PeerUnreachable, k.to_string()),
            None => refuse(ErrorCode::PrecomputeFailed, self.detail),
        }
    }
}

fn refuse(code: ErrorCode, detail: impl Into<String>) -> Refusal {
    Message::error(code, detail)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct PoolKey {
    owner: OwnerId,
    data: DataId,
    members: Vec<u32>,
}

struct Slot {
    id: SlotId,
    sets: Vec<PrecomputedSet>,
}

#[derive(Default)]
struct Pools {
    slots: HashMap<PoolKey, VecDeque<Slot>>,
    consumed: HashSet<SlotId>,
    served: Vec<SlotId>,
}

struct Pending {
    trigger: PrecompTrigger,
    contributions: BTreeMap<u32, Vec<(FieldElement, FieldElement)>>,
}

impl Pending {
    fn complete(&self) -> bool {
        self.trigger.members.members().iter().all(|m| self.contributions.contains_key(m))
    }
}

pub struct StorageServer {
    config: ServerConfig,
    store: BundleStore,
    messenger: Messenger,
    pools: Mutex<Pools>,
    pending: Mutex<HashMap<RoundId, Pending>>,
    next_seq: AtomicU64,
    attempts: Mutex<HashMap<(OwnerId, DataId), VecDeque<Instant>>>,
}

impl StorageServer {
    pub fn new(config: ServerConfig, store: BundleStore, messenger: Messenger) -> Self {
        // Random high bits keep round ids fresh across restarts.
        let seq = (rand::thread_rng().next_u32() as u64) << 32;
        Self {
            config,
            store,
            messenger,
            pools: Mutex::new(Pools::default()),
            pending: Mutex::new(HashMap::new()),
            next_seq: AtomicU64::new(seq),
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn index(&self) -> u32 {
        self.config.index
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn store(&self) -> &BundleStore {
        &self.store
    }

    pub fn messenger(&self) -> &Messenger {
        &self.messenger
    }

    fn pool_key(&self, owner: OwnerId, data: DataId, params: &SchemeParams, quorum: &Quorum) -> PoolKey {
        let members = match self.config.pool_mode {
            PoolMode::PerQuorum => quorum.members().to_vec(),
            PoolMode::AllServers => params.all_servers().members().to_vec(),
        };
        PoolKey { owner, data, members }
    }

    /// Free slots in the pool that serves `quorum`.
    pub fn pool_slots(&self, owner: OwnerId, data: DataId, quorum: &Quorum) -> usize {
        let Some(bundle) = self.store.get(owner, data) else { return 0 };
        let Ok(params) = bundle.params() else { return 0 };
        let key = self.pool_key(owner, data, &params, quorum);
        self.pools.lock().expect("pool lock").slots.get(&key).map_or(0, VecDeque::len)
    }

    /// Free sets in the pool that serves `quorum`.
    pub fn pool_sets(&self, owner: OwnerId, data: DataId, quorum: &Quorum) -> usize {
        let Some(bundle) = self.store.get(owner, data) else { return 0 };
        self.pool_slots(owner, data, quorum) * bundle.data_shares.len()
    }

    /// Copies of the free slots in the pool that serves `quorum`, oldest first.
    pub fn pool_snapshot(&self, owner: OwnerId, data: DataId, quorum: &Quorum) -> Vec<(SlotId, Vec<PrecomputedSet>)> {
        let Some(bundle) = self.store.get(owner, data) else { return Vec::new() };
        let Ok(params) = bundle.params() else { return Vec::new() };
        let key = self.pool_key(owner, data, &params, quorum);
        let pools = self.pools.lock().expect("pool lock");
        pools
            .slots
            .get(&key)
            .map(|q| q.iter().map(|s| (s.id, s.sets.clone())).collect())
            .unwrap_or_default()
    }

    /// Every slot this server has answered with, in order.
    pub fn served_slots(&self) -> Vec<SlotId> {
        self.pools.lock().expect("pool lock").served.clone()
    }

    pub fn pending_rounds(&self) -> usize {
        self.pending.lock().expect("pending lock").len()
    }

    fn dispatch(&self, sender: u16, msg: Message) -> (Message, &'static str) {
        let (result, purpose) = match msg {
            Message::StoreShares(s) => (self.handle_store(sender, s), "registration"),
            Message::DeleteBundle { owner, data_id } => (self.handle_delete(sender, owner, data_id), "registration"),
            Message::ReconRequest(r) => (self.handle_reconstruct(sender, r), "reconstruction"),
            Message::Precompute(p) => (self.handle_precompute(sender, p), "precomputation"),
            Message::PrecompTrigger(t) => (self.handle_trigger(sender, t), "precomputation"),
            Message::PrecompContrib(c) => (self.handle_contrib(sender, c), "precomputation"),
            Message::PrecompCommit(r) => (self.handle_commit(sender, r), "precomputation"),
            Message::PrecompAbort(r) => (self.handle_abort(sender, r), "precomputation"),
            other => (
                Err(refuse(ErrorCode::Malformed, format!("unexpected message type {}", other.msg_type()))),
                "control",
            ),
        };
        (result.unwrap_or_else(|e| e), purpose)
    }

    fn handle_store(&self, sender: u16, s: StoreShares) -> Result<Message, Refusal> {
        if sender != owner_sender(s.owner) {
            return Err(refuse(ErrorCode::Unauthorized, "bundles are accepted from their owner only"));
        }
        if s.server != self.config.index {
            return Err(refuse(ErrorCode::Malformed, format!("bundle is for server {}", s.server)));
        }
        let params = s.params().map_err(|e| refuse(ErrorCode::Malformed, e.to_string()))?;
        if s.server > params.n() || s.byte_len == 0 {
            return Err(refuse(ErrorCode::Malformed, "server index or length out of range"));
        }
        let l = block_count(s.byte_len, params.field().exponent());
        if s.data_shares.len() as u64 != l + 1 {
            return Err(refuse(
                ErrorCode::Malformed,
                format!("expected {} shares, got {}", l + 2, s.data_shares.len() + 1),
            ));
        }
        if s.data_shares.iter().any(|e| e.field() != params.field()) {
            return Err(refuse(ErrorCode::Malformed, "shares from different fields"));
        }
        let (owner, data_id) = (s.owner, s.data_id);
        match self.store.put(s) {
            Ok(()) => {}
            Err(StoreError::Duplicate { .. }) => return Err(refuse(ErrorCode::Duplicate, format!("data {data_id} exists"))),
            Err(e) => return Err(refuse(ErrorCode::Internal, e.to_string())),
        }
        self.drop_pools(owner, data_id);
        Ok(Message::StoreAck { owner, data_id })
    }

    fn handle_delete(&self, sender: u16, owner: OwnerId, data: DataId) -> Result<Message, Refusal> {
        if sender != owner_sender(owner) {
            return Err(refuse(ErrorCode::Unauthorized, "only the owner may delete"));
        }
        self.store.delete(owner, data).map_err(|e| refuse(ErrorCode::Internal, e.to_string()))?;
        self.drop_pools(owner, data);
        Ok(Message::PrecompReply)
    }

    fn drop_pools(&self, owner: OwnerId, data: DataId) {
        let mut pools = self.pools.lock().expect("pool lock");
        pools.slots.retain(|k, _| k.owner != owner || k.data != data);
    }

    fn bundle(&self, owner: OwnerId, data: DataId) -> Result<(std::sync::Arc<StoreShares>, SchemeParams), Refusal> {
        let bundle = self
            .store
            .get(owner, data)
            .ok_or_else(|| refuse(ErrorCode::UnknownData, format!("no data {data} for owner {owner}")))?;
        let params = bundle.params().map_err(|e| refuse(ErrorCode::Internal, e.to_string()))?;
        Ok((bundle, params))
    }

    fn admit(&self, owner: OwnerId, data: DataId) -> Result<(), Refusal> {
        let Some(limit) = self.config.rate_limit else { return Ok(()) };
        let now = Instant::now();
        let mut attempts = self.attempts.lock().expect("rate lock");
        let recent = attempts.entry((owner, data)).or_default();
        while recent.front().is_some_and(|&t| now.duration_since(t) >= limit.window) {
            recent.pop_front();
        }
        if recent.len() >= limit.attempts as usize {
            return Err(refuse(
                ErrorCode::RateLimited,
                format!("{} attempts within {:?}", limit.attempts, limit.window),
            ));
        }
        recent.push_back(now);
        Ok(())
    }

    fn bind(&self, key: &PoolKey, slot: Option<SlotId>) -> Result<Option<Slot>, Refusal> {
        let mut pools = self.pools.lock().expect("pool lock");
        let queue = pools.slots.entry(key.clone()).or_default();
        let taken = match slot {
            None => queue.pop_front(),
            Some(id) => match queue.iter().position(|s| s.id == id) {
                Some(i) => queue.remove(i),
                None if pools.consumed.contains(&id) => {
                    return Err(refuse(ErrorCode::SlotConsumed, format!("slot {id} already served")))
                }
                None => return Err(refuse(ErrorCode::SlotUnavailable, format!("slot {id} not ready"))),
            },
        };
        if let Some(s) = &taken {
            pools.consumed.insert(s.id);
            pools.served.push(s.id);
        }
        Ok(taken)
    }

    fn handle_reconstruct(&self, sender: u16, r: ReconRequest) -> Result<Message, Refusal> {
        if sender != owner_sender(r.owner) {
            return Err(refuse(ErrorCode::Unauthorized, "requests are accepted from the owner only"));
        }
        let (bundle, params) = self.bundle(r.owner, r.data_id)?;
        if r.n != params.n() {
            return Err(refuse(ErrorCode::Malformed, "server count differs from registration"));
        }
        // Rejected before anything is bound, so improper requests cost no pool material.
        if r.quorum.len() != params.quorum_size() {
            return Err(refuse(
                ErrorCode::ImproperQuorum,
                format!("quorum has {} servers, expected {}", r.quorum.len(), params.quorum_size()),
            ));
        }
        let j = self.config.index;
        if !r.quorum.contains(j) {
            return Err(refuse(ErrorCode::NotInQuorum, format!("server {j} is not in {}", r.quorum)));
        }
        if r.password_share.field() != params.field() {
            return Err(refuse(ErrorCode::Malformed, "password share from another field"));
        }
        self.admit(r.owner, r.data_id)?;
        let key = self.pool_key(r.owner, r.data_id, &params, &r.quorum);
        let mut slot = self.bind(&key, r.slot)?;
        if slot.is_none() && self.config.lazy_precompute {
            let members = Quorum::new(key.members.clone(), params.n()).expect("valid members");
            match self.run_round(r.owner, r.data_id, &members, self.config.precompute_batch.max(1)) {
                Ok(_) => slot = self.bind(&key, None)?,
                Err(e) if e.unreachable.is_some() => return Err(e.refusal()),
                Err(e) => log::warn!("server {j}: lazy pre-computation failed: {e}"),
            }
        }
        let mut slot = slot.ok_or_else(|| refuse(ErrorCode::PoolExhausted, format!("no pre-computed sets for {}", r.quorum)))?;
        let rb = RegistrationBundle {
            owner: bundle.owner,
            data_id: bundle.data_id,
            server: j,
            byte_len: bundle.byte_len,
            data_shares: bundle.data_shares.clone(),
            password_share: bundle.password_share.clone(),
        };
        let request = ReconstructionRequest {
            quorum: r.quorum.clone(),
            holder: j,
            password_share: r.password_share,
        };
        let values = respond_all(&rb, &mut slot.sets, &request, &params).map_err(|e| refuse(ErrorCode::Internal, e.to_string()))?;
        Ok(Message::ReconResponse(ReconResponse {
            owner: r.owner,
            data_id: r.data_id,
            server: j,
            slot: slot.id,
            byte_len: bundle.byte_len,
            first_block: 0,
            values,
        }))
    }

    fn handle_precompute(&self, sender: u16, p: PrecomputeRequest) -> Result<Message, Refusal> {
        if sender != owner_sender(p.owner) {
            return Err(refuse(ErrorCode::Unauthorized, "pre-computation is requested by the owner"));
        }
        let (_, params) = self.bundle(p.owner, p.data_id)?;
        if p.n != params.n() || p.attempts == 0 || p.attempts > MAX_ROUND_ATTEMPTS {
            return Err(refuse(ErrorCode::Malformed, "bad pre-computation request"));
        }
        let key = self.pool_key(p.owner, p.data_id, &params, &p.members);
        if key.members != p.members.members() || !p.members.contains(self.config.index) {
            return Err(refuse(ErrorCode::NotInQuorum, format!("no pool for {}", p.members)));
        }
        if self.config.pool_mode == PoolMode::PerQuorum && p.members.len() != params.quorum_size() {
            return Err(refuse(ErrorCode::ImproperQuorum, format!("{} is not a quorum", p.members)));
        }
        self.run_round(p.owner, p.data_id, &p.members, p.attempts)
            .map_err(RoundError::refusal)?;
        Ok(Message::PrecompReply)
    }

    fn contributions(&self, params: &SchemeParams, t: &PrecompTrigger) -> Result<Vec<qss_core::scheme::Contribution>, String> {
        let mut rng = rand::thread_rng();
        (0..t.attempts * t.sets)
            .map(|_| gen_precomputed_contribution(params, &t.members, self.config.index, &mut rng).map_err(|e| e.to_string()))
            .collect()
    }

    fn pairs_for(contributions: &[qss_core::scheme::Contribution], k: u32) -> Vec<(FieldElement, FieldElement)> {
        contributions
            .iter()
            .map(|c| {
                let (r, z) = c.share_for(k).expect("member of the round");
                (r.clone(), z.clone())
            })
            .collect()
    }

    /// Sends this server's contribution to every other member and keeps
    /// its own share.
    fn contribute(&self, params: &SchemeParams, t: &PrecompTrigger) -> Result<(), RoundError> {
        let j = self.config.index;
        let own = self.contributions(params, t)?;
        self.accept_contribution(t, j, Self::pairs_for(&own, j))?;
        for &k in t.members.members().iter().filter(|&&k| k != j) {
            let msg = Message::PrecompContrib(PrecompContrib {
                trigger: t.clone(),
                from: j,
                pairs: Self::pairs_for(&own, k),
            });
            self.messenger
                .call(&server_app(k), &msg, "precomputation")
                .map_err(|e| RoundError::call(k, "contribution to", e))?;
        }
        Ok(())
    }

    fn accept_contribution(&self, t: &PrecompTrigger, from: u32, pairs: Vec<(FieldElement, FieldElement)>) -> Result<(), String> {
        let mut pending = self.pending.lock().expect("pending lock");
        let entry = pending.entry(t.round).or_insert_with(|| Pending {
            trigger: t.clone(),
            contributions: BTreeMap::new(),
        });
        if entry.trigger != *t {
            return Err(format!("round {:?} announced with different parameters", t.round));
        }
        if entry.contributions.insert(from, pairs).is_some() {
            return Err(format!("server {from} contributed twice to round {:?}", t.round));
        }
        Ok(())
    }

    /// Runs one pre-computation round as initiator; on any failure the
    /// round is aborted everywhere and nothing is committed.
    pub fn run_round(&self, owner: OwnerId, data: DataId, members: &Quorum, attempts: u32) -> Result<RoundId, RoundError> {
        let (bundle, params) = self.bundle(owner, data).map_err(|m| format!("{m:?}"))?;
        let j = self.config.index;
        if !members.contains(j) {
            return Err(format!("server {j} is not among {members}").into());
        }
        let round = RoundId {
            initiator: j,
            seq: self.next_seq.fetch_add(1, Ordering::SeqCst),
        };
        let trigger = PrecompTrigger {
            round,
            owner,
            data_id: data,
            n: params.n(),
            members: members.clone(),
            attempts,
            sets: bundle.data_shares.len() as u32,
        };
        let peers: Vec<u32> = members.members().iter().copied().filter(|&k| k != j).collect();
        let result = self.contribute(&params, &trigger).and_then(|()| {
            for &k in &peers {
                match self.messenger.call(&server_app(k), &Message::PrecompTrigger(trigger.clone()), "precomputation") {
                    Ok(Message::PrecompReply) => {}
                    Ok(other) => return Err(format!("server {k} answered type {}", other.msg_type()).into()),
                    Err(e) => return Err(RoundError::call(k, "trigger to", e)),
                }
            }
            Ok(())
        });
        let complete = self.pending.lock().expect("pending lock").get(&round).is_some_and(Pending::complete);
        if let Err(e) = result.and_then(|()| if complete { Ok(()) } else { Err(String::from("contributions missing").into()) }) {
            self.pending.lock().expect("pending lock").remove(&round);
            for &k in &peers {
                let _ = self.messenger.call(&server_app(k), &Message::PrecompAbort(round), "precomputation");
            }
            return Err(e);
        }
        for &k in &peers {
            if let Err(e) = self.messenger.call(&server_app(k), &Message::PrecompCommit(round), "precomputation") {
                log::warn!("server {j}: commit of round {round:?} at server {k}: {e}");
            }
        }
        self.commit(round).map_err(|m| format!("{m:?}"))?;
        Ok(round)
    }

    fn check_trigger(&self, t: &PrecompTrigger) -> Result<SchemeParams, Refusal> {
        let (bundle, params) = self.bundle(t.owner, t.data_id)?;
        let malformed = |d: &str| refuse(ErrorCode::Malformed, d.to_string());
        if t.n != params.n() || t.sets as usize != bundle.data_shares.len() {
            return Err(malformed("round does not match the stored bundle"));
        }
        if t.attempts == 0 || t.attempts > MAX_ROUND_ATTEMPTS {
            return Err(malformed("attempt count out of range"));
        }
        if !t.members.contains(self.config.index) || !t.members.contains(t.round.initiator) {
            return Err(refuse(ErrorCode::NotInQuorum, format!("round members {}", t.members)));
        }
        if t.members.len() < params.quorum_size() {
            return Err(malformed("round has fewer members than a quorum"));
        }
        Ok(params)
    }

    fn handle_trigger(&self, sender: u16, t: PrecompTrigger) -> Result<Message, Refusal> {
        if sender != server_sender(t.round.initiator) {
            return Err(refuse(ErrorCode::Unauthorized, "trigger from a server other than the initiator"));
        }
        let params = self.check_trigger(&t)?;
        self.contribute(&params, &t).map_err(RoundError::refusal)?;
        Ok(Message::PrecompReply)
    }

    fn handle_contrib(&self, sender: u16, c: PrecompContrib) -> Result<Message, Refusal> {
        if sender != server_sender(c.from) || !c.trigger.members.contains(c.from) {
            return Err(refuse(ErrorCode::Unauthorized, "contribution from a non-member"));
        }
        let params = self.check_trigger(&c.trigger)?;
        let expected = (c.trigger.attempts * c.trigger.sets) as usize;
        if c.pairs.len() != expected || c.pairs.iter().any(|(r, z)| r.field() != params.field() || z.field() != params.field()) {
            return Err(refuse(ErrorCode::Malformed, format!("expected {expected} share pairs")));
        }
        self.accept_contribution(&c.trigger, c.from, c.pairs)
            .map_err(|e| refuse(ErrorCode::Malformed, e))?;
        Ok(Message::PrecompReply)
    }

    fn commit(&self, round: RoundId) -> Result<(), Refusal> {
        let mut pending = self.pending.lock().expect("pending lock");
        match pending.get(&round) {
            Some(p) if p.complete() => {}
            Some(_) => return Err(refuse(ErrorCode::PrecomputeFailed, "round incomplete")),
            None => return Err(refuse(ErrorCode::PrecomputeFailed, "unknown round")),
        }
        let p = pending.remove(&round).expect("checked above");
        drop(pending);
        let t = &p.trigger;
        let j = self.config.index;
        let sets = t.sets as usize;
        let mut slots = Vec::with_capacity(t.attempts as usize);
        for a in 0..t.attempts as usize {
            let sets = (0..sets)
                .map(|i| {
                    let idx = a * sets + i;
                    let mut r = BTreeMap::new();
                    let mut z = BTreeMap::new();
                    for (&from, pairs) in &p.contributions {
                        r.insert(from, pairs[idx].0.clone());
                        z.insert(from, pairs[idx].1.clone());
                    }
                    PrecomputedSet::new(t.members.clone(), i, j, r, z)
                })
                .collect();
            slots.push(Slot {
                id: SlotId {
                    round,
                    attempt: a as u32,
                },
                sets,
            });
        }
        let key = PoolKey {
            owner: t.owner,
            data: t.data_id,
            members: t.members.members().to_vec(),
        };
        self.pools.lock().expect("pool lock").slots.entry(key).or_default().extend(slots);
        Ok(())
    }

    fn handle_commit(&self, sender: u16, round: RoundId) -> Result<Message, Refusal> {
        if sender != server_sender(round.initiator) {
            return Err(refuse(ErrorCode::Unauthorized, "commit from a server other than the initiator"));
        }
        self.commit(round)?;
        Ok(Message::PrecompReply)
    }

    fn handle_abort(&self, sender: u16, round: RoundId) -> Result<Message, Refusal> {
        if sender != server_sender(round.initiator) {
            return Err(refuse(ErrorCode::Unauthorized, "abort from a server other than the initiator"));
        }
        self.pending.lock().expect("pending lock").remove(&round);
        Ok(Message::PrecompReply)
    }
}

impl Handler for StorageServer {
    fn handle(&self, frames: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
        self.messenger.serve(frames, |sender, msg| self.dispatch(sender, msg))
    }
}
