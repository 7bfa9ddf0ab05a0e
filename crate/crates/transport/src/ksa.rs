//! Key supply agents as seen by applications.
//!
//! [`DirectKsa`] calls the key network in process. [`KsaClient`] reaches a
//! [`KsaServer`] over frames sealed with bootstrap keys, which are two
//! ChaCha20 streams (one per direction) derived from a per-application seed
//! provisioned out of band.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::endpoint::{EndpointError, Incoming, KeyProvider, SecureEndpoint};
use crate::frame::{AuthFrame, KeyMaterial};
use crate::keysupply::{KeyFile, KeyId, KeyNetwork, KeySupplyError, NodeId};

pub const KSA_REQUEST: u8 = 0x40;
pub const KSA_FETCH: u8 = 0x41;
pub const KSA_CONSUMED: u8 = 0x42;
pub const KSA_KEY: u8 = 0x43;
pub const KSA_ACK: u8 = 0x44;
pub const KSA_ERROR: u8 = 0x45;

const ERR_INSUFFICIENT: u16 = 1;
const ERR_UNAUTHORIZED: u16 = 2;
const ERR_UNKNOWN: u16 = 3;
const ERR_EXPIRED: u16 = 4;
const ERR_CONSUMED: u16 = 5;
const ERR_OTHER: u16 = 6;

/// Sender id used by supply agents on the bootstrap channel.
pub const KSA_SENDER: u16 = 0xffff;

const BOOTSTRAP_TAG: u8 = 0xb0;

fn material(file: &KeyFile) -> Arc<KeyMaterial> {
    KeyMaterial::new(file.id, file.octets.clone())
}

/// In-process access to the key network for one application.
pub struct DirectKsa {
    network: Arc<KeyNetwork>,
    app: String,
}

impl DirectKsa {
    pub fn new(network: Arc<KeyNetwork>, app: impl Into<String>) -> Self {
        Self {
            network,
            app: app.into(),
        }
    }
}

impl KeyProvider for DirectKsa {
    fn request(&self, peer_app: &str, octets: u64, purpose: &str) -> Result<Arc<KeyMaterial>, KeySupplyError> {
        Ok(material(&self.network.ksa_request(&self.app, peer_app, octets, purpose)?))
    }

    fn fetch(&self, id: &KeyId) -> Result<Arc<KeyMaterial>, KeySupplyError> {
        Ok(material(&self.network.ksa_fetch(&self.app, id)?))
    }

    fn consumed(&self, id: &KeyId) {
        if let Err(e) = self.network.mark_consumed(&self.app, id) {
            log::debug!("{}: consume {id}: {e}", self.app);
        }
    }
}

/// Direction of a bootstrap stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToKsa = 0,
    FromKsa = 1,
}

/// Bootstrap keys for one application and one side of its KSA channel.
///
/// Ids carry the stream position so the receiving side can derive the same
/// octets: tag (1) | direction (1) | app tag (4) | position (6) | length (4).
/// The send position only moves forward and, with a cursor file, survives
/// restarts; it is written before any octet at the new position is used.
pub struct BootstrapProvider {
    seed: [u8; 32],
    app_tag: u32,
    send: Direction,
    next: Mutex<u64>,
    cursor_file: Option<PathBuf>,
}

impl BootstrapProvider {
    pub fn new(app: &str, seed: [u8; 32], send: Direction) -> Self {
        Self {
            seed,
            app_tag: app_tag(app),
            send,
            next: Mutex::new(0),
            cursor_file: None,
        }
    }

    /// Resumes the send position stored in `path`, if any.
    pub fn with_cursor_file(mut self, path: &Path) -> Result<Self, KeySupplyError> {
        if let Ok(text) = fs::read_to_string(path) {
            let pos = text.trim().parse().map_err(|_| KeySupplyError::Malformed("bootstrap cursor"))?;
            *self.next.get_mut().expect("cursor lock") = pos;
        }
        self.cursor_file = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn position(&self) -> u64 {
        *self.next.lock().expect("cursor lock")
    }

    fn receive(&self) -> Direction {
        match self.send {
            Direction::ToKsa => Direction::FromKsa,
            Direction::FromKsa => Direction::ToKsa,
        }
    }

    fn derive(&self, dir: Direction, pos: u64, len: u64) -> Vec<u8> {
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_stream(dir as u64);
        rng.set_word_pos((pos / 4) as u128);
        let mut out = vec![0u8; len as usize];
        rng.fill_bytes(&mut out);
        out
    }

    fn id(&self, dir: Direction, pos: u64, len: u64) -> KeyId {
        let mut id = [0u8; 16];
        id[0] = BOOTSTRAP_TAG;
        id[1] = dir as u8;
        id[2..6].copy_from_slice(&self.app_tag.to_be_bytes());
        id[6..12].copy_from_slice(&pos.to_be_bytes()[2..]);
        id[12..16].copy_from_slice(&(len as u32).to_be_bytes());
        KeyId(id)
    }
}

/// The application tag carried in bootstrap key ids.
pub fn app_tag(app: &str) -> u32 {
    crc32fast::hash(app.as_bytes())
}

/// The application tag of a bootstrap key id.
pub fn bootstrap_app_tag(id: &KeyId) -> Option<u32> {
    (id.0[0] == BOOTSTRAP_TAG).then(|| u32::from_be_bytes(id.0[2..6].try_into().expect("4 octets")))
}

impl KeyProvider for BootstrapProvider {
    fn request(&self, _peer_app: &str, octets: u64, _purpose: &str) -> Result<Arc<KeyMaterial>, KeySupplyError> {
        if octets > u32::MAX as u64 {
            return Err(KeySupplyError::Config("bootstrap key too long".into()));
        }
        let pos = {
            let mut next = self.next.lock().expect("cursor lock");
            let pos = *next;
            // Keep positions word aligned for random access.
            let after = pos + octets.div_ceil(4) * 4;
            if after >= 1 << 48 {
                return Err(KeySupplyError::InsufficientKey {
                    link: "bootstrap".into(),
                    needed: octets,
                    available: 0,
                });
            }
            if let Some(path) = &self.cursor_file {
                fs::write(path, after.to_string())?;
            }
            *next = after;
            pos
        };
        let id = self.id(self.send, pos, octets);
        Ok(KeyMaterial::new(id, self.derive(self.send, pos, octets)))
    }

    fn fetch(&self, id: &KeyId) -> Result<Arc<KeyMaterial>, KeySupplyError> {
        let b = &id.0;
        if b[0] != BOOTSTRAP_TAG || b[1] != self.receive() as u8 || bootstrap_app_tag(id) != Some(self.app_tag) {
            return Err(KeySupplyError::UnknownKey(*id));
        }
        let mut pos = [0u8; 8];
        pos[2..].copy_from_slice(&b[6..12]);
        let pos = u64::from_be_bytes(pos);
        let len = u32::from_be_bytes(b[12..16].try_into().expect("4 octets")) as u64;
        if pos % 4 != 0 {
            return Err(KeySupplyError::UnknownKey(*id));
        }
        Ok(KeyMaterial::new(*id, self.derive(self.receive(), pos, len)))
    }

    fn consumed(&self, _id: &KeyId) {}
}

/// A key supply request as carried on the bootstrap channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KsaMessage {
    Request { peer_app: String, octets: u64, purpose: String },
    Fetch(KeyId),
    Consumed(KeyId),
}

fn short_string(out: &mut Vec<u8>, s: &str) {
    let b = &s.as_bytes()[..s.len().min(255)];
    out.push(b.len() as u8);
    out.extend_from_slice(b);
}

impl KsaMessage {
    pub fn encode(&self) -> (u8, Vec<u8>) {
        match self {
            KsaMessage::Request { peer_app, octets, purpose } => {
                let mut out = Vec::new();
                short_string(&mut out, peer_app);
                out.extend_from_slice(&octets.to_be_bytes());
                short_string(&mut out, purpose);
                (KSA_REQUEST, out)
            }
            KsaMessage::Fetch(id) => (KSA_FETCH, id.0.to_vec()),
            KsaMessage::Consumed(id) => (KSA_CONSUMED, id.0.to_vec()),
        }
    }

    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Self, KeySupplyError> {
        let bad = KeySupplyError::Malformed("key supply request");
        let id = |p: &[u8]| p.try_into().map(KeyId).map_err(|_| KeySupplyError::Malformed("key id"));
        match msg_type {
            KSA_REQUEST => {
                let mut p = payload;
                let string = |p: &mut &[u8]| -> Option<String> {
                    let (&len, rest) = p.split_first()?;
                    let s = rest.get(..len as usize)?;
                    *p = &rest[len as usize..];
                    String::from_utf8(s.to_vec()).ok()
                };
                let peer_app = string(&mut p).ok_or(KeySupplyError::Malformed("peer application"))?;
                let octets = u64::from_be_bytes(p.get(..8).ok_or(KeySupplyError::Malformed("octet count"))?.try_into().expect("8"));
                p = &p[8..];
                let purpose = string(&mut p).ok_or(KeySupplyError::Malformed("purpose"))?;
                if !p.is_empty() {
                    return Err(bad);
                }
                Ok(KsaMessage::Request { peer_app, octets, purpose })
            }
            KSA_FETCH => Ok(KsaMessage::Fetch(id(payload)?)),
            KSA_CONSUMED => Ok(KsaMessage::Consumed(id(payload)?)),
            _ => Err(bad),
        }
    }
}

fn encode_error(e: &KeySupplyError) -> Vec<u8> {
    let code = match e {
        KeySupplyError::InsufficientKey { .. } => ERR_INSUFFICIENT,
        KeySupplyError::Unauthorized(_) => ERR_UNAUTHORIZED,
        KeySupplyError::UnknownKey(_) => ERR_UNKNOWN,
        KeySupplyError::Expired(_) => ERR_EXPIRED,
        KeySupplyError::Consumed(_) => ERR_CONSUMED,
        _ => ERR_OTHER,
    };
    let mut out = code.to_be_bytes().to_vec();
    out.extend_from_slice(e.to_string().as_bytes());
    out
}

fn decode_error(payload: &[u8], id: Option<KeyId>) -> KeySupplyError {
    let (code, detail) = match payload {
        [a, b, rest @ ..] => (u16::from_be_bytes([*a, *b]), String::from_utf8_lossy(rest).into_owned()),
        _ => return KeySupplyError::Malformed("key supply error"),
    };
    match (code, id) {
        (ERR_INSUFFICIENT, _) => KeySupplyError::InsufficientKey {
            link: detail,
            needed: 0,
            available: 0,
        },
        (ERR_UNAUTHORIZED, _) => KeySupplyError::Unauthorized(detail),
        (ERR_UNKNOWN, Some(id)) => KeySupplyError::UnknownKey(id),
        (ERR_EXPIRED, Some(id)) => KeySupplyError::Expired(id),
        (ERR_CONSUMED, Some(id)) => KeySupplyError::Consumed(id),
        _ => KeySupplyError::Channel(detail),
    }
}

/// The supply agent at one node, serving applications registered there.
pub struct KsaServer {
    network: Arc<KeyNetwork>,
    node: NodeId,
    endpoints: BTreeMap<u32, (String, SecureEndpoint)>,
}

impl KsaServer {
    /// `apps` pairs application names with their bootstrap seeds. With a
    /// state directory the server's send cursors persist across restarts.
    pub fn new(
        network: Arc<KeyNetwork>,
        node: NodeId,
        apps: &[(String, [u8; 32])],
        state_dir: Option<&Path>,
    ) -> Result<Self, KeySupplyError> {
        let mut endpoints = BTreeMap::new();
        for (app, seed) in apps {
            if network.config().apps.get(app) != Some(&node) {
                return Err(KeySupplyError::Unauthorized(app.clone()));
            }
            let mut provider = BootstrapProvider::new(app, *seed, Direction::FromKsa);
            if let Some(dir) = state_dir {
                fs::create_dir_all(dir)?;
                provider = provider.with_cursor_file(&dir.join(format!("{app}.ksa-cursor")))?;
            }
            let ep = SecureEndpoint::new(format!("ksa:{app}"), KSA_SENDER, Arc::new(provider));
            if endpoints.insert(app_tag(app), (app.clone(), ep)).is_some() {
                return Err(KeySupplyError::Config(format!("application tag collision for {app}")));
            }
        }
        Ok(Self { network, node, endpoints })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Whether this agent holds the bootstrap seed behind `app_tag`.
    pub fn serves(&self, app_tag: u32) -> bool {
        self.endpoints.contains_key(&app_tag)
    }

    /// Opens the frames of one request and returns the sealed reply.
    pub fn handle(&self, frames: &[Vec<u8>]) -> Result<Vec<Vec<u8>>, EndpointError> {
        let first = frames.first().ok_or(EndpointError::Fragment(0))?;
        let header = AuthFrame::decode(first)?.header;
        let (app, ep) = bootstrap_app_tag(&header.enc_key)
            .and_then(|tag| self.endpoints.get(&tag))
            .ok_or(KeySupplyError::UnknownKey(header.enc_key))?;
        let Incoming { msg_type, payload, .. } = ep.open_message(frames)?;
        let (reply_type, reply) = match KsaMessage::decode(msg_type, &payload).and_then(|m| self.serve(app, m)) {
            Ok(r) => r,
            Err(e) => (KSA_ERROR, encode_error(&e)),
        };
        ep.seal_message(app, reply_type, &reply, "bootstrap")
    }

    fn serve(&self, app: &str, msg: KsaMessage) -> Result<(u8, Vec<u8>), KeySupplyError> {
        match msg {
            KsaMessage::Request { peer_app, octets, purpose } => {
                let file = self.network.ksa_request(app, &peer_app, octets, &purpose)?;
                Ok((KSA_KEY, file.encode()))
            }
            KsaMessage::Fetch(id) => Ok((KSA_KEY, self.network.ksa_fetch(app, &id)?.encode())),
            KsaMessage::Consumed(id) => {
                self.network.mark_consumed(app, &id)?;
                Ok((KSA_ACK, Vec::new()))
            }
        }
    }
}

/// Carries one sealed request to a supply agent and returns its reply frames.
pub trait KsaTransport: Send + Sync {
    fn exchange(&self, frames: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, String>;
}

impl<F> KsaTransport for F
where
    F: Fn(Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, String> + Send + Sync,
{
    fn exchange(&self, frames: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, String> {
        self(frames)
    }
}

/// An application's remote view of its supply agent.
pub struct KsaClient<T> {
    app: String,
    endpoint: SecureEndpoint,
    transport: T,
}

impl<T: KsaTransport> KsaClient<T> {
    pub fn new(app: &str, seed: [u8; 32], cursor_file: Option<&Path>, transport: T) -> Result<Self, KeySupplyError> {
        let mut provider = BootstrapProvider::new(app, seed, Direction::ToKsa);
        if let Some(path) = cursor_file {
            provider = provider.with_cursor_file(path)?;
        }
        Ok(Self {
            app: app.to_string(),
            endpoint: SecureEndpoint::new(app, KSA_SENDER - 1, Arc::new(provider)),
            transport,
        })
    }

    fn call(&self, msg: KsaMessage, id: Option<KeyId>) -> Result<Incoming, KeySupplyError> {
        let (msg_type, payload) = msg.encode();
        let channel = |e: EndpointError| KeySupplyError::Channel(e.to_string());
        let frames = self
            .endpoint
            .seal_message("ksa", msg_type, &payload, "bootstrap")
            .map_err(channel)?;
        let reply = self.transport.exchange(frames).map_err(KeySupplyError::Channel)?;
        let reply = self.endpoint.open_message(&reply).map_err(channel)?;
        if reply.msg_type == KSA_ERROR {
            return Err(decode_error(&reply.payload, id));
        }
        Ok(reply)
    }

    fn key(&self, msg: KsaMessage, id: Option<KeyId>) -> Result<Arc<KeyMaterial>, KeySupplyError> {
        let reply = self.call(msg, id)?;
        if reply.msg_type != KSA_KEY {
            return Err(KeySupplyError::Malformed("key supply reply"));
        }
        Ok(material(&KeyFile::decode(&reply.payload)?))
    }
}

impl<T: KsaTransport> KeyProvider for KsaClient<T> {
    fn request(&self, peer_app: &str, octets: u64, purpose: &str) -> Result<Arc<KeyMaterial>, KeySupplyError> {
        let msg = KsaMessage::Request {
            peer_app: peer_app.to_string(),
            octets,
            purpose: purpose.to_string(),
        };
        self.key(msg, None)
    }

    fn fetch(&self, id: &KeyId) -> Result<Arc<KeyMaterial>, KeySupplyError> {
        self.key(KsaMessage::Fetch(*id), Some(*id))
    }

    fn consumed(&self, id: &KeyId) {
        if let Err(e) = self.call(KsaMessage::Consumed(*id), Some(*id)) {
            log::debug!("{}: consume {id}: {e}", self.app);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keysupply::{KeyNetworkConfig, Topology};

    fn network() -> Arc<KeyNetwork> {
        let cfg = KeyNetworkConfig::new(Topology::testbed(9))
            .with_app("alice", 1)
            .with_app("bob", 3);
        Arc::new(KeyNetwork::new(cfg).unwrap())
    }

    #[test]
    fn bootstrap_sides_agree() {
        let client = BootstrapProvider::new("alice", [7; 32], Direction::ToKsa);
        let server = BootstrapProvider::new("alice", [7; 32], Direction::FromKsa);
        let a = client.request("ksa", 10, "").unwrap();
        let b = client.request("ksa", 5, "").unwrap();
        assert_eq!(client.position(), 12 + 8);
        assert_eq!(server.fetch(&a.id).unwrap().octets, a.octets);
        assert_eq!(server.fetch(&b.id).unwrap().octets, b.octets);
        assert_ne!(a.octets[..5], b.octets[..]);
        // A client cannot fetch its own direction, nor another app's keys.
        assert!(client.fetch(&a.id).is_err());
        assert!(BootstrapProvider::new("bob", [7; 32], Direction::FromKsa).fetch(&a.id).is_err());
    }

    #[test]
    fn cursor_file_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cursor");
        let p = BootstrapProvider::new("a", [1; 32], Direction::ToKsa).with_cursor_file(&path).unwrap();
        let first = p.request("", 16, "").unwrap();
        drop(p);
        let p = BootstrapProvider::new("a", [1; 32], Direction::ToKsa).with_cursor_file(&path).unwrap();
        assert_ne!(p.request("", 16, "").unwrap().id, first.id);
    }

    #[test]
    fn request_messages_round_trip() {
        let m = KsaMessage::Request {
            peer_app: "bob".into(),
            octets: 1 << 40,
            purpose: "data".into(),
        };
        let (t, p) = m.encode();
        assert_eq!(KsaMessage::decode(t, &p).unwrap(), m);
        assert!(KsaMessage::decode(t, &p[..p.len() - 1]).is_err());
        assert!(KsaMessage::decode(KSA_FETCH, &[0; 15]).is_err());
    }

    #[test]
    fn framed_channel_matches_direct_access() {
        let net = network();
        let server = Arc::new(KsaServer::new(net.clone(), 1, &[("alice".into(), [3; 32])], None).unwrap());
        let s = server.clone();
        let client = KsaClient::new("alice", [3; 32], None, move |f: Vec<Vec<u8>>| {
            s.handle(&f).map_err(|e| e.to_string())
        })
        .unwrap();
        let key = client.request("bob", 3000, "test").unwrap();
        let bob = DirectKsa::new(net.clone(), "bob");
        assert_eq!(bob.fetch(&key.id).unwrap().octets, key.octets);
        assert_eq!(client.fetch(&key.id).unwrap().octets, key.octets);
        client.consumed(&key.id);
        assert!(matches!(client.fetch(&key.id), Err(KeySupplyError::Consumed(_))));
        assert!(matches!(
            client.request("nobody", 10, "t"),
            Err(KeySupplyError::Unauthorized(_))
        ));
    }

    #[test]
    fn wrong_seed_is_refused() {
        let net = network();
        let server = KsaServer::new(net, 1, &[("alice".into(), [3; 32])], None).unwrap();
        let client = KsaClient::new("alice", [4; 32], None, move |f: Vec<Vec<u8>>| {
            server.handle(&f).map_err(|e| e.to_string())
        })
        .unwrap();
        assert!(matches!(client.request("bob", 10, "t"), Err(KeySupplyError::Channel(_))));
    }

    #[test]
    fn apps_are_served_only_at_their_node() {
        assert!(KsaServer::new(network(), 2, &[("alice".into(), [0; 32])], None).is_err());
    }
}
