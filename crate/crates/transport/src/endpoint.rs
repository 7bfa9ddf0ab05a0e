//! Message-level sealing on top of frames.
//!
//! Each outgoing message gets its own key file from the key supply, sized
//! for the whole message: payload octets for the pad followed by 16 octets
//! per frame for tag keys. Messages longer than one frame are split; every
//! fragment but the last has the high bit of its message type set.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::RngCore;
use thiserror::Error;

use crate::frame::{open, seal, AuthFrame, FrameError, FrameFields, KeyMaterial, KeystreamCursor, ReceiverState, MAX_PAYLOAD};
use crate::keysupply::{KeyId, KeySupplyError};
use crate::wc::TAG_KEY_OCTETS;

/// Set on every fragment that is followed by another.
pub const MORE_FRAGMENTS: u8 = 0x80;

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Keys(#[from] KeySupplyError),
    #[error("message type {0:#04x} uses the fragment bit")]
    ReservedType(u8),
    #[error("fragment out of order in session {0:016x}")]
    Fragment(u64),
}

impl EndpointError {
    /// Key shortage that may clear after more key is generated.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EndpointError::Keys(e) if e.is_retryable())
    }
}

/// Source of per-message keys, normally a key supply agent.
pub trait KeyProvider: Send + Sync {
    /// A fresh key of `octets` octets shared with `peer_app`.
    fn request(&self, peer_app: &str, octets: u64, purpose: &str) -> Result<Arc<KeyMaterial>, KeySupplyError>;
    /// The local copy of a key another party requested.
    fn fetch(&self, id: &KeyId) -> Result<Arc<KeyMaterial>, KeySupplyError>;
    /// Reports that every octet of the local copy has been used.
    fn consumed(&self, id: &KeyId);
}

/// Sender-side record of every key range used for encryption or tagging.
#[derive(Debug, Default)]
pub struct UsageAudit {
    ranges: Mutex<Vec<(KeyId, u64, u64)>>,
}

impl UsageAudit {
    pub fn record(&self, key: KeyId, start: u64, len: u64) {
        if len > 0 {
            self.ranges.lock().expect("audit lock").push((key, start, start + len));
        }
    }

    /// Number of ranges that overlap an earlier one of the same key.
    pub fn overlaps(&self) -> usize {
        let mut r = self.ranges.lock().expect("audit lock").clone();
        r.sort();
        r.windows(2).filter(|w| w[0].0 == w[1].0 && w[1].1 < w[0].2).count()
    }

    pub fn total_octets(&self) -> u64 {
        self.ranges.lock().expect("audit lock").iter().map(|(_, s, e)| e - s).sum()
    }

    pub fn len(&self) -> usize {
        self.ranges.lock().expect("audit lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A complete received message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Incoming {
    pub sender: u16,
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

struct Partial {
    msg_type: u8,
    next_sequence: u64,
    data: Vec<u8>,
}

#[derive(Default)]
struct Inner {
    receiver: ReceiverState,
    keys: HashMap<KeyId, Arc<KeyMaterial>>,
    partial: HashMap<(u64, u16), Partial>,
}

/// One application's sealing and opening state.
pub struct SecureEndpoint {
    app: String,
    sender: u16,
    provider: Arc<dyn KeyProvider>,
    session_prefix: u64,
    counter: AtomicU64,
    sealed: AtomicU64,
    audit: Option<Arc<UsageAudit>>,
    inner: Mutex<Inner>,
}

impl SecureEndpoint {
    pub fn new(app: impl Into<String>, sender: u16, provider: Arc<dyn KeyProvider>) -> Self {
        Self {
            app: app.into(),
            sender,
            provider,
            session_prefix: (rand::thread_rng().next_u32() as u64) << 32,
            counter: AtomicU64::new(0),
            sealed: AtomicU64::new(0),
            audit: None,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn with_audit(mut self, audit: Arc<UsageAudit>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn app(&self) -> &str {
        &self.app
    }

    pub fn sender(&self) -> u16 {
        self.sender
    }

    /// Key octets spent on outgoing frames so far.
    pub fn sealed_octets(&self) -> u64 {
        self.sealed.load(Ordering::SeqCst)
    }

    /// Key octets one message of `len` payload octets costs.
    pub fn message_key_octets(len: usize) -> u64 {
        let frames = len.div_ceil(MAX_PAYLOAD).max(1);
        (len + frames * TAG_KEY_OCTETS) as u64
    }

    /// Seals a message for `peer_app`; returns encoded frames in order.
    pub fn seal_message(
        &self,
        peer_app: &str,
        msg_type: u8,
        payload: &[u8],
        purpose: &str,
    ) -> Result<Vec<Vec<u8>>, EndpointError> {
        if msg_type & MORE_FRAGMENTS != 0 {
            return Err(EndpointError::ReservedType(msg_type));
        }
        let chunks: Vec<&[u8]> = if payload.is_empty() {
            vec![&[]]
        } else {
            payload.chunks(MAX_PAYLOAD).collect()
        };
        let total = Self::message_key_octets(payload.len());
        let key = self.provider.request(peer_app, total, purpose)?;
        let pad_len = payload.len() as u64;
        let mut enc = KeystreamCursor::new(key.clone(), 0, pad_len);
        let mut mac = KeystreamCursor::new(key.clone(), pad_len, total);
        let session = self.session_prefix | (self.counter.fetch_add(1, Ordering::SeqCst) & 0xffff_ffff);
        let mut frames = Vec::with_capacity(chunks.len());
        let last = chunks.len() - 1;
        for (i, chunk) in chunks.into_iter().enumerate() {
            let fields = FrameFields {
                msg_type: if i == last { msg_type } else { msg_type | MORE_FRAGMENTS },
                sender: self.sender,
                session,
                sequence: i as u64,
            };
            let frame = seal(chunk, fields, &mut enc, &mut mac)?;
            if let Some(audit) = &self.audit {
                audit.record(key.id, frame.header.enc_offset, chunk.len() as u64);
                audit.record(key.id, frame.header.mac_offset, TAG_KEY_OCTETS as u64);
            }
            frames.push(frame.encode());
        }
        self.sealed.fetch_add(total, Ordering::SeqCst);
        self.provider.consumed(&key.id);
        Ok(frames)
    }

    fn key(&self, id: &KeyId) -> Result<Arc<KeyMaterial>, EndpointError> {
        if let Some(k) = self.inner.lock().expect("endpoint lock").keys.get(id) {
            return Ok(k.clone());
        }
        let k = self.provider.fetch(id)?;
        self.inner.lock().expect("endpoint lock").keys.insert(*id, k.clone());
        Ok(k)
    }

    /// Opens one frame; returns the message once its last fragment arrives.
    pub fn open_frame(&self, bytes: &[u8]) -> Result<Option<Incoming>, EndpointError> {
        let frame = AuthFrame::decode(bytes)?;
        let h = &frame.header;
        let enc = self.key(&h.enc_key)?;
        let mac = if h.mac_key == h.enc_key { enc.clone() } else { self.key(&h.mac_key)? };
        let mut inner = self.inner.lock().expect("endpoint lock");
        let (msg_type, plaintext) = open(
            &frame,
            |id| {
                if *id == enc.id {
                    Ok(enc.clone())
                } else if *id == mac.id {
                    Ok(mac.clone())
                } else {
                    Err(FrameError::UnknownKey(*id))
                }
            },
            &mut inner.receiver,
        )?;
        for k in [&enc, &mac] {
            if inner.receiver.used_octets(&k.id) == k.len() && inner.keys.remove(&k.id).is_some() {
                inner.receiver.forget_key(&k.id);
                self.provider.consumed(&k.id);
            }
        }
        let stream = (h.session, h.sender);
        let base = msg_type & !MORE_FRAGMENTS;
        let mut partial = match inner.partial.remove(&stream) {
            Some(p) if p.msg_type == base && p.next_sequence == h.sequence => p,
            Some(_) => return Err(EndpointError::Fragment(h.session)),
            None if h.sequence == 0 => Partial {
                msg_type: base,
                next_sequence: 0,
                data: Vec::new(),
            },
            None => return Err(EndpointError::Fragment(h.session)),
        };
        partial.data.extend_from_slice(&plaintext);
        partial.next_sequence += 1;
        if msg_type & MORE_FRAGMENTS != 0 {
            inner.partial.insert(stream, partial);
            return Ok(None);
        }
        Ok(Some(Incoming {
            sender: h.sender,
            msg_type: base,
            payload: partial.data,
        }))
    }

    /// Opens a sequence of frames that must form exactly one message.
    pub fn open_message(&self, frames: &[Vec<u8>]) -> Result<Incoming, EndpointError> {
        let mut out = None;
        for (i, f) in frames.iter().enumerate() {
            let m = self.open_frame(f)?;
            if m.is_some() && i + 1 != frames.len() {
                return Err(EndpointError::Fragment(0));
            }
            out = m;
        }
        out.ok_or(EndpointError::Fragment(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keysupply::{KeyNetwork, KeyNetworkConfig, Topology};
    use crate::ksa::DirectKsa;

    fn pair() -> (SecureEndpoint, SecureEndpoint, Arc<KeyNetwork>, Arc<UsageAudit>) {
        let cfg = KeyNetworkConfig::new(Topology::testbed(5))
            .with_app("alice", 1)
            .with_app("bob", 4);
        let net = Arc::new(KeyNetwork::new(cfg).unwrap());
        let audit = Arc::new(UsageAudit::default());
        let a = SecureEndpoint::new("alice", 1, Arc::new(DirectKsa::new(net.clone(), "alice"))).with_audit(audit.clone());
        let b = SecureEndpoint::new("bob", 2, Arc::new(DirectKsa::new(net.clone(), "bob"))).with_audit(audit.clone());
        (a, b, net, audit)
    }

    #[test]
    fn fragmented_round_trip() {
        let (a, b, net, audit) = pair();
        let payload: Vec<u8> = (0..4000u32).map(|i| (i * 31) as u8).collect();
        let frames = a.seal_message("bob", 6, &payload, "test").unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0][5], 6 | MORE_FRAGMENTS);
        assert_eq!(frames[2][5], 6);
        assert!(b.open_frame(&frames[0]).unwrap().is_none());
        assert!(b.open_frame(&frames[1]).unwrap().is_none());
        let msg = b.open_frame(&frames[2]).unwrap().unwrap();
        assert_eq!((msg.sender, msg.msg_type, msg.payload), (1, 6, payload));
        assert_eq!(a.sealed_octets(), 4000 + 3 * 16);
        assert_eq!(net.delivered_total(), 4000 + 3 * 16);
        assert_eq!(audit.overlaps(), 0);
        assert_eq!(audit.total_octets(), 4048);
    }

    #[test]
    fn empty_message_is_one_frame() {
        let (a, b, _, _) = pair();
        let frames = a.seal_message("bob", 2, &[], "t").unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(b.open_message(&frames).unwrap().payload, Vec::<u8>::new());
    }

    #[test]
    fn replayed_messages_are_rejected() {
        let (a, b, _, _) = pair();
        let frames = a.seal_message("bob", 2, b"once", "t").unwrap();
        b.open_message(&frames).unwrap();
        // The key file is spent, so the replay cannot even be verified.
        assert!(b.open_message(&frames).is_err());
    }

    #[test]
    fn fragments_must_arrive_in_order() {
        let (a, b, _, _) = pair();
        let frames = a.seal_message("bob", 2, &[7u8; 3100], "t").unwrap();
        assert!(matches!(b.open_frame(&frames[1]), Err(EndpointError::Fragment(_))));
    }

    #[test]
    fn reserved_type_bit() {
        let (a, _, _, _) = pair();
        assert!(matches!(a.seal_message("bob", 0x81, b"x", "t"), Err(EndpointError::ReservedType(0x81))));
    }

    #[test]
    fn key_cost_per_message() {
        assert_eq!(SecureEndpoint::message_key_octets(0), 16);
        assert_eq!(SecureEndpoint::message_key_octets(1500), 1516);
        assert_eq!(SecureEndpoint::message_key_octets(1501), 1501 + 32);
    }
}
