//! Messages exchanged between the owner and storage servers, carried as
//! frame payloads. Integers are big-endian; field elements use the fixed
//! little-endian width of their field, preceded by the exponent.

use std::fmt;

use qss_core::{DataId, FieldElement, MersennePrime, OwnerId, Quorum, SchemeParams};
use thiserror::Error;

pub const STORE_SHARES: u8 = 1;
pub const STORE_ACK: u8 = 2;
pub const PRECOMP_CONTRIB: u8 = 3;
pub const PRECOMP_REPLY: u8 = 4;
pub const RECON_REQUEST: u8 = 5;
pub const RECON_RESPONSE: u8 = 6;
pub const ERROR: u8 = 7;
pub const PRECOMP_TRIGGER: u8 = 8;
pub const PRECOMP_COMMIT: u8 = 9;
pub const PRECOMP_ABORT: u8 = 10;
pub const DELETE_BUNDLE: u8 = 11;
pub const PRECOMPUTE: u8 = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed message: {0}")]
pub struct WireError(pub String);

fn bad(what: impl Into<String>) -> WireError {
    WireError(what.into())
}

/// A pre-computation round, named by the server that started it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoundId {
    pub initiator: u32,
    pub seq: u64,
}

/// The l + 1 sets of one attempt within a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId {
    pub round: RoundId,
    pub attempt: u32,
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:x}:{}", self.round.initiator, self.round.seq, self.attempt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Malformed = 1,
    Duplicate = 2,
    UnknownData = 3,
    ImproperQuorum = 4,
    NotInQuorum = 5,
    RateLimited = 6,
    PoolExhausted = 7,
    SlotUnavailable = 8,
    SlotConsumed = 9,
    PrecomputeFailed = 10,
    Unauthorized = 11,
    KeyExhausted = 12,
    Internal = 13,
    /// A server could not reach another member; the detail is its index.
    PeerUnreachable = 14,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        use ErrorCode::*;
        Some(match v {
            1 => Malformed,
            2 => Duplicate,
            3 => UnknownData,
            4 => ImproperQuorum,
            5 => NotInQuorum,
            6 => RateLimited,
            7 => PoolExhausted,
            8 => SlotUnavailable,
            9 => SlotConsumed,
            10 => PrecomputeFailed,
            11 => Unauthorized,
            12 => KeyExhausted,
            13 => Internal,
            14 => PeerUnreachable,
            _ => return None,
        })
    }

    /// Conditions a client may clear by trying again.
    pub fn is_retryable(self) -> bool {
        matches!(
            self,
            ErrorCode::PoolExhausted | ErrorCode::SlotUnavailable | ErrorCode::KeyExhausted
        )
    }
}

/// One server's registration bundle, with the scheme parameters it was made for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreShares {
    pub owner: OwnerId,
    pub data_id: DataId,
    pub server: u32,
    pub n: u32,
    pub t: u32,
    pub byte_len: u64,
    pub overwrite: bool,
    pub password_share: FieldElement,
    /// l data block shares followed by the MAC block share.
    pub data_shares: Vec<FieldElement>,
}

impl StoreShares {
    pub fn params(&self) -> Result<SchemeParams, WireError> {
        SchemeParams::new(self.n, self.t, self.password_share.field().clone()).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecompTrigger {
    pub round: RoundId,
    pub owner: OwnerId,
    pub data_id: DataId,
    pub n: u32,
    pub members: Quorum,
    pub attempts: u32,
    /// Sets per attempt, l + 1.
    pub sets: u32,
}

/// Sender `from`'s randomizer and zero shares for the recipient, one pair
/// per set, attempt-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecompContrib {
    pub trigger: PrecompTrigger,
    pub from: u32,
    pub pairs: Vec<(FieldElement, FieldElement)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconRequest {
    pub owner: OwnerId,
    pub data_id: DataId,
    pub n: u32,
    pub quorum: Quorum,
    /// None asks the server to bind the oldest free slot.
    pub slot: Option<SlotId>,
    pub password_share: FieldElement,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconResponse {
    pub owner: OwnerId,
    pub data_id: DataId,
    pub server: u32,
    pub slot: SlotId,
    pub byte_len: u64,
    pub first_block: u32,
    pub values: Vec<FieldElement>,
}

/// Asks a server to start a pre-computation round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecomputeRequest {
    pub owner: OwnerId,
    pub data_id: DataId,
    pub n: u32,
    pub members: Quorum,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    StoreShares(StoreShares),
    StoreAck { owner: OwnerId, data_id: DataId },
    PrecompContrib(PrecompContrib),
    PrecompReply,
    ReconRequest(ReconRequest),
    ReconResponse(ReconResponse),
    Error { code: ErrorCode, detail: String },
    PrecompTrigger(PrecompTrigger),
    PrecompCommit(RoundId),
    PrecompAbort(RoundId),
    DeleteBundle { owner: OwnerId, data_id: DataId },
    Precompute(PrecomputeRequest),
}

impl Message {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Message::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn msg_type(&self) -> u8 {
        match self {
            Message::StoreShares(_) => STORE_SHARES,
            Message::StoreAck { .. } => STORE_ACK,
            Message::PrecompContrib(_) => PRECOMP_CONTRIB,
            Message::PrecompReply => PRECOMP_REPLY,
            Message::ReconRequest(_) => RECON_REQUEST,
            Message::ReconResponse(_) => RECON_RESPONSE,
            Message::Error { .. } => ERROR,
            Message::PrecompTrigger(_) => PRECOMP_TRIGGER,
            Message::PrecompCommit(_) => PRECOMP_COMMIT,
            Message::PrecompAbort(_) => PRECOMP_ABORT,
            Message::DeleteBundle { .. } => DELETE_BUNDLE,
            Message::Precompute(_) => PRECOMPUTE,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Message::StoreShares(s) => {
                w.ids(s.owner, s.data_id);
                w.u32(s.server);
                w.u32(s.n);
                w.u32(s.t);
                w.u64(s.byte_len);
                w.u8(s.overwrite as u8);
                w.field(s.password_share.field());
                w.element(&s.password_share);
                w.elements(&s.data_shares);
            }
            Message::StoreAck { owner, data_id } | Message::DeleteBundle { owner, data_id } => w.ids(*owner, *data_id),
            Message::PrecompContrib(c) => {
                w.trigger(&c.trigger);
                w.u32(c.from);
                w.u32(c.pairs.len() as u32);
                if let Some((r, _)) = c.pairs.first() {
                    w.field(r.field());
                }
                for (r, z) in &c.pairs {
                    w.element(r);
                    w.element(z);
                }
            }
            Message::PrecompReply => {}
            Message::ReconRequest(r) => {
                w.ids(r.owner, r.data_id);
                w.quorum(r.n, &r.quorum);
                match r.slot {
                    Some(s) => {
                        w.u8(1);
                        w.slot(s);
                    }
                    None => w.u8(0),
                }
                w.field(r.password_share.field());
                w.element(&r.password_share);
            }
            Message::ReconResponse(r) => {
                w.ids(r.owner, r.data_id);
                w.u32(r.server);
                w.slot(r.slot);
                w.u64(r.byte_len);
                w.u32(r.first_block);
                w.elements(&r.values);
            }
            Message::Error { code, detail } => {
                w.u16(*code as u16);
                w.0.extend_from_slice(detail.as_bytes());
            }
            Message::PrecompTrigger(t) => w.trigger(t),
            Message::PrecompCommit(r) | Message::PrecompAbort(r) => w.round(*r),
            Message::Precompute(p) => {
                w.ids(p.owner, p.data_id);
                w.quorum(p.n, &p.members);
                w.u32(p.attempts);
            }
        }
        w.0
    }

    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader(payload);
        let msg = match msg_type {
            STORE_SHARES => {
                let (owner, data_id) = r.ids()?;
                let server = r.u32()?;
                let n = r.u32()?;
                let t = r.u32()?;
                let byte_len = r.u64()?;
                let overwrite = match r.u8()? {
                    0 => false,
                    1 => true,
                    _ => return Err(bad("overwrite flag")),
                };
                let field = r.field()?;
                let password_share = r.element(&field)?;
                let data_shares = r.elements(&field)?;
                Message::StoreShares(StoreShares {
                    owner,
                    data_id,
                    server,
                    n,
                    t,
                    byte_len,
                    overwrite,
                    password_share,
                    data_shares,
                })
            }
            STORE_ACK => {
                let (owner, data_id) = r.ids()?;
                Message::StoreAck { owner, data_id }
            }
            DELETE_BUNDLE => {
                let (owner, data_id) = r.ids()?;
                Message::DeleteBundle { owner, data_id }
            }
            PRECOMP_CONTRIB => {
                let trigger = r.trigger()?;
                let from = r.u32()?;
                let count = r.u32()? as usize;
                let mut pairs = Vec::with_capacity(count.min(1 << 16));
                if count > 0 {
                    let field = r.field()?;
                    for _ in 0..count {
                        pairs.push((r.element(&field)?, r.element(&field)?));
                    }
                }
                Message::PrecompContrib(PrecompContrib { trigger, from, pairs })
            }
            PRECOMP_REPLY => Message::PrecompReply,
            RECON_REQUEST => {
                let (owner, data_id) = r.ids()?;
                let (n, quorum) = r.quorum()?;
                let slot = match r.u8()? {
                    0 => None,
                    1 => Some(r.slot()?),
                    _ => return Err(bad("slot flag")),
                };
                let field = r.field()?;
                let password_share = r.element(&field)?;
                Message::ReconRequest(ReconRequest {
                    owner,
                    data_id,
                    n,
                    quorum,
                    slot,
                    password_share,
                })
            }
            RECON_RESPONSE => {
                let (owner, data_id) = r.ids()?;
                let server = r.u32()?;
                let slot = r.slot()?;
                let byte_len = r.u64()?;
                let first_block = r.u32()?;
                let values = r.any_elements()?;
                Message::ReconResponse(ReconResponse {
                    owner,
                    data_id,
                    server,
                    slot,
                    byte_len,
                    first_block,
                    values,
                })
            }
            ERROR => {
                let code = r.u16()?;
                let code = ErrorCode::from_u16(code).ok_or_else(|| bad(format!("error code {code}")))?;
                let detail = String::from_utf8_lossy(r.rest()).into_owned();
                Message::Error { code, detail }
            }
            PRECOMP_TRIGGER => Message::PrecompTrigger(r.trigger()?),
            PRECOMP_COMMIT => Message::PrecompCommit(r.round()?),
            PRECOMP_ABORT => Message::PrecompAbort(r.round()?),
            PRECOMPUTE => {
                let (owner, data_id) = r.ids()?;
                let (n, members) = r.quorum()?;
                let attempts = r.u32()?;
                Message::Precompute(PrecomputeRequest {
                    owner,
                    data_id,
                    n,
                    members,
                    attempts,
                })
            }
            other => return Err(bad(format!("message type {other}"))),
        };
        if !r.0.is_empty() {
            return Err(bad("trailing octets"));
        }
        Ok(msg)
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn ids(&mut self, owner: OwnerId, data: DataId) {
        self.u32(owner.0);
        self.u64(data.0);
    }
    fn field(&mut self, f: &MersennePrime) {
        self.u32(f.exponent());
    }
    fn element(&mut self, e: &FieldElement) {
        self.0.extend_from_slice(&e.to_bytes());
    }
    fn elements(&mut self, es: &[FieldElement]) {
        let field = es.first().map(|e| e.field().exponent()).unwrap_or(0);
        self.u32(field);
        self.u32(es.len() as u32);
        for e in es {
            self.element(e);
        }
    }
    fn quorum(&mut self, n: u32, q: &Quorum) {
        self.u32(n);
        self.0.extend_from_slice(&q.to_bitmap(n));
    }
    fn round(&mut self, r: RoundId) {
        self.u32(r.initiator);
        self.u64(r.seq);
    }
    fn slot(&mut self, s: SlotId) {
        self.round(s.round);
        self.u32(s.attempt);
    }
    fn trigger(&mut self, t: &PrecompTrigger) {
        self.round(t.round);
        self.ids(t.owner, t.data_id);
        self.quorum(t.n, &t.members);
        self.u32(t.attempts);
        self.u32(t.sets);
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(bad("truncated"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.0)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }
    fn ids(&mut self) -> Result<(OwnerId, DataId), WireError> {
        Ok((OwnerId(self.u32()?), DataId(self.u64()?)))
    }
    fn field(&mut self) -> Result<MersennePrime, WireError> {
        let m = self.u32()?;
        MersennePrime::new(m).map_err(|e| bad(e.to_string()))
    }
    fn element(&mut self, f: &MersennePrime) -> Result<FieldElement, WireError> {
        f.element_from_bytes(self.take(f.element_len())?).map_err(|e| bad(e.to_string()))
    }
    /// An element list that names its own field.
    fn any_elements(&mut self) -> Result<Vec<FieldElement>, WireError> {
        let m = self.u32()?;
        let count = self.u32()? as usize;
        if count == 0 {
            return Ok(Vec::new());
        }
        let f = MersennePrime::new(m).map_err(|e| bad(e.to_string()))?;
        if self.0.len() < count.saturating_mul(f.element_len()) {
            return Err(bad("truncated"));
        }
        (0..count).map(|_| self.element(&f)).collect()
    }
    fn elements(&mut self, f: &MersennePrime) -> Result<Vec<FieldElement>, WireError> {
        let m = self.u32()?;
        let count = self.u32()? as usize;
        if count == 0 {
            return Ok(Vec::new());
        }
        if m != f.exponent() {
            return Err(bad("mixed fields"));
        }
        if self.0.len() < count.saturating_mul(f.element_len()) {
            return Err(bad("truncated"));
        }
        (0..count).map(|_| self.element(f)).collect()
    }
    fn quorum(&mut self) -> Result<(u32, Quorum), WireError> {
        let n = self.u32()?;
        if n == 0 || n > 4096 {
            return Err(bad("server count"));
        }
        let bitmap = self.take((n as usize).div_ceil(8))?;
        Ok((n, Quorum::from_bitmap(bitmap, n).map_err(|e| bad(e.to_string()))?))
    }
    fn round(&mut self) -> Result<RoundId, WireError> {
        Ok(RoundId {
            initiator: self.u32()?,
            seq: self.u64()?,
        })
    }
    fn slot(&mut self) -> Result<SlotId, WireError> {
        Ok(SlotId {
            round: self.round()?,
            attempt: self.u32()?,
        })
    }
    fn trigger(&mut self) -> Result<PrecompTrigger, WireError> {
        let round = self.round()?;
        let (owner, data_id) = self.ids()?;
        let (n, members) = self.quorum()?;
        Ok(PrecompTrigger {
            round,
            owner,
            data_id,
            n,
            members,
            attempts: self.u32()?,
            sets: self.u32()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f521() -> MersennePrime {
        MersennePrime::new(521).unwrap()
    }

    fn samples() -> Vec<Message> {
        let f = f521();
        let round = RoundId { initiator: 2, seq: 9 };
        let slot = SlotId { round, attempt: 3 };
        let members = Quorum::new(vec![1, 2, 4], 4).unwrap();
        let trigger = PrecompTrigger {
            round,
            owner: OwnerId(5),
            data_id: DataId(77),
            n: 4,
            members: members.clone(),
            attempts: 2,
            sets: 4,
        };
        vec![
            Message::StoreShares(StoreShares {
                owner: OwnerId(5),
                data_id: DataId(77),
                server: 3,
                n: 4,
                t: 1,
                byte_len: 10,
                overwrite: true,
                password_share: f.from_u64(11),
                data_shares: vec![f.from_u64(1), f.from_u64(2)],
            }),
            Message::PrecompContrib(PrecompContrib {
                trigger: trigger.clone(),
                from: 4,
                pairs: vec![(f.from_u64(3), f.from_u64(4))],
            }),
            Message::ReconRequest(ReconRequest {
                owner: OwnerId(5),
                data_id: DataId(77),
                n: 4,
                quorum: members.clone(),
                slot: Some(slot),
                password_share: f.from_u64(12),
            }),
            Message::ReconResponse(ReconResponse {
                owner: OwnerId(5),
                data_id: DataId(77),
                server: 1,
                slot,
                byte_len: 10,
                first_block: 0,
                values: vec![f.from_u64(8)],
            }),
            Message::error(ErrorCode::SlotConsumed, "gone"),
            Message::PrecompTrigger(trigger),
            Message::PrecompAbort(round),
            Message::Precompute(PrecomputeRequest {
                owner: OwnerId(5),
                data_id: DataId(77),
                n: 4,
                members,
                attempts: 1,
            }),
        ]
    }

    #[test]
    fn messages_decode_to_themselves() {
        for m in samples() {
            assert_eq!(Message::decode(m.msg_type(), &m.encode()).unwrap(), m);
        }
    }

    #[test]
    fn truncation_and_unknown_types_are_rejected() {
        for m in samples() {
            let bytes = m.encode();
            if matches!(m, Message::Error { .. }) {
                continue;
            }
            assert!(Message::decode(m.msg_type(), &bytes[..bytes.len() - 1]).is_err(), "{m:?}");
        }
        assert!(Message::decode(0x3f, &[]).is_err());
    }

    #[test]
    fn error_codes_are_stable() {
        for v in 1..=14u16 {
            assert_eq!(ErrorCode::from_u16(v).unwrap() as u16, v);
        }
        assert_eq!(ErrorCode::from_u16(15), None);
        assert!(ErrorCode::SlotUnavailable.is_retryable());
        assert!(!ErrorCode::ImproperQuorum.is_retryable());
    }
}
