//! Authenticated one-time-pad frames.
//!
//! Wire layout (big-endian): magic "QSS1" | version | msg_type | sender (2)
//! | session (8) | sequence (8) | enc key id (16) | enc offset (8) | mac key
//! id (16) | mac offset (8) | payload length (2) | ciphertext | tag (8).
//! The header travels in clear; the tag covers header and ciphertext.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;
use zeroize::Zeroizing;

use crate::keysupply::KeyId;
use crate::wc::{wc_tag, TAG_KEY_OCTETS, TAG_OCTETS};

pub const MAGIC: [u8; 4] = *b"QSS1";
pub const VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 1500;
pub const HEADER_LEN: usize = 74;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame truncated")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("frame length does not match its payload length field")]
    LengthMismatch,
    #[error("payload of {0} octets exceeds the 1500-octet cap")]
    PayloadTooLarge(usize),
    #[error("key material exhausted: {needed} octets needed, {available} left")]
    KeyExhausted { needed: u64, available: u64 },
    #[error("unknown key {0}")]
    UnknownKey(KeyId),
    #[error("key {0} is no longer usable")]
    KeyUnavailable(KeyId),
    #[error("frame references octets outside key {0}")]
    KeyRange(KeyId),
    #[error("authentication tag mismatch")]
    TagMismatch,
    #[error("replayed or reordered frame (session {session:016x}, sequence {sequence})")]
    Replay { session: u64, sequence: u64 },
    #[error("key {key} octets at offset {offset} were already used")]
    PadReuse { key: KeyId, offset: u64 },
}

/// Key octets shared by both ends of a channel.
pub struct KeyMaterial {
    pub id: KeyId,
    pub octets: Zeroizing<Vec<u8>>,
}

impl KeyMaterial {
    pub fn new(id: KeyId, octets: Vec<u8>) -> Arc<Self> {
        Arc::new(Self {
            id,
            octets: Zeroizing::new(octets),
        })
    }

    pub fn len(&self) -> u64 {
        self.octets.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.octets.is_empty()
    }

    fn range(&self, offset: u64, len: u64) -> Option<&[u8]> {
        let end = offset.checked_add(len)?;
        if end > self.len() {
            return None;
        }
        Some(&self.octets[offset as usize..end as usize])
    }
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyMaterial({}, {} octets)", self.id, self.octets.len())
    }
}

/// Next unused position inside a window [offset, end) of one key.
#[derive(Clone, Debug)]
pub struct KeystreamCursor {
    key: Arc<KeyMaterial>,
    offset: u64,
    end: u64,
}

impl KeystreamCursor {
    pub fn new(key: Arc<KeyMaterial>, start: u64, end: u64) -> Self {
        let end = end.min(key.len());
        Self {
            key,
            offset: start.min(end),
            end,
        }
    }

    /// A cursor over the whole key.
    pub fn whole(key: Arc<KeyMaterial>) -> Self {
        let end = key.len();
        Self::new(key, 0, end)
    }

    pub fn key_id(&self) -> KeyId {
        self.key.id
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn remaining(&self) -> u64 {
        self.end - self.offset
    }

    fn check(&self, n: u64) -> Result<(), FrameError> {
        if self.remaining() < n {
            return Err(FrameError::KeyExhausted {
                needed: n,
                available: self.remaining(),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: u64) -> (u64, &[u8]) {
        let start = self.offset;
        self.offset += n;
        (start, &self.key.octets[start as usize..(start + n) as usize])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub msg_type: u8,
    pub sender: u16,
    pub session: u64,
    pub sequence: u64,
    pub enc_key: KeyId,
    pub enc_offset: u64,
    pub mac_key: KeyId,
    pub mac_offset: u64,
    pub payload_len: u16,
}

impl FrameHeader {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&self.sender.to_be_bytes());
        out.extend_from_slice(&self.session.to_be_bytes());
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&self.enc_key.0);
        out.extend_from_slice(&self.enc_offset.to_be_bytes());
        out.extend_from_slice(&self.mac_key.0);
        out.extend_from_slice(&self.mac_offset.to_be_bytes());
        out.extend_from_slice(&self.payload_len.to_be_bytes());
    }
}

/// Sender-chosen fields of a frame header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameFields {
    pub msg_type: u8,
    pub sender: u16,
    pub session: u64,
    pub sequence: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthFrame {
    pub header: FrameHeader,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_OCTETS],
}

impl AuthFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len() + TAG_OCTETS);
        self.header.encode_into(&mut out);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Octets covered by the tag: header through ciphertext.
    fn authenticated(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len());
        self.header.encode_into(&mut out);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN + TAG_OCTETS {
            return Err(FrameError::Truncated);
        }
        if bytes[..4] != MAGIC {
            return Err(FrameError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(FrameError::BadVersion(bytes[4]));
        }
        let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().expect("8 octets"));
        let id_at = |i: usize| KeyId(bytes[i..i + 16].try_into().expect("16 octets"));
        let payload_len = u16::from_be_bytes([bytes[72], bytes[73]]);
        if payload_len as usize > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLarge(payload_len as usize));
        }
        if bytes.len() != HEADER_LEN + payload_len as usize + TAG_OCTETS {
            return Err(FrameError::LengthMismatch);
        }
        let header = FrameHeader {
            msg_type: bytes[5],
            sender: u16::from_be_bytes([bytes[6], bytes[7]]),
            session: u64_at(8),
            sequence: u64_at(16),
            enc_key: id_at(24),
            enc_offset: u64_at(40),
            mac_key: id_at(48),
            mac_offset: u64_at(64),
            payload_len,
        };
        let body_end = HEADER_LEN + payload_len as usize;
        Ok(Self {
            header,
            ciphertext: bytes[HEADER_LEN..body_end].to_vec(),
            tag: bytes[body_end..].try_into().expect("8 octets"),
        })
    }
}

/// Encrypts under `enc` and tags under 16 octets of `mac`.
///
/// Both cursors are checked before either advances, so a failure consumes
/// nothing.
pub fn seal(
    plaintext: &[u8],
    fields: FrameFields,
    enc: &mut KeystreamCursor,
    mac: &mut KeystreamCursor,
) -> Result<AuthFrame, FrameError> {
    if plaintext.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(plaintext.len()));
    }
    let n = plaintext.len() as u64;
    if enc.key_id() == mac.key_id() && ranges_overlap(enc.offset(), n, mac.offset(), TAG_KEY_OCTETS as u64) {
        return Err(FrameError::PadReuse {
            key: enc.key_id(),
            offset: mac.offset(),
        });
    }
    enc.check(n)?;
    mac.check(TAG_KEY_OCTETS as u64)?;
    let (enc_offset, pad) = enc.take(n);
    let ciphertext: Vec<u8> = plaintext.iter().zip(pad).map(|(p, k)| p ^ k).collect();
    let (mac_offset, tag_key) = mac.take(TAG_KEY_OCTETS as u64);
    let tag_key: [u8; TAG_KEY_OCTETS] = tag_key.try_into().expect("16 octets");
    let mut frame = AuthFrame {
        header: FrameHeader {
            msg_type: fields.msg_type,
            sender: fields.sender,
            session: fields.session,
            sequence: fields.sequence,
            enc_key: enc.key_id(),
            enc_offset,
            mac_key: mac.key_id(),
            mac_offset,
            payload_len: n as u16,
        },
        ciphertext,
        tag: [0; TAG_OCTETS],
    };
    frame.tag = wc_tag(&frame.authenticated(), &tag_key);
    Ok(frame)
}

fn ranges_overlap(a: u64, a_len: u64, b: u64, b_len: u64) -> bool {
    a < b + b_len && b < a + a_len && a_len > 0 && b_len > 0
}

/// Replay window and pad-reuse ledger of one receiver.
#[derive(Debug, Default)]
pub struct ReceiverState {
    last_sequence: HashMap<(u64, u16), u64>,
    used: HashMap<KeyId, BTreeMap<u64, u64>>,
}

impl ReceiverState {
    fn is_used(&self, key: &KeyId, start: u64, len: u64) -> bool {
        if len == 0 {
            return false;
        }
        let Some(ranges) = self.used.get(key) else {
            return false;
        };
        // Only the last range starting before `start + len` can overlap.
        ranges
            .range(..start + len)
            .next_back()
            .is_some_and(|(&s, &e)| ranges_overlap(s, e - s, start, len))
    }

    fn mark(&mut self, key: KeyId, start: u64, len: u64) {
        if len > 0 {
            self.used.entry(key).or_default().insert(start, start + len);
        }
    }

    /// Octets of `key` accepted so far.
    pub fn used_octets(&self, key: &KeyId) -> u64 {
        self.used.get(key).map_or(0, |r| r.iter().map(|(s, e)| e - s).sum())
    }

    pub fn forget_key(&mut self, key: &KeyId) {
        self.used.remove(key);
    }
}

/// Verifies and decrypts a frame.
///
/// Checks run in order: key lookup, key range, tag, replay, pad reuse.
/// Nothing derived from the ciphertext is produced unless all pass.
pub fn open<F>(frame: &AuthFrame, mut lookup: F, state: &mut ReceiverState) -> Result<(u8, Vec<u8>), FrameError>
where
    F: FnMut(&KeyId) -> Result<Arc<KeyMaterial>, FrameError>,
{
    let h = &frame.header;
    let n = h.payload_len as u64;
    if frame.ciphertext.len() as u64 != n {
        return Err(FrameError::LengthMismatch);
    }
    let enc_key = lookup(&h.enc_key)?;
    let mac_key = if h.mac_key == h.enc_key {
        enc_key.clone()
    } else {
        lookup(&h.mac_key)?
    };
    let pad = enc_key.range(h.enc_offset, n).ok_or(FrameError::KeyRange(h.enc_key))?;
    let tag_key: [u8; TAG_KEY_OCTETS] = mac_key
        .range(h.mac_offset, TAG_KEY_OCTETS as u64)
        .ok_or(FrameError::KeyRange(h.mac_key))?
        .try_into()
        .expect("16 octets");
    if wc_tag(&frame.authenticated(), &tag_key) != frame.tag {
        return Err(FrameError::TagMismatch);
    }
    let stream = (h.session, h.sender);
    if state.last_sequence.get(&stream).is_some_and(|&last| h.sequence <= last) {
        return Err(FrameError::Replay {
            session: h.session,
            sequence: h.sequence,
        });
    }
    let same_key = h.enc_key == h.mac_key;
    if state.is_used(&h.enc_key, h.enc_offset, n)
        || (same_key && ranges_overlap(h.enc_offset, n, h.mac_offset, TAG_KEY_OCTETS as u64))
    {
        return Err(FrameError::PadReuse {
            key: h.enc_key,
            offset: h.enc_offset,
        });
    }
    if state.is_used(&h.mac_key, h.mac_offset, TAG_KEY_OCTETS as u64) {
        return Err(FrameError::PadReuse {
            key: h.mac_key,
            offset: h.mac_offset,
        });
    }
    let plaintext = frame.ciphertext.iter().zip(pad).map(|(c, k)| c ^ k).collect();
    state.last_sequence.insert(stream, h.sequence);
    state.mark(h.enc_key, h.enc_offset, n);
    state.mark(h.mac_key, h.mac_offset, TAG_KEY_OCTETS as u64);
    Ok((h.msg_type, plaintext))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(counter: u64, octets: Vec<u8>) -> Arc<KeyMaterial> {
        KeyMaterial::new(KeyId::from_parts(0, counter), octets)
    }

    fn fields(sequence: u64) -> FrameFields {
        FrameFields {
            msg_type: 3,
            sender: 7,
            session: 11,
            sequence,
        }
    }

    fn lookup(keys: &[Arc<KeyMaterial>]) -> impl FnMut(&KeyId) -> Result<Arc<KeyMaterial>, FrameError> + '_ {
        move |id| keys.iter().find(|k| &k.id == id).cloned().ok_or(FrameError::UnknownKey(*id))
    }

    #[test]
    fn xor_example() {
        let enc = key(1, vec![0x0f]);
        let mac = key(2, vec![0; 16]);
        let frame = seal(
            &[0xaa],
            fields(0),
            &mut KeystreamCursor::whole(enc.clone()),
            &mut KeystreamCursor::whole(mac.clone()),
        )
        .unwrap();
        assert_eq!(frame.ciphertext, vec![0xa5]);
        let mut st = ReceiverState::default();
        let keys = [enc, mac];
        assert_eq!(open(&frame, lookup(&keys), &mut st).unwrap(), (3, vec![0xaa]));
    }

    #[test]
    fn header_layout_is_fixed() {
        let enc = key(1, vec![1; 4]);
        let mac = key(2, vec![2; 16]);
        let frame = seal(
            b"abcd",
            fields(5),
            &mut KeystreamCursor::whole(enc),
            &mut KeystreamCursor::whole(mac),
        )
        .unwrap();
        let bytes = frame.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 4 + 8);
        assert_eq!(&bytes[..6], b"QSS1\x01\x03");
        assert_eq!(&bytes[6..8], &7u16.to_be_bytes());
        assert_eq!(&bytes[16..24], &5u64.to_be_bytes());
        assert_eq!(&bytes[72..74], &4u16.to_be_bytes());
        assert_eq!(AuthFrame::decode(&bytes).unwrap(), frame);
    }

    #[test]
    fn exhausted_cursor_consumes_nothing() {
        let enc = key(1, vec![0; 10]);
        let mac = key(2, vec![0; 16]);
        let mut e = KeystreamCursor::whole(enc);
        let mut m = KeystreamCursor::whole(mac);
        let err = seal(&[0; 11], fields(0), &mut e, &mut m).unwrap_err();
        assert_eq!(err, FrameError::KeyExhausted { needed: 11, available: 10 });
        assert_eq!((e.offset(), m.offset()), (0, 0));
        let mut short_mac = KeystreamCursor::new(key(3, vec![0; 16]), 1, 16);
        assert!(seal(&[0; 2], fields(0), &mut e, &mut short_mac).is_err());
        assert_eq!(e.offset(), 0);
    }

    #[test]
    fn oversized_payload_is_refused() {
        let enc = key(1, vec![0; 2000]);
        let mac = key(2, vec![0; 16]);
        assert_eq!(
            seal(
                &[0; 1501],
                fields(0),
                &mut KeystreamCursor::whole(enc),
                &mut KeystreamCursor::whole(mac)
            ),
            Err(FrameError::PayloadTooLarge(1501))
        );
    }

    #[test]
    fn replay_and_pad_reuse_are_caught() {
        let material = key(1, (0..100).collect());
        let mut enc = KeystreamCursor::new(material.clone(), 0, 68);
        let mut mac = KeystreamCursor::new(material.clone(), 68, 100);
        let f1 = seal(b"hello", fields(1), &mut enc, &mut mac).unwrap();
        let keys = [material.clone()];
        let mut st = ReceiverState::default();
        open(&f1, lookup(&keys), &mut st).unwrap();
        assert!(matches!(open(&f1, lookup(&keys), &mut st), Err(FrameError::Replay { .. })));

        // A new sequence number that points at the same pad octets.
        let mut enc2 = KeystreamCursor::new(material.clone(), 0, 68);
        let mut mac2 = KeystreamCursor::new(material.clone(), 84, 100);
        let f2 = seal(b"again", fields(2), &mut enc2, &mut mac2).unwrap();
        assert!(matches!(open(&f2, lookup(&keys), &mut st), Err(FrameError::PadReuse { .. })));
        assert_eq!(st.used_octets(&material.id), 5 + 16);
    }

    #[test]
    fn tampering_is_detected_before_decryption() {
        let enc = key(1, vec![9; 32]);
        let mac = key(2, vec![4; 16]);
        let frame = seal(
            b"payload",
            fields(0),
            &mut KeystreamCursor::whole(enc.clone()),
            &mut KeystreamCursor::whole(mac.clone()),
        )
        .unwrap();
        let keys = [enc, mac];
        let mut bad = frame.clone();
        bad.ciphertext[0] ^= 1;
        let mut st = ReceiverState::default();
        assert_eq!(open(&bad, lookup(&keys), &mut st), Err(FrameError::TagMismatch));
        let mut bad = frame.clone();
        bad.header.sequence = 99;
        assert_eq!(open(&bad, lookup(&keys), &mut st), Err(FrameError::TagMismatch));
        // The forged frames left no trace, the original still opens.
        assert!(open(&frame, lookup(&keys), &mut st).is_ok());
    }

    #[test]
    fn decode_rejects_malformed_input() {
        assert_eq!(AuthFrame::decode(&[0; 10]), Err(FrameError::Truncated));
        let mut bytes = vec![0u8; HEADER_LEN + 8];
        assert_eq!(AuthFrame::decode(&bytes), Err(FrameError::BadMagic));
        bytes[..4].copy_from_slice(b"QSS1");
        bytes[4] = 2;
        assert_eq!(AuthFrame::decode(&bytes), Err(FrameError::BadVersion(2)));
        bytes[4] = 1;
        bytes[73] = 1;
        assert_eq!(AuthFrame::decode(&bytes), Err(FrameError::LengthMismatch));
    }

    #[test]
    fn unknown_keys_and_ranges() {
        let enc = key(1, vec![0; 4]);
        let mac = key(2, vec![0; 16]);
        let frame = seal(
            b"abcd",
            fields(0),
            &mut KeystreamCursor::whole(enc.clone()),
            &mut KeystreamCursor::whole(mac.clone()),
        )
        .unwrap();
        let mut st = ReceiverState::default();
        assert!(matches!(open(&frame, lookup(&[mac.clone()]), &mut st), Err(FrameError::UnknownKey(_))));
        let short = key(1, vec![0; 3]);
        assert!(matches!(open(&frame, lookup(&[short, mac]), &mut st), Err(FrameError::KeyRange(_))));
    }
}
