use std::fmt;
use std::str::FromStr;

use zeroize::Zeroize;

use super::{KeySupplyError, NodeId};

/// 16-octet key identifier, unique across the key network.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct KeyId(pub [u8; 16]);

impl KeyId {
    pub fn from_parts(prefix: u64, counter: u64) -> Self {
        let mut id = [0u8; 16];
        id[..8].copy_from_slice(&prefix.to_be_bytes());
        id[8..].copy_from_slice(&counter.to_be_bytes());
        Self(id)
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({self})")
    }
}

impl FromStr for KeyId {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut id = [0u8; 16];
        hex::decode_to_slice(s, &mut id)?;
        Ok(Self(id))
    }
}

/// available -> reserved -> consumed, or available/reserved -> expired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyState {
    Available,
    Reserved,
    Consumed,
    Expired,
}

impl KeyState {
    fn code(self) -> u8 {
        match self {
            KeyState::Available => 0,
            KeyState::Reserved => 1,
            KeyState::Consumed => 2,
            KeyState::Expired => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => KeyState::Available,
            1 => KeyState::Reserved,
            2 => KeyState::Consumed,
            3 => KeyState::Expired,
            _ => return None,
        })
    }

    /// Octets of consumed or expired keys are gone.
    pub fn is_erased(self) -> bool {
        matches!(self, KeyState::Consumed | KeyState::Expired)
    }
}

/// A delivered key: identical copies sit at both endpoints' supply agents.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyFile {
    pub id: KeyId,
    /// Relay path, source first.
    pub route: Vec<NodeId>,
    pub octets: Vec<u8>,
    /// Milliseconds since the Unix epoch on the network clock.
    pub created_at: u64,
    pub expires_at: u64,
    pub state: KeyState,
}

impl fmt::Debug for KeyFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyFile")
            .field("id", &self.id)
            .field("route", &self.route)
            .field("len", &self.octets.len())
            .field("created_at", &self.created_at)
            .field("expires_at", &self.expires_at)
            .field("state", &self.state)
            .finish()
    }
}

impl Drop for KeyFile {
    fn drop(&mut self) {
        self.octets.zeroize();
    }
}

impl KeyFile {
    /// Zeroizes the octets and moves to a terminal state.
    pub fn erase(&mut self, state: KeyState) {
        debug_assert!(state.is_erased());
        self.octets.as_mut_slice().zeroize();
        self.state = state;
    }

    /// id (16) | length (8, BE) | octets | trailer.
    ///
    /// Trailer: route length (2) and node ids (2 each), created (8),
    /// expires (8), state (1). Erased files keep their length and carry
    /// zero octets.
    pub fn encode(&self) -> Vec<u8> {
        let len = self.octets.len();
        let mut out = Vec::with_capacity(16 + 8 + len + 2 + 2 * self.route.len() + 17);
        out.extend_from_slice(&self.id.0);
        out.extend_from_slice(&(len as u64).to_be_bytes());
        if self.state.is_erased() {
            out.resize(out.len() + len, 0);
        } else {
            out.extend_from_slice(&self.octets);
        }
        out.extend_from_slice(&(self.route.len() as u16).to_be_bytes());
        for node in &self.route {
            out.extend_from_slice(&node.to_be_bytes());
        }
        out.extend_from_slice(&self.created_at.to_be_bytes());
        out.extend_from_slice(&self.expires_at.to_be_bytes());
        out.push(self.state.code());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, KeySupplyError> {
        let mut r = Reader(bytes);
        let id = KeyId(r.array()?);
        let len = u64::from_be_bytes(r.array()?) as usize;
        let octets = r.take(len)?.to_vec();
        let hops = u16::from_be_bytes(r.array()?) as usize;
        let route = (0..hops)
            .map(|_| Ok(u16::from_be_bytes(r.array()?)))
            .collect::<Result<Vec<_>, KeySupplyError>>()?;
        let created_at = u64::from_be_bytes(r.array()?);
        let expires_at = u64::from_be_bytes(r.array()?);
        let [state] = r.array()?;
        let state = KeyState::from_code(state).ok_or(KeySupplyError::Malformed("key state"))?;
        if !r.0.is_empty() {
            return Err(KeySupplyError::Malformed("trailing octets after key file"));
        }
        Ok(Self {
            id,
            route,
            octets,
            created_at,
            expires_at,
            state,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], KeySupplyError> {
        if self.0.len() < n {
            return Err(KeySupplyError::Malformed("key file truncated"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], KeySupplyError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KeyFile {
        KeyFile {
            id: KeyId::from_parts(7, 42),
            route: vec![1, 2, 3],
            octets: vec![0xde, 0xad, 0xbe, 0xef],
            created_at: 1_000,
            expires_at: 2_000,
            state: KeyState::Reserved,
        }
    }

    #[test]
    fn binary_layout() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..16], &KeyId::from_parts(7, 42).0);
        assert_eq!(&bytes[16..24], &4u64.to_be_bytes());
        assert_eq!(&bytes[24..28], &[0xde, 0xad, 0xbe, 0xef]);
        assert_eq!(bytes.len(), 16 + 8 + 4 + 2 + 6 + 8 + 8 + 1);
        assert_eq!(KeyFile::decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn erased_files_persist_without_octets() {
        let mut k = sample();
        k.erase(KeyState::Expired);
        assert!(k.octets.iter().all(|&b| b == 0));
        let back = KeyFile::decode(&k.encode()).unwrap();
        assert_eq!(back.state, KeyState::Expired);
        assert_eq!(back.octets, vec![0; 4]);
    }

    #[test]
    fn truncated_and_trailing_input_is_rejected() {
        let bytes = sample().encode();
        assert!(KeyFile::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(KeyFile::decode(&long).is_err());
    }

    #[test]
    fn key_id_hex_round_trip() {
        let id = KeyId::from_parts(0x0102, 0xff);
        assert_eq!(id.to_string(), "000000000000010200000000000000ff");
        assert_eq!(id.to_string().parse::<KeyId>().unwrap(), id);
    }
}
