//! Append-only bundle store.
//!
//! Each record is length (4) | CRC-32 of the body (4) | body, where the body
//! is a kind octet followed by an encoded STORE_SHARES payload (put) or the
//! owner and data ids (delete). Opening replays the log; a torn or corrupt
//! tail is cut off.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use qss_core::{DataId, OwnerId};
use thiserror::Error;

use crate::wire::{Message, StoreShares, DELETE_BUNDLE, STORE_SHARES};

const PUT: u8 = 1;
const DELETE: u8 = 2;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bundle for owner {owner}, data {data} already stored")]
    Duplicate { owner: OwnerId, data: DataId },
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Key = (OwnerId, DataId);

struct Inner {
    file: Option<File>,
    index: HashMap<Key, Arc<StoreShares>>,
}

pub struct BundleStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl BundleStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                file: None,
                index: HashMap::new(),
            }),
        }
    }

    /// Opens or creates the log at `path` and rebuilds the index.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.seek(SeekFrom::Start(0))?;
        file.read_to_end(&mut bytes)?;
        let mut index = HashMap::new();
        let mut pos = 0;
        while let Some((body, next)) = next_record(&bytes, pos) {
            match apply(&mut index, body) {
                Some(()) => pos = next,
                None => break,
            }
        }
        if pos < bytes.len() {
            log::warn!("{}: dropping {} octets of damaged tail", path.display(), bytes.len() - pos);
            file.set_len(pos as u64)?;
            file.sync_all()?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                file: Some(file),
                index,
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Stores a bundle; it is on disk before this returns.
    pub fn put(&self, bundle: StoreShares) -> Result<(), StoreError> {
        let key = (bundle.owner, bundle.data_id);
        let mut inner = self.inner.lock().expect("store lock");
        if !bundle.overwrite && inner.index.contains_key(&key) {
            return Err(StoreError::Duplicate {
                owner: key.0,
                data: key.1,
            });
        }
        let mut body = vec![PUT];
        body.extend(Message::StoreShares(bundle.clone()).encode());
        append(&mut inner.file, &body)?;
        inner.index.insert(key, Arc::new(bundle));
        Ok(())
    }

    pub fn get(&self, owner: OwnerId, data: DataId) -> Option<Arc<StoreShares>> {
        self.inner.lock().expect("store lock").index.get(&(owner, data)).cloned()
    }

    /// Removes a bundle; returns whether one was present.
    pub fn delete(&self, owner: OwnerId, data: DataId) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        if !inner.index.contains_key(&(owner, data)) {
            return Ok(false);
        }
        let mut body = vec![DELETE];
        body.extend(Message::DeleteBundle { owner, data_id: data }.encode());
        append(&mut inner.file, &body)?;
        inner.index.remove(&(owner, data));
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn append(file: &mut Option<File>, body: &[u8]) -> io::Result<()> {
    let Some(file) = file else { return Ok(()) };
    let mut record = Vec::with_capacity(body.len() + 8);
    record.extend_from_slice(&(body.len() as u32).to_be_bytes());
    record.extend_from_slice(&crc32fast::hash(body).to_be_bytes());
    record.extend_from_slice(body);
    file.write_all(&record)?;
    file.sync_data()
}

fn next_record(bytes: &[u8], pos: usize) -> Option<(&[u8], usize)> {
    let header = bytes.get(pos..pos + 8)?;
    let len = u32::from_be_bytes(header[..4].try_into().ok()?) as usize;
    let crc = u32::from_be_bytes(header[4..].try_into().ok()?);
    let body = bytes.get(pos + 8..pos + 8 + len)?;
    (crc32fast::hash(body) == crc).then_some((body, pos + 8 + len))
}

fn apply(index: &mut HashMap<Key, Arc<StoreShares>>, body: &[u8]) -> Option<()> {
    let (&kind, rest) = body.split_first()?;
    match (kind, Message::decode(if kind == PUT { STORE_SHARES } else { DELETE_BUNDLE }, rest).ok()?) {
        (PUT, Message::StoreShares(s)) => {
            index.insert((s.owner, s.data_id), Arc::new(s));
        }
        (DELETE, Message::DeleteBundle { owner, data_id }) => {
            index.remove(&(owner, data_id));
        }
        _ => return None,
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use qss_core::MersennePrime;

    fn bundle(data: u64, overwrite: bool) -> StoreShares {
        let f = MersennePrime::new(61).unwrap();
        StoreShares {
            owner: OwnerId(1),
            data_id: DataId(data),
            server: 2,
            n: 4,
            t: 1,
            byte_len: 3,
            overwrite,
            password_share: f.from_u64(99),
            data_shares: vec![f.from_u64(1), f.from_u64(2)],
        }
    }

    #[test]
    fn survives_reopen_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundles.log");
        let store = BundleStore::open(&path).unwrap();
        store.put(bundle(7, false)).unwrap();
        store.put(bundle(8, false)).unwrap();
        assert!(matches!(store.put(bundle(7, false)), Err(StoreError::Duplicate { .. })));
        store.put(bundle(7, true)).unwrap();
        assert!(store.delete(OwnerId(1), DataId(8)).unwrap());
        drop(store);
        let store = BundleStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(*store.get(OwnerId(1), DataId(7)).unwrap(), bundle(7, true));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundles.log");
        BundleStore::open(&path).unwrap().put(bundle(1, false)).unwrap();
        let good = std::fs::metadata(&path).unwrap().len();
        BundleStore::open(&path).unwrap().put(bundle(2, false)).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        let store = BundleStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good);
        // Appends after recovery land on a clean boundary.
        store.put(bundle(3, false)).unwrap();
        assert_eq!(BundleStore::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_record_stops_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundles.log");
        BundleStore::open(&path).unwrap().put(bundle(1, false)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(BundleStore::open(&path).unwrap().is_empty());
    }
}
