use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use super::{KeyId, KeySupplyError, NodeId};

/// Traceability record for one delivered key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditRecord {
    pub key_id: KeyId,
    pub app: String,
    pub peer_app: String,
    pub node: NodeId,
    pub peer_node: NodeId,
    pub octets: u64,
    /// Milliseconds since the Unix epoch on the network clock.
    pub date: u64,
    pub purpose: String,
}

impl AuditRecord {
    /// Tab-separated: key id, app, peer app, node, peer node, octets, date, purpose.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.key_id, self.app, self.peer_app, self.node, self.peer_node, self.octets, self.date, self.purpose
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, KeySupplyError> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || KeySupplyError::Malformed("audit line");
        if f.len() != 8 {
            return Err(bad());
        }
        Ok(Self {
            key_id: f[0].parse().map_err(|_| bad())?,
            app: f[1].to_string(),
            peer_app: f[2].to_string(),
            node: f[3].parse().map_err(|_| bad())?,
            peer_node: f[4].parse().map_err(|_| bad())?,
            octets: f[5].parse().map_err(|_| bad())?,
            date: f[6].parse().map_err(|_| bad())?,
            purpose: f[7].to_string(),
        })
    }
}

/// Append-only audit log held by the key management server.
#[derive(Debug, Default)]
pub struct AuditLog {
    records: Mutex<Vec<AuditRecord>>,
    file: Option<Mutex<File>>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, creating it if needed.
    pub fn with_file(path: &Path) -> Result<Self, KeySupplyError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records: Mutex::new(Vec::new()),
            file: Some(Mutex::new(file)),
        })
    }

    pub fn append(&self, record: AuditRecord) -> Result<(), KeySupplyError> {
        if let Some(file) = &self.file {
            let mut f = file.lock().expect("audit file lock");
            writeln!(f, "{}", record.to_line())?;
            f.flush()?;
        }
        self.records.lock().expect("audit lock").push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().expect("audit lock").clone()
    }

    pub fn read_file(path: &Path) -> Result<Vec<AuditRecord>, KeySupplyError> {
        BufReader::new(File::open(path)?)
            .lines()
            .map(|l| AuditRecord::parse_line(&l?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        let log = AuditLog::with_file(&path).unwrap();
        let rec = AuditRecord {
            key_id: KeyId::from_parts(1, 2),
            app: "owner-1".into(),
            peer_app: "server-3".into(),
            node: 1,
            peer_node: 3,
            octets: 64,
            date: 1_700_000_000_000,
            purpose: "register".into(),
        };
        log.append(rec.clone()).unwrap();
        assert_eq!(log.records(), vec![rec.clone()]);
        assert_eq!(AuditLog::read_file(&path).unwrap(), vec![rec]);
        assert!(AuditRecord::parse_line("a\tb").is_err());
    }
}
