//! Key consumption per protocol phase, from the key management audit trail.

use std::collections::BTreeMap;
use std::fmt;

use qss_transport::keysupply::AuditRecord;

pub const PHASES: [&str; 3] = ["registration", "precomputation", "reconstruction"];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyStats {
    pub by_purpose: BTreeMap<String, u64>,
    pub data_bytes: u64,
}

impl KeyStats {
    pub fn new(by_purpose: BTreeMap<String, u64>, data_bytes: u64) -> Self {
        Self { by_purpose, data_bytes }
    }

    pub fn from_records(records: &[AuditRecord], data_bytes: u64) -> Self {
        let mut by_purpose = BTreeMap::new();
        for r in records {
            *by_purpose.entry(r.purpose.clone()).or_default() += r.octets;
        }
        Self { by_purpose, data_bytes }
    }

    pub fn phase(&self, name: &str) -> u64 {
        self.by_purpose.get(name).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.by_purpose.values().sum()
    }

    /// Total key octets per data octet; zero before anything is stored.
    pub fn ratio(&self) -> f64 {
        if self.data_bytes == 0 {
            0.0
        } else {
            self.total() as f64 / self.data_bytes as f64
        }
    }
}

impl fmt::Display for KeyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for phase in PHASES {
            writeln!(f, "{phase}\t{}", self.phase(phase))?;
        }
        for (purpose, octets) in self.by_purpose.iter().filter(|(p, _)| !PHASES.contains(&p.as_str())) {
            writeln!(f, "{purpose}\t{octets}")?;
        }
        writeln!(f, "total\t{}", self.total())?;
        writeln!(f, "data\t{}", self.data_bytes)?;
        write!(f, "ratio\t{:.2}", self.ratio())
    }
}
