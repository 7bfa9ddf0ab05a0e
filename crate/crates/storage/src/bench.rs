//! Timing and key consumption per (size, m) grid point.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use qss_core::{FieldError, MersennePrime, OwnerId, SchemeError, SchemeParams};

use crate::deploy::{DeployError, Deployment, DeploymentConfig, TransportKind};
use crate::owner::OwnerError;

pub const SIZES: [u64; 3] = [6955, 13695, 46000];
pub const EXPONENTS: [u32; 11] = [521, 1279, 2203, 3217, 4253, 9941, 11213, 19937, 23209, 44497, 86243];
pub const CSV_HEADER: &str = "size,m,l,t_reg_ms,t_pre_ms,t_rec_ms,key_octets";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error(transparent)]
    Owner(#[from] OwnerError),
    #[error("size {size}, m = {m}: output differs between runs or from the input")]
    Mismatch { size: u64, m: u32 },
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sizes: Vec<u64>,
    pub exponents: Vec<u32>,
    pub n: u32,
    pub t: u32,
    pub repetitions: usize,
    pub transport: TransportKind,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: SIZES.to_vec(),
            exponents: EXPONENTS.to_vec(),
            n: 4,
            t: 1,
            repetitions: 5,
            transport: TransportKind::Loopback,
            seed: 1,
        }
    }
}

/// Every repetition of one grid point. `l` is read back from a server's
/// stored bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseRuns {
    pub size: u64,
    pub m: u32,
    pub l: u64,
    pub reg_ms: Vec<f64>,
    pub pre_ms: Vec<f64>,
    pub rec_ms: Vec<f64>,
    pub key_octets: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub size: u64,
    pub m: u32,
    pub l: u64,
    pub t_reg_ms: f64,
    pub t_pre_ms: f64,
    pub t_rec_ms: f64,
    pub key_octets: u64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.3},{}",
            self.size, self.m, self.l, self.t_reg_ms, self.t_pre_ms, self.t_rec_ms, self.key_octets
        )
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

impl From<&CaseRuns> for BenchRow {
    fn from(c: &CaseRuns) -> Self {
        let mut keys = c.key_octets.clone();
        keys.sort_unstable();
        Self {
            size: c.size,
            m: c.m,
            l: c.l,
            t_reg_ms: median(&c.reg_ms),
            t_pre_ms: median(&c.pre_ms),
            t_rec_ms: median(&c.rec_ms),
            key_octets: keys[keys.len() / 2],
        }
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Registers, pre-computes one attempt for the default quorum and
/// reconstructs, `repetitions` times on a fresh deployment.
pub fn run_case(cfg: &BenchConfig, size: u64, m: u32) -> Result<CaseRuns, BenchError> {
    let params = SchemeParams::new(cfg.n, cfg.t, MersennePrime::new(m)?)?;
    let quorum = params.default_quorum();
    let mut dc = DeploymentConfig::new(params);
    dc.server.rate_limit = None;
    dc.transport = cfg.transport;
    dc.seed = cfg.seed;
    let deployment = Deployment::start(dc)?;
    let owner = deployment.owner(OwnerId(1));
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ size ^ ((m as u64) << 32));

    let mut runs = CaseRuns {
        size,
        m,
        l: 0,
        reg_ms: Vec::new(),
        pre_ms: Vec::new(),
        rec_ms: Vec::new(),
        key_octets: Vec::new(),
    };
    for _ in 0..cfg.repetitions.max(1) {
        let mut data = vec![0u8; size as usize];
        rng.fill_bytes(&mut data);
        let before = deployment.key_network().delivered_total();

        let start = Instant::now();
        let id = owner.register(&data, b"bench passphrase")?;
        runs.reg_ms.push(ms(start));
        // Blocks actually stored: data shares less the MAC share.
        let stored = deployment.server(1).store().get(OwnerId(1), id).map_or(0, |b| b.data_shares.len() as u64 - 1);
        if runs.l != 0 && runs.l != stored {
            return Err(BenchError::Mismatch { size, m });
        }
        runs.l = stored;

        let start = Instant::now();
        owner.precompute(id, &quorum, 1)?;
        runs.pre_ms.push(ms(start));

        let start = Instant::now();
        let got = owner.reconstruct(id, b"bench passphrase", Some(&quorum))?;
        runs.rec_ms.push(ms(start));
        if got.data != data {
            return Err(BenchError::Mismatch { size, m });
        }
        runs.key_octets.push(deployment.key_network().delivered_total() - before);
    }
    Ok(runs)
}

/// Runs the grid, size-major, calling `on_row` as each point finishes.
pub fn run_bench(cfg: &BenchConfig, mut on_row: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    for &size in &cfg.sizes {
        for &m in &cfg.exponents {
            let row = BenchRow::from(&run_case(cfg, size, m)?);
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_row_matches_header() {
        let row = BenchRow {
            size: 6955,
            m: 521,
            l: 107,
            t_reg_ms: 1.5,
            t_pre_ms: 2.0,
            t_rec_ms: 0.25,
            key_octets: 1000,
        };
        assert_eq!(row.to_csv(), "6955,521,107,1.500,2.000,0.250,1000");
        assert_eq!(row.to_csv().split(',').count(), CSV_HEADER.split(',').count());
    }
}
