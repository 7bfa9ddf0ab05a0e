//! Executable versions of the scheme's security arguments.
//!
//! Monte Carlo experiments for forgery detection, masking of wrong-password
//! reconstructions and the corrupted servers' view, plus the exact
//! determinant machinery behind the view argument: the matrix M relating
//! the honest servers' random coefficients to the attacker's observations
//! is assembled explicitly and its determinant is compared with the
//! closed-form product.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{FieldElement, FieldError, MersennePrime};
use crate::scheme::{
    compute_mac, gen_precomputed_contribution, make_request, reconstruct, respond_all, share_blocks,
    BlockVector, Contribution, DataId, OwnerId, PrecomputedSet, Quorum, Response, SchemeError,
    SchemeParams,
};
use crate::sharing::{interpolate_at_zero, lagrange_weights_at_zero, Share, SharePolynomial, SharingError};
use crate::stats::{chi_square_critical, chi_square_two_sample, chi_square_uniform, rate_limit};

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("guessed password equals the registered one; nothing to test")]
    Degenerate,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Significance used by every uniformity test in the harness.
pub const SIGNIFICANCE: f64 = 0.01;

/// One line of the machine-readable report: test id, statistic, bound, verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportLine {
    pub id: String,
    pub statistic: f64,
    pub bound: f64,
    pub pass: bool,
}

impl ReportLine {
    /// Passes when `statistic <= bound`.
    pub fn at_most(id: impl Into<String>, statistic: f64, bound: f64) -> Self {
        Self {
            id: id.into(),
            statistic,
            bound,
            pass: statistic <= bound,
        }
    }
}

impl fmt::Display for ReportLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{}",
            self.id,
            self.statistic,
            self.bound,
            if self.pass { "pass" } else { "fail" }
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub lines: Vec<ReportLine>,
}

impl Report {
    pub fn push(&mut self, line: ReportLine) {
        self.lines.push(line);
    }

    pub fn all_pass(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn bucket(e: &FieldElement) -> usize {
    e.to_u64().expect("histograms need a small field") as usize
}

fn field_size(field: &MersennePrime) -> usize {
    field.modulus().try_into().expect("histograms need a small field")
}

// ---------------------------------------------------------------------------
// Honest protocol run with hooks for a corrupted responder.

struct Run {
    quorum: Quorum,
    bundles: Vec<crate::scheme::RegistrationBundle>,
    contributions: Vec<Vec<Contribution>>,
}

impl Run {
    fn setup<R: RngCore + ?Sized>(
        params: &SchemeParams,
        bv: &BlockVector,
        password: &FieldElement,
        quorum: Quorum,
        rng: &mut R,
    ) -> Result<Self, AdversaryError> {
        let bundles = share_blocks(bv, password, params, OwnerId(0), DataId(0), rng)?;
        let blocks = bv.blocks.len() + 1;
        let contributions = quorum
            .members()
            .iter()
            .map(|&h| {
                (0..blocks)
                    .map(|_| gen_precomputed_contribution(params, &quorum, h, rng))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            quorum,
            bundles,
            contributions,
        })
    }

    fn responses(
        &self,
        params: &SchemeParams,
        guess: &FieldElement,
        rng: &mut impl RngCore,
    ) -> Result<Vec<Response>, AdversaryError> {
        let blocks = self.bundles[0].data_shares.len();
        let requests = make_request(guess, params, &self.quorum, rng)?;
        requests
            .iter()
            .map(|req| {
                let j = req.holder;
                let mut sets = (0..blocks)
                    .map(|i| {
                        PrecomputedSet::assemble(&self.quorum, i, j, self.contributions.iter().map(|c| &c[i]))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let values = respond_all(&self.bundles[j as usize - 1], &mut sets, req, params)?;
                Ok(Response { server: j, values })
            })
            .collect()
    }
}

fn random_blocks<R: RngCore + ?Sized>(
    params: &SchemeParams,
    l: usize,
    rng: &mut R,
) -> Result<Vec<FieldElement>, AdversaryError> {
    (0..l)
        .map(|_| Ok(params.field().random_below_power_of_two(params.limb_bits(), rng)?))
        .collect()
}

fn random_password<R: RngCore + ?Sized>(params: &SchemeParams, rng: &mut R) -> Result<FieldElement, AdversaryError> {
    Ok(params.field().random_below_power_of_two(params.limb_bits(), rng)?)
}

// ---------------------------------------------------------------------------
// Forgery detection.

/// How the corrupted server picks the offsets it adds to its responses.
#[derive(Clone, Debug)]
pub enum OffsetAttack {
    /// A fresh uniformly random nonzero vector each trial.
    Random,
    /// Offsets whose MAC error polynomial has l distinct roots; the best a
    /// fixed additive attacker can do.
    MaxRoots,
    /// Caller-chosen offsets, one per block including the MAC block.
    Fixed(Vec<FieldElement>),
}

#[derive(Clone, Debug)]
pub struct ForgeryConfig {
    pub params: SchemeParams,
    /// Number of data blocks l.
    pub blocks: usize,
    pub attack: OffsetAttack,
    /// Also perturb the corrupted server's zero shares sent to honest servers.
    pub corrupt_zero_shares: bool,
    /// Index of the corrupted responder, inside the default quorum.
    pub corrupted: u32,
}

impl ForgeryConfig {
    pub fn new(params: SchemeParams, blocks: usize, attack: OffsetAttack) -> Self {
        Self {
            params,
            blocks,
            attack,
            corrupt_zero_shares: false,
            corrupted: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForgeryOutcome {
    /// The reconstructed MAC block matched the MAC of the reconstructed data.
    pub mac_accepted: bool,
    /// The reconstructed blocks differ from the registered ones.
    pub forged: bool,
}

/// Offsets e_i such that the reconstructed blocks shift by the coefficients
/// of prod_k (P - r_k) for distinct roots r_k.
pub fn max_root_offsets(cfg: &ForgeryConfig) -> Result<Vec<FieldElement>, AdversaryError> {
    let field = cfg.params.field();
    let l = cfg.blocks;
    // Build prod (x - r_k), r_k = 1..=l, low-to-high coefficients.
    let mut coeffs = vec![field.one()];
    for r in 1..=l as u64 {
        let root = field.from_u64(r);
        let mut next = vec![field.zero(); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] = &next[i + 1] + c;
            next[i] = &next[i] - &(c * &root);
        }
        coeffs = next;
    }
    let quorum = cfg.params.default_quorum();
    let weights = lagrange_weights_at_zero(field, quorum.members())?;
    let pos = quorum
        .members()
        .iter()
        .position(|&j| j == cfg.corrupted)
        .ok_or(SchemeError::NotInQuorum(cfg.corrupted))?;
    let inv_weight = weights[pos].inv()?;
    // Block shift delta_i = coeff_i for i = 1..=l; MAC shift = -coeff_0.
    let mut offsets: Vec<FieldElement> = coeffs[1..].iter().map(|c| c * &inv_weight).collect();
    offsets.push(-(&coeffs[0]) * &inv_weight);
    Ok(offsets)
}

/// One full reconstruction with a corrupted responder adding `offsets`.
///
/// The password is drawn uniformly from the whole field.
pub fn forgery_trial<R: RngCore>(
    cfg: &ForgeryConfig,
    offsets: &[FieldElement],
    rng: &mut R,
) -> Result<ForgeryOutcome, AdversaryError> {
    let params = &cfg.params;
    if offsets.len() != cfg.blocks + 1 {
        return Err(AdversaryError::Dimension(format!(
            "{} offsets for {} blocks",
            offsets.len(),
            cfg.blocks + 1
        )));
    }
    let password = params.field().random_element(rng)?;
    let blocks = random_blocks(params, cfg.blocks, rng)?;
    let bv = BlockVector {
        mac: Some(compute_mac(&blocks, &password)),
        blocks,
        byte_len: 0,
    };
    let mut run = Run::setup(params, &bv, &password, params.default_quorum(), rng)?;
    if cfg.corrupt_zero_shares {
        let pos = run.quorum.members().iter().position(|&j| j == cfg.corrupted).unwrap_or(0);
        for contribution in run.contributions[pos].iter_mut() {
            for (&holder, z) in contribution.zero.iter_mut() {
                if holder != cfg.corrupted {
                    *z = &*z + &params.field().random_element(rng)?;
                }
            }
        }
    }
    let mut responses = run.responses(params, &password, rng)?;
    for r in responses.iter_mut().filter(|r| r.server == cfg.corrupted) {
        for (v, e) in r.values.iter_mut().zip(offsets) {
            *v = &*v + e;
        }
    }
    let out = reconstruct(&responses, 0, params)?;
    let mac = out.mac.as_ref().ok_or(SchemeError::MissingMac)?;
    Ok(ForgeryOutcome {
        mac_accepted: &compute_mac(&out.blocks, &password) == mac,
        forged: out.blocks != bv.blocks || Some(mac) != bv.mac.as_ref(),
    })
}

#[derive(Clone, Debug)]
pub struct ForgeryStats {
    pub trials: u64,
    /// Trials where a forged reconstruction passed the MAC check.
    pub accepted: u64,
    /// l / q.
    pub bound: f64,
    /// l / q plus three standard errors.
    pub limit: f64,
}

impl ForgeryStats {
    pub fn rate(&self) -> f64 {
        self.accepted as f64 / self.trials as f64
    }

    pub fn report_line(&self, id: &str) -> ReportLine {
        ReportLine::at_most(id, self.rate(), self.limit)
    }
}

pub fn forgery_experiment(cfg: &ForgeryConfig, trials: u64, seed: u64) -> Result<ForgeryStats, AdversaryError> {
    let fixed = match &cfg.attack {
        OffsetAttack::MaxRoots => Some(max_root_offsets(cfg)?),
        OffsetAttack::Fixed(v) => Some(v.clone()),
        OffsetAttack::Random => None,
    };
    let field = cfg.params.field();
    let accepted = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<u64, AdversaryError> {
            let mut rng = trial_rng(seed, i);
            let offsets = match &fixed {
                Some(v) => v.clone(),
                None => loop {
                    let v = (0..=cfg.blocks)
                        .map(|_| field.random_element(&mut rng))
                        .collect::<Result<Vec<_>, _>>()?;
                    if v.iter().any(|e| !e.is_zero()) {
                        break v;
                    }
                },
            };
            let out = forgery_trial(cfg, &offsets, &mut rng)?;
            Ok(u64::from(out.mac_accepted && out.forged))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let q = field_size_f64(field);
    let bound = cfg.blocks as f64 / q;
    Ok(ForgeryStats {
        trials,
        accepted,
        bound,
        limit: rate_limit(bound, trials, 3.0),
    })
}

fn field_size_f64(field: &MersennePrime) -> f64 {
    2f64.powi(field.exponent() as i32) - 1.0
}

// ---------------------------------------------------------------------------
// Wrong-password reconstructions.

#[derive(Clone, Debug)]
pub struct WrongPasswordStats {
    pub trials: u64,
    /// Attempts whose reconstruction passed the MAC check.
    pub accepted: u64,
    /// l / q plus three standard errors.
    pub limit: f64,
    /// Histogram of the first reconstructed block (small fields only).
    pub first_block_counts: Option<Vec<u64>>,
}

/// Registers random data once, then reconstructs with a fresh wrong guess
/// and fresh pre-computation material on every attempt.
pub fn wrong_password_experiment(
    params: &SchemeParams,
    blocks: usize,
    trials: u64,
    seed: u64,
) -> Result<WrongPasswordStats, AdversaryError> {
    let mut rng = trial_rng(seed, u64::MAX);
    let password = random_password(params, &mut rng)?;
    let data = random_blocks(params, blocks, &mut rng)?;
    let bv = BlockVector {
        mac: Some(compute_mac(&data, &password)),
        blocks: data,
        byte_len: 0,
    };
    let bundles = share_blocks(&bv, &password, params, OwnerId(0), DataId(0), &mut rng)?;
    let histogram = params.field().exponent() <= 13;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<(bool, Option<usize>), AdversaryError> {
            let mut rng = trial_rng(seed, i);
            let guess = loop {
                let g = random_password(params, &mut rng)?;
                if g != password {
                    break g;
                }
            };
            let quorum = params.default_quorum();
            let blocks = bv.blocks.len() + 1;
            let contributions = quorum
                .members()
                .iter()
                .map(|&h| {
                    (0..blocks)
                        .map(|_| gen_precomputed_contribution(params, &quorum, h, &mut rng))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let run = Run {
                quorum,
                bundles: bundles.clone(),
                contributions,
            };
            let out = reconstruct(&run.responses(params, &guess, &mut rng)?, 0, params)?;
            let accepted = out.mac.as_ref() == Some(&compute_mac(&out.blocks, &guess));
            Ok((accepted, histogram.then(|| bucket(&out.blocks[0]))))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let accepted = outcomes.iter().filter(|o| o.0).count() as u64;
    let first_block_counts = histogram.then(|| {
        let mut counts = vec![0u64; field_size(params.field())];
        for (_, b) in &outcomes {
            counts[b.unwrap()] += 1;
        }
        counts
    });
    let bound = blocks as f64 / field_size_f64(params.field());
    Ok(WrongPasswordStats {
        trials,
        accepted,
        limit: rate_limit(bound, trials, 3.0),
        first_block_counts,
    })
}

// ---------------------------------------------------------------------------
// The view of corrupted servers during an impersonation attack.

/// Corrupted servers C and honest responders H with quorum L = C u H, the
/// registered polynomials, the attacker's password-share polynomial and
/// the corrupted servers' pre-computation contributions.
#[derive(Clone, Debug)]
pub struct AttackScenario {
    pub params: SchemeParams,
    pub corrupted: Vec<u32>,
    pub honest: Vec<u32>,
    pub password_poly: SharePolynomial,
    pub data_poly: SharePolynomial,
    pub guess_poly: SharePolynomial,
    /// f_{R_c} and f_{0_c} for each corrupted c, in `corrupted` order.
    pub corrupted_randomizers: Vec<SharePolynomial>,
    pub corrupted_zeros: Vec<SharePolynomial>,
    /// Arbitrary deviations (R, Z) added to what c sends to honest h.
    pub deviations: BTreeMap<(u32, u32), (FieldElement, FieldElement)>,
}

impl AttackScenario {
    pub fn new(
        params: SchemeParams,
        mut corrupted: Vec<u32>,
        mut honest: Vec<u32>,
        password_poly: SharePolynomial,
        data_poly: SharePolynomial,
        guess_poly: SharePolynomial,
    ) -> Result<Self, AdversaryError> {
        corrupted.sort_unstable();
        honest.sort_unstable();
        let t = params.t() as usize;
        if corrupted.len() != t || honest.len() != t + 1 {
            return Err(AdversaryError::InvalidScenario(format!(
                "need |C| = {t} and |H| = {}, got {} and {}",
                t + 1,
                corrupted.len(),
                honest.len()
            )));
        }
        let all: Vec<u32> = corrupted.iter().chain(&honest).copied().collect();
        Quorum::new(all, params.n()).map_err(|e| AdversaryError::InvalidScenario(e.to_string()))?;
        let field = params.field().clone();
        let zero_poly = |d: usize| SharePolynomial::from_coefficients(vec![field.zero(); d + 1]);
        Ok(Self {
            corrupted_randomizers: (0..t).map(|_| zero_poly(t)).collect::<Result<_, _>>()?,
            corrupted_zeros: (0..t).map(|_| zero_poly(2 * t)).collect::<Result<_, _>>()?,
            params,
            corrupted,
            honest,
            password_poly,
            data_poly,
            guess_poly,
            deviations: BTreeMap::new(),
        })
    }

    /// Random C, H, polynomials and (honest-looking) corrupted contributions.
    pub fn random<R: RngCore>(params: SchemeParams, wrong_guess: bool, rng: &mut R) -> Result<Self, AdversaryError> {
        let t = params.t() as usize;
        let field = params.field().clone();
        let mut points: Vec<u32> = (1..=params.n()).collect();
        points.shuffle(rng);
        let corrupted = points[..t].to_vec();
        let honest = points[t..2 * t + 1].to_vec();
        let password = field.random_element(rng)?;
        let password_poly = SharePolynomial::random(password.clone(), t, rng)?;
        let data_poly = SharePolynomial::random(field.random_element(rng)?, 2 * t, rng)?;
        let guess = if wrong_guess {
            loop {
                let g = field.random_element(rng)?;
                if g != password {
                    break g;
                }
            }
        } else {
            password
        };
        let guess_poly = SharePolynomial::random(guess, t, rng)?;
        let mut s = Self::new(params, corrupted, honest, password_poly, data_poly, guess_poly)?;
        for i in 0..t {
            s.corrupted_randomizers[i] = SharePolynomial::random(field.random_element(rng)?, t, rng)?;
            s.corrupted_zeros[i] = SharePolynomial::zero(&field, 2 * t, rng)?;
        }
        Ok(s)
    }

    pub fn quorum(&self) -> Quorum {
        let all = self.corrupted.iter().chain(&self.honest).copied().collect();
        Quorum::new(all, self.params.n()).expect("validated in new")
    }

    /// Delta_h = f_P(h) - f_{P'}(h) for h in H.
    pub fn deltas(&self) -> Vec<FieldElement> {
        self.honest
            .iter()
            .map(|&h| self.password_poly.evaluate(h as u64) - self.guess_poly.evaluate(h as u64))
            .collect()
    }

    /// f_P(0) - f_{P'}(0), recovered from the Delta_h by interpolation.
    pub fn password_gap(&self) -> Result<FieldElement, AdversaryError> {
        let shares: Vec<Share> = self.honest.iter().zip(self.deltas()).map(|(&h, d)| Share::new(h, d)).collect();
        Ok(interpolate_at_zero(&shares, self.params.t() as usize)?)
    }

    fn corrupted_sent(&self, c_index: usize, h: u32) -> (FieldElement, FieldElement) {
        let c = self.corrupted[c_index];
        let mut r = self.corrupted_randomizers[c_index].evaluate(h as u64);
        let mut z = self.corrupted_zeros[c_index].evaluate(h as u64);
        if let Some((dr, dz)) = self.deviations.get(&(c, h)) {
            r = r + dr;
            z = z + dz;
        }
        (r, z)
    }

    /// Draws fresh honest randomizer/zero polynomials and returns what the
    /// attacker sees: f_{R_h}(c), f_{0_h}(c) for h in H, c in C, and F_h.
    pub fn sample_view<R: RngCore>(&self, rng: &mut R) -> Result<View, AdversaryError> {
        let t = self.params.t() as usize;
        let field = self.params.field();
        let randomizers = self
            .honest
            .iter()
            .map(|_| SharePolynomial::random(field.random_element(rng)?, t, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let zeros = self
            .honest
            .iter()
            .map(|_| SharePolynomial::zero(field, 2 * t, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let mut randomizer_at_corrupted = Vec::new();
        let mut zero_at_corrupted = Vec::new();
        for (fr, fz) in randomizers.iter().zip(&zeros) {
            for &c in &self.corrupted {
                randomizer_at_corrupted.push(fr.evaluate(c as u64));
                zero_at_corrupted.push(fz.evaluate(c as u64));
            }
        }
        let deltas = self.deltas();
        let responses = self
            .honest
            .iter()
            .zip(&deltas)
            .map(|(&h, delta)| {
                let mut r = field.zero();
                let mut z = field.zero();
                for (fr, fz) in randomizers.iter().zip(&zeros) {
                    r = r + fr.evaluate(h as u64);
                    z = z + fz.evaluate(h as u64);
                }
                for ci in 0..self.corrupted.len() {
                    let (rc, zc) = self.corrupted_sent(ci, h);
                    r = r + rc;
                    z = z + zc;
                }
                delta * &r + z + self.data_poly.evaluate(h as u64)
            })
            .collect();
        Ok(View {
            randomizer_at_corrupted,
            zero_at_corrupted,
            responses,
        })
    }

    /// What an attacker running the corrupted servers honestly reconstructs
    /// from one attempt: F(0) over the whole quorum.
    pub fn attacker_reconstruction<R: RngCore>(&self, rng: &mut R) -> Result<FieldElement, AdversaryError> {
        let t = self.params.t() as usize;
        let field = self.params.field();
        let randomizers = self
            .honest
            .iter()
            .map(|_| SharePolynomial::random(field.random_element(rng)?, t, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let zeros = self
            .honest
            .iter()
            .map(|_| SharePolynomial::zero(field, 2 * t, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let mut shares = Vec::new();
        for j in self.quorum().members().iter().copied() {
            let x = j as u64;
            let mut r = field.zero();
            let mut z = field.zero();
            for (fr, fz) in randomizers.iter().zip(&zeros) {
                r = r + fr.evaluate(x);
                z = z + fz.evaluate(x);
            }
            for ci in 0..self.corrupted.len() {
                let (rc, zc) = self.corrupted_sent(ci, j);
                r = r + rc;
                z = z + zc;
            }
            let delta = self.password_poly.evaluate(x) - self.guess_poly.evaluate(x);
            shares.push(Share::new(j, delta * r + z + self.data_poly.evaluate(x)));
        }
        Ok(interpolate_at_zero(&shares, 2 * t)?)
    }
}

/// One attempt's observations: V_3, V_4 (row-major over H x C) and V_5.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct View {
    pub randomizer_at_corrupted: Vec<FieldElement>,
    pub zero_at_corrupted: Vec<FieldElement>,
    pub responses: Vec<FieldElement>,
}

impl View {
    pub fn coordinates(&self) -> impl Iterator<Item = &FieldElement> {
        self.randomizer_at_corrupted
            .iter()
            .chain(&self.zero_at_corrupted)
            .chain(&self.responses)
    }
}

#[derive(Clone, Debug)]
pub struct LeakageStats {
    /// Chi-square statistic per view coordinate (V_3, then V_4, then V_5).
    pub coordinate_statistics: Vec<f64>,
    /// Critical value for q - 1 degrees of freedom.
    pub coordinate_critical: f64,
    /// Joint statistic of the first two responses, over q^2 cells.
    pub response_pair_statistic: f64,
    pub response_pair_critical: f64,
}

impl LeakageStats {
    pub fn report_lines(&self, id: &str) -> Vec<ReportLine> {
        let mut lines: Vec<ReportLine> = self
            .coordinate_statistics
            .iter()
            .enumerate()
            .map(|(i, &s)| ReportLine::at_most(format!("{id}.coord{i}"), s, self.coordinate_critical))
            .collect();
        lines.push(ReportLine::at_most(
            format!("{id}.response_pair"),
            self.response_pair_statistic,
            self.response_pair_critical,
        ));
        lines
    }
}

/// Chi-square tests of the attacker's view over `trials` fresh attempts.
pub fn leakage_view_test(scenario: &AttackScenario, trials: u64, seed: u64) -> Result<LeakageStats, AdversaryError> {
    if scenario.password_gap()?.is_zero() {
        return Err(AdversaryError::Degenerate);
    }
    let q = field_size(scenario.params.field());
    let views = (0..trials)
        .into_par_iter()
        .map(|i| scenario.sample_view(&mut trial_rng(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let width = views[0].coordinates().count();
    let mut counts = vec![vec![0u64; q]; width];
    let mut pair = vec![0u64; q * q];
    for v in &views {
        for (k, e) in v.coordinates().enumerate() {
            counts[k][bucket(e)] += 1;
        }
        pair[bucket(&v.responses[0]) * q + bucket(&v.responses[1])] += 1;
    }
    Ok(LeakageStats {
        coordinate_statistics: counts.iter().map(|c| chi_square_uniform(c)).collect(),
        coordinate_critical: chi_square_critical(q - 1, SIGNIFICANCE),
        response_pair_statistic: chi_square_uniform(&pair),
        response_pair_critical: chi_square_critical(q * q - 1, SIGNIFICANCE),
    })
}

/// Chi-square statistics of the t corrupted servers' share values f_P(c),
/// f_D(c) over fresh registrations, for any guess.
pub fn registration_view_test(
    params: &SchemeParams,
    corrupted: &[u32],
    trials: u64,
    seed: u64,
) -> Result<Vec<f64>, AdversaryError> {
    let q = field_size(params.field());
    let mut rng = trial_rng(seed, u64::MAX);
    let password = params.field().random_element(&mut rng)?;
    let data = params.field().random_element(&mut rng)?;
    let t = params.t() as usize;
    let mut counts = vec![vec![0u64; q]; 2 * corrupted.len()];
    for i in 0..trials {
        let mut rng = trial_rng(seed, i);
        let fp = SharePolynomial::random(password.clone(), t, &mut rng)?;
        let fd = SharePolynomial::random(data.clone(), 2 * t, &mut rng)?;
        for (k, &c) in corrupted.iter().enumerate() {
            counts[2 * k][bucket(&fp.evaluate(c as u64))] += 1;
            counts[2 * k + 1][bucket(&fd.evaluate(c as u64))] += 1;
        }
    }
    Ok(counts.iter().map(|c| chi_square_uniform(c)).collect())
}

/// Everything t corrupted servers in the quorum observe during one honest
/// run: password and data shares, honest servers' randomizer and zero
/// shares, and their own password-request share.
fn honest_run_transcript<R: RngCore>(
    params: &SchemeParams,
    corrupted: &[u32],
    data: &FieldElement,
    password: &FieldElement,
    rng: &mut R,
) -> Result<Vec<FieldElement>, AdversaryError> {
    let bv = BlockVector {
        mac: Some(compute_mac(std::slice::from_ref(data), password)),
        blocks: vec![data.clone()],
        byte_len: 0,
    };
    let quorum = params.default_quorum();
    let run = Run::setup(params, &bv, password, quorum.clone(), rng)?;
    let requests = make_request(password, params, &quorum, rng)?;
    let mut out = Vec::new();
    for &c in corrupted {
        let bundle = &run.bundles[c as usize - 1];
        out.push(bundle.password_share.clone());
        out.extend(bundle.data_shares.iter().cloned());
        for (h, per_block) in quorum.members().iter().zip(&run.contributions) {
            if corrupted.contains(h) {
                continue;
            }
            for contribution in per_block {
                let (r, z) = contribution.share_for(c).ok_or(SchemeError::NotInQuorum(c))?;
                out.push(r.clone());
                out.push(z.clone());
            }
        }
        let req = requests.iter().find(|r| r.holder == c).ok_or(SchemeError::NotInQuorum(c))?;
        out.push(req.password_share.clone());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TranscriptStats {
    /// Two-sample statistic and degrees of freedom per transcript coordinate.
    pub statistics: Vec<(f64, usize)>,
}

impl TranscriptStats {
    pub fn report_lines(&self, id: &str) -> Vec<ReportLine> {
        self.statistics
            .iter()
            .enumerate()
            .map(|(i, &(s, dof))| {
                ReportLine::at_most(format!("{id}.coord{i}"), s, chi_square_critical(dof.max(1), SIGNIFICANCE))
            })
            .collect()
    }
}

/// Compares the corrupted servers' transcripts under two different
/// (data, password) pairs with a two-sample chi-square per coordinate.
pub fn transcript_view_test(
    params: &SchemeParams,
    corrupted: &[u32],
    first: (&FieldElement, &FieldElement),
    second: (&FieldElement, &FieldElement),
    trials: u64,
    seed: u64,
) -> Result<TranscriptStats, AdversaryError> {
    let q = field_size(params.field());
    let histogram = |(data, password): (&FieldElement, &FieldElement), stream: u64| -> Result<Vec<Vec<u64>>, AdversaryError> {
        let transcripts = (0..trials)
            .into_par_iter()
            .map(|i| honest_run_transcript(params, corrupted, data, password, &mut trial_rng(seed ^ stream, i)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut counts = vec![vec![0u64; q]; transcripts[0].len()];
        for tr in &transcripts {
            for (k, e) in tr.iter().enumerate() {
                counts[k][bucket(e)] += 1;
            }
        }
        Ok(counts)
    };
    let a = histogram(first, 0x5a5a)?;
    let b = histogram(second, 0xa5a5)?;
    Ok(TranscriptStats {
        statistics: a.iter().zip(&b).map(|(x, y)| chi_square_two_sample(x, y)).collect(),
    })
}

// ---------------------------------------------------------------------------
// Determinant machinery.

pub type Matrix = Vec<Vec<FieldElement>>;

/// The blocks of M = (A 0 / E K / 0 B).
///
/// A: t x (t+1) Vandermonde rows (1, c, .., c^t); B: t x 2t rows
/// (c, .., c^2t); E: (t+1) x (t+1) rows Delta_h (1, h, .., h^t);
/// K: (t+1) x 2t rows (h, .., h^2t).
#[derive(Clone, Debug)]
pub struct DetMInput {
    pub a: Matrix,
    pub b: Matrix,
    pub e: Matrix,
    pub k: Matrix,
}

fn powers(field: &MersennePrime, x: u32, from: u32, to: u32) -> Vec<FieldElement> {
    let base = field.from_u64(x as u64);
    (from..=to).map(|p| base.pow(&p.into())).collect()
}

impl DetMInput {
    pub fn from_scenario(s: &AttackScenario) -> Self {
        let t = s.params.t();
        let f = s.params.field();
        let a = s.corrupted.iter().map(|&c| powers(f, c, 0, t)).collect();
        let b = s.corrupted.iter().map(|&c| powers(f, c, 1, 2 * t)).collect();
        let e = s
            .honest
            .iter()
            .zip(s.deltas())
            .map(|(&h, d)| powers(f, h, 0, t).into_iter().map(|p| &d * &p).collect())
            .collect();
        let k = s.honest.iter().map(|&h| powers(f, h, 1, 2 * t)).collect();
        Self { a, b, e, k }
    }

    /// The square (3t + 1) matrix M.
    pub fn assemble(&self) -> Result<Matrix, AdversaryError> {
        let t = self.a.len();
        let dims_ok = self.a.iter().all(|r| r.len() == t + 1)
            && self.b.len() == t
            && self.b.iter().all(|r| r.len() == 2 * t)
            && self.e.len() == t + 1
            && self.e.iter().all(|r| r.len() == t + 1)
            && self.k.len() == t + 1
            && self.k.iter().all(|r| r.len() == 2 * t);
        if t == 0 || !dims_ok {
            return Err(AdversaryError::Dimension(format!(
                "A {}x?, B {}x?, E {}x?, K {}x? do not fit t = {t}",
                self.a.len(),
                self.b.len(),
                self.e.len(),
                self.k.len()
            )));
        }
        let field = self.a[0][0].field().clone();
        let zeros = |n: usize| vec![field.zero(); n];
        let mut m = Vec::with_capacity(3 * t + 1);
        for row in &self.a {
            m.push(row.iter().cloned().chain(zeros(2 * t)).collect());
        }
        for (e, k) in self.e.iter().zip(&self.k) {
            m.push(e.iter().chain(k).cloned().collect());
        }
        for row in &self.b {
            m.push(zeros(t + 1).into_iter().chain(row.iter().cloned()).collect());
        }
        Ok(m)
    }
}

/// Determinant over GF(q) by Gaussian elimination.
pub fn determinant(matrix: &Matrix) -> Result<FieldElement, AdversaryError> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|r| r.len() != n) {
        return Err(AdversaryError::Dimension("matrix is not square".into()));
    }
    let field = matrix[0][0].field().clone();
    let mut m = matrix.clone();
    let mut det = field.one();
    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| !m[r][col].is_zero()) else {
            return Ok(field.zero());
        };
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det = det * &m[col][col];
        let inv = m[col][col].inv()?;
        for r in col + 1..n {
            if m[r][col].is_zero() {
                continue;
            }
            let factor = &m[r][col] * &inv;
            for c in col..n {
                let sub = &factor * &m[col][c];
                m[r][c] = &m[r][c] - &sub;
            }
        }
    }
    Ok(det)
}

pub fn det_m_bruteforce(input: &DetMInput) -> Result<FieldElement, AdversaryError> {
    determinant(&input.assemble()?)
}

/// (-1)^t (prod c) (prod_{c'>c} (c'-c))^2 (prod_h prod_c (c-h))
/// (prod_{h'>h} (h'-h)) (f_P(0) - f_{P'}(0)).
pub fn det_m_closed_form(s: &AttackScenario) -> Result<FieldElement, AdversaryError> {
    let f = s.params.field();
    let x = |v: u32| f.from_u64(v as u64);
    let mut acc = if s.params.t() % 2 == 0 { f.one() } else { -f.one() };
    for &c in &s.corrupted {
        acc = acc * x(c);
    }
    for (i, &c) in s.corrupted.iter().enumerate() {
        for &c2 in &s.corrupted[i + 1..] {
            let d = x(c2) - x(c);
            acc = acc * &d * &d;
        }
    }
    for &h in &s.honest {
        for &c in &s.corrupted {
            acc = acc * (x(c) - x(h));
        }
    }
    for (i, &h) in s.honest.iter().enumerate() {
        for &h2 in &s.honest[i + 1..] {
            acc = acc * (x(h2) - x(h));
        }
    }
    Ok(acc * s.password_gap()?)
}

// ---------------------------------------------------------------------------
// Standard battery.

/// Trial counts for [`standard_report`].
#[derive(Clone, Copy, Debug)]
pub struct BatterySize {
    pub monte_carlo_trials: u64,
    pub determinant_scenarios: u64,
}

impl Default for BatterySize {
    fn default() -> Self {
        Self {
            monte_carlo_trials: 100_000,
            determinant_scenarios: 1_000,
        }
    }
}

/// Runs every check at q = 31 (and the forgery check at q = 8191) and
/// collects one report line per statistic.
pub fn standard_report(size: BatterySize, seed: u64) -> Result<Report, AdversaryError> {
    let mut report = Report::default();
    let gf31 = MersennePrime::new(5)?;
    let p3 = SchemeParams::new(3, 1, gf31.clone())?;

    let forgery = forgery_experiment(
        &ForgeryConfig::new(p3.clone(), 3, OffsetAttack::Random),
        size.monte_carlo_trials,
        seed,
    )?;
    report.push(forgery.report_line("forgery.q31.l3"));
    let gf8191 = MersennePrime::new(13)?;
    let forgery = forgery_experiment(
        &ForgeryConfig::new(SchemeParams::new(3, 1, gf8191)?, 10, OffsetAttack::Random),
        size.monte_carlo_trials,
        seed + 1,
    )?;
    report.push(forgery.report_line("forgery.q8191.l10"));

    let wrong = wrong_password_experiment(&p3, 3, size.monte_carlo_trials, seed + 2)?;
    report.push(ReportLine::at_most(
        "wrong_password.q31.l3",
        wrong.accepted as f64 / wrong.trials as f64,
        wrong.limit,
    ));
    if let Some(counts) = &wrong.first_block_counts {
        report.push(ReportLine::at_most(
            "wrong_password.q31.uniformity",
            chi_square_uniform(counts),
            chi_square_critical(counts.len() - 1, SIGNIFICANCE),
        ));
    }

    let mut rng = trial_rng(seed + 3, 0);
    let scenario = AttackScenario::random(p3.clone(), true, &mut rng)?;
    for line in leakage_view_test(&scenario, size.monte_carlo_trials, seed + 4)?.report_lines("leakage.q31.t1") {
        report.push(line);
    }

    let (mut agree, mut total) = (0u64, 0u64);
    for t in [1u32, 2] {
        let params = SchemeParams::new(12, t, gf31.clone())?;
        for _ in 0..size.determinant_scenarios {
            let s = AttackScenario::random(params.clone(), rng.gen_bool(0.9), &mut rng)?;
            total += 1;
            agree += u64::from(det_m_bruteforce(&DetMInput::from_scenario(&s))? == det_m_closed_form(&s)?);
        }
    }
    report.push(ReportLine::at_most("det_m.disagreements", (total - agree) as f64, 0.0));
    Ok(report)
}
