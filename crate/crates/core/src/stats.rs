//! Goodness-of-fit helpers shared by the adversary harness and tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson statistic of `counts` against the uniform distribution.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Two-sample statistic for histograms over the same bins.
///
/// Bins empty in both samples are skipped; the degrees of freedom are the
/// number of bins used minus one.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, usize) {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let ka = (nb as f64 / na as f64).sqrt();
    let kb = 1.0 / ka;
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        bins += 1;
        let d = ka * x as f64 - kb * y as f64;
        stat += d * d / (x + y) as f64;
    }
    (stat, bins.saturating_sub(1))
}

/// Upper critical value of the chi-square distribution: P(X > value) = significance.
pub fn chi_square_critical(dof: usize, significance: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - significance)
}

/// p + k * sqrt(p (1 - p) / trials), the acceptance limit for an observed
/// rate whose true value is at most p.
pub fn rate_limit(p: f64, trials: u64, k: f64) -> f64 {
    p + k * (p * (1.0 - p) / trials as f64).sqrt()
}
