//! Shamir sharing over a Mersenne field: secret, random and zero sharings,
//! and Lagrange reconstruction of f(0).

use std::collections::BTreeSet;

use rand::RngCore;
use thiserror::Error;

use crate::field::{FieldElement, FieldError, MersennePrime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("{n} shares need more than q - 1 distinct nonzero points")]
    TooManyShares { n: u64 },
    #[error("evaluation point {0} appears more than once")]
    DuplicatePoint(u32),
    #[error("evaluation point 0 would reveal the secret")]
    ZeroPoint,
    #[error("expected {expected} shares, got {got}")]
    WrongShareCount { expected: usize, got: usize },
    #[error("polynomial needs at least one coefficient")]
    EmptyPolynomial,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Coefficients c_0 .. c_d, low to high, of a polynomial of degree at most d.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharePolynomial {
    coefficients: Vec<FieldElement>,
}

impl SharePolynomial {
    /// `secret` as constant term, `degree` uniform higher coefficients.
    pub fn random<R: RngCore + ?Sized>(
        secret: FieldElement,
        degree: usize,
        rng: &mut R,
    ) -> Result<Self, SharingError> {
        let field = secret.field().clone();
        let mut coefficients = Vec::with_capacity(degree + 1);
        coefficients.push(secret);
        for _ in 0..degree {
            coefficients.push(field.random_element(rng)?);
        }
        Ok(Self { coefficients })
    }

    /// Random polynomial with constant term forced to zero.
    pub fn zero<R: RngCore + ?Sized>(
        field: &MersennePrime,
        degree: usize,
        rng: &mut R,
    ) -> Result<Self, SharingError> {
        Self::random(field.zero(), degree, rng)
    }

    pub fn from_coefficients(coefficients: Vec<FieldElement>) -> Result<Self, SharingError> {
        let Some(first) = coefficients.first() else {
            return Err(SharingError::EmptyPolynomial);
        };
        for c in &coefficients[1..] {
            if c.field() != first.field() {
                return Err(FieldError::FieldMismatch(
                    first.field().exponent(),
                    c.field().exponent(),
                )
                .into());
            }
        }
        Ok(Self { coefficients })
    }

    /// Convenience for tests and fixed traces over small fields.
    pub fn from_u64s(field: &MersennePrime, coefficients: &[u64]) -> Result<Self, SharingError> {
        Self::from_coefficients(coefficients.iter().map(|&c| field.from_u64(c)).collect())
    }

    pub fn field(&self) -> &MersennePrime {
        self.coefficients[0].field()
    }

    /// The degree bound d (length minus one; leading coefficients may be zero).
    pub fn degree_bound(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[FieldElement] {
        &self.coefficients
    }

    pub fn constant(&self) -> &FieldElement {
        &self.coefficients[0]
    }

    pub fn evaluate(&self, x: u64) -> FieldElement {
        self.evaluate_at(&self.field().from_u64(x))
    }

    /// Horner evaluation.
    pub fn evaluate_at(&self, x: &FieldElement) -> FieldElement {
        let mut acc = self.field().zero();
        for c in self.coefficients.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    /// Evaluations at each of `points`.
    pub fn shares_at(&self, points: &[u32]) -> Result<Vec<Share>, SharingError> {
        check_points(self.field(), points.iter().copied())?;
        Ok(points
            .iter()
            .map(|&point| Share {
                point,
                value: self.evaluate(point as u64),
            })
            .collect())
    }
}

/// f(j) for a public point j.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Share {
    pub point: u32,
    pub value: FieldElement,
}

impl Share {
    pub fn new(point: u32, value: FieldElement) -> Self {
        Self { point, value }
    }
}

fn check_points(
    field: &MersennePrime,
    points: impl Iterator<Item = u32>,
) -> Result<(), SharingError> {
    let mut seen = BTreeSet::new();
    for p in points {
        if p == 0 {
            return Err(SharingError::ZeroPoint);
        }
        if field.from_u64(p as u64).to_u64() != Some(p as u64) {
            return Err(SharingError::TooManyShares { n: p as u64 });
        }
        if !seen.insert(p) {
            return Err(SharingError::DuplicatePoint(p));
        }
    }
    Ok(())
}

fn check_count(field: &MersennePrime, n: u32) -> Result<(), SharingError> {
    let fits = field.from_u64(n as u64).to_u64() == Some(n as u64);
    if !fits {
        return Err(SharingError::TooManyShares { n: n as u64 });
    }
    Ok(())
}

/// Shares of `secret` at points 1..=n from a fresh polynomial of degree at most `degree`.
pub fn make_shares<R: RngCore + ?Sized>(
    secret: FieldElement,
    degree: usize,
    n: u32,
    rng: &mut R,
) -> Result<Vec<Share>, SharingError> {
    check_count(secret.field(), n)?;
    let poly = SharePolynomial::random(secret, degree, rng)?;
    let points: Vec<u32> = (1..=n).collect();
    poly.shares_at(&points)
}

/// Shares of zero at points 1..=n.
pub fn make_zero_shares<R: RngCore + ?Sized>(
    field: &MersennePrime,
    degree: usize,
    n: u32,
    rng: &mut R,
) -> Result<Vec<Share>, SharingError> {
    make_shares(field.zero(), degree, n, rng)
}

/// Lagrange weights w_j with f(0) = sum_j w_j f(x_j) for distinct nonzero x_j.
pub fn lagrange_weights_at_zero(
    field: &MersennePrime,
    points: &[u32],
) -> Result<Vec<FieldElement>, SharingError> {
    check_points(field, points.iter().copied())?;
    let xs: Vec<FieldElement> = points.iter().map(|&p| field.from_u64(p as u64)).collect();
    let mut weights = Vec::with_capacity(xs.len());
    for (j, xj) in xs.iter().enumerate() {
        let mut num = field.one();
        let mut den = field.one();
        for (k, xk) in xs.iter().enumerate() {
            if k != j {
                num = num * xk;
                den = den * (xk - xj);
            }
        }
        weights.push(num * den.inv()?);
    }
    Ok(weights)
}

/// f(0) of the unique polynomial of degree at most `degree` through exactly
/// `degree + 1` shares.
pub fn interpolate_at_zero(shares: &[Share], degree: usize) -> Result<FieldElement, SharingError> {
    if shares.len() != degree + 1 {
        return Err(SharingError::WrongShareCount {
            expected: degree + 1,
            got: shares.len(),
        });
    }
    let field = shares[0].value.field().clone();
    let points: Vec<u32> = shares.iter().map(|s| s.point).collect();
    let weights = lagrange_weights_at_zero(&field, &points)?;
    let mut acc = field.zero();
    for (w, s) in weights.iter().zip(shares) {
        acc = acc + s.value.checked_mul(w)?;
    }
    Ok(acc)
}
