//! Arithmetic in GF(q) for Mersenne primes q = 2^m - 1.
//!
//! Every element carries a handle to its field so that mixing elements of
//! different fields is caught. Reduction folds the high bits onto the low
//! bits using 2^m = 1 (mod q) instead of dividing.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;
use thiserror::Error;

/// Exponents m for which 2^m - 1 is prime and that this crate accepts.
///
/// The small entries exist for tests and for the transport tag field.
pub const MERSENNE_EXPONENTS: [u32; 15] = [
    5, 13, 31, 61, 521, 1279, 2203, 3217, 4253, 9941, 11213, 19937, 23209, 44497, 86243,
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("2^{0} - 1 is not a supported Mersenne prime")]
    UnsupportedExponent(u32),
    #[error("elements belong to different fields (2^{0} - 1 vs 2^{1} - 1)")]
    FieldMismatch(u32, u32),
    #[error("zero has no multiplicative inverse")]
    NoInverse,
    #[error("encoded value is not below the modulus")]
    OutOfRange,
    #[error("encoding has {got} octets, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("entropy source exhausted")]
    EntropyExhausted,
}

struct Modulus {
    exponent: u32,
    q: BigUint,
    octets: usize,
}

/// A Mersenne prime q = 2^m - 1 from [`MERSENNE_EXPONENTS`].
///
/// Cheap to clone; equality compares the exponent.
#[derive(Clone)]
pub struct MersennePrime(Arc<Modulus>);

impl MersennePrime {
    pub fn new(exponent: u32) -> Result<Self, FieldError> {
        if !MERSENNE_EXPONENTS.contains(&exponent) {
            return Err(FieldError::UnsupportedExponent(exponent));
        }
        let q = (BigUint::one() << exponent as usize) - BigUint::one();
        Ok(Self(Arc::new(Modulus {
            exponent,
            q,
            octets: (exponent as usize).div_ceil(8),
        })))
    }

    /// The exponent m.
    pub fn exponent(&self) -> u32 {
        self.0.exponent
    }

    /// The modulus q = 2^m - 1.
    pub fn modulus(&self) -> &BigUint {
        &self.0.q
    }

    /// Width of the fixed little-endian element encoding, ceil(m / 8).
    pub fn element_len(&self) -> usize {
        self.0.octets
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement {
            value: BigUint::zero(),
            field: self.clone(),
        }
    }

    pub fn one(&self) -> FieldElement {
        FieldElement {
            value: BigUint::one(),
            field: self.clone(),
        }
    }

    pub fn from_u64(&self, v: u64) -> FieldElement {
        self.reduce(BigUint::from(v))
    }

    /// Maps any non-negative integer to its canonical residue.
    pub fn reduce(&self, x: BigUint) -> FieldElement {
        FieldElement {
            value: self.fold(x),
            field: self.clone(),
        }
    }

    /// Wraps a value already known to be below q.
    pub fn element(&self, value: BigUint) -> Result<FieldElement, FieldError> {
        if value >= self.0.q {
            return Err(FieldError::OutOfRange);
        }
        Ok(FieldElement {
            value,
            field: self.clone(),
        })
    }

    fn fold(&self, mut x: BigUint) -> BigUint {
        let m = self.0.exponent as u64;
        while x.bits() > m {
            let high = &x >> m as usize;
            x &= &self.0.q;
            x += high;
        }
        if x == self.0.q {
            x.set_zero();
        }
        x
    }

    pub fn element_from_bytes(&self, bytes: &[u8]) -> Result<FieldElement, FieldError> {
        if bytes.len() != self.0.octets {
            return Err(FieldError::WrongLength {
                expected: self.0.octets,
                got: bytes.len(),
            });
        }
        self.element(BigUint::from_bytes_le(bytes))
    }

    /// Uniform element by rejection sampling of m-bit draws.
    ///
    /// Each draw reads ceil(m/8) octets, keeps the low m bits and rejects
    /// the all-ones pattern (which equals q).
    pub fn random_element<R: RngCore + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<FieldElement, FieldError> {
        let mut buf = vec![0u8; self.0.octets];
        let spare = self.0.octets * 8 - self.0.exponent as usize;
        loop {
            rng.try_fill_bytes(&mut buf)
                .map_err(|_| FieldError::EntropyExhausted)?;
            if let Some(last) = buf.last_mut() {
                *last &= 0xffu8 >> spare;
            }
            let v = BigUint::from_bytes_le(&buf);
            if v != self.0.q {
                return Ok(FieldElement {
                    value: v,
                    field: self.clone(),
                });
            }
        }
    }

    /// Uniform element below 2^bits (bits < m), as used for data limbs.
    pub fn random_below_power_of_two<R: RngCore + ?Sized>(
        &self,
        bits: u32,
        rng: &mut R,
    ) -> Result<FieldElement, FieldError> {
        debug_assert!(bits < self.0.exponent);
        let octets = (bits as usize).div_ceil(8);
        let mut buf = vec![0u8; octets];
        rng.try_fill_bytes(&mut buf)
            .map_err(|_| FieldError::EntropyExhausted)?;
        let spare = octets * 8 - bits as usize;
        if let Some(last) = buf.last_mut() {
            *last &= 0xffu8 >> spare;
        }
        self.element(BigUint::from_bytes_le(&buf))
    }
}

impl PartialEq for MersennePrime {
    fn eq(&self, other: &Self) -> bool {
        self.0.exponent == other.0.exponent
    }
}

impl Eq for MersennePrime {}

impl fmt::Debug for MersennePrime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF(2^{} - 1)", self.0.exponent)
    }
}

/// Canonical residue modulo a Mersenne prime: 0 <= value < q.
#[derive(Clone, PartialEq, Eq)]
pub struct FieldElement {
    value: BigUint,
    field: MersennePrime,
}

impl FieldElement {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn field(&self) -> &MersennePrime {
        &self.field
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    /// Small values as `u64`, if they fit.
    pub fn to_u64(&self) -> Option<u64> {
        self.value.to_u64()
    }

    /// Fixed-width little-endian encoding of ceil(m/8) octets.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.value.to_bytes_le();
        out.resize(self.field.element_len(), 0);
        out
    }

    fn check(&self, other: &Self) -> Result<(), FieldError> {
        if self.field != other.field {
            return Err(FieldError::FieldMismatch(
                self.field.exponent(),
                other.field.exponent(),
            ));
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, FieldError> {
        self.check(other)?;
        Ok(self.field.reduce(&self.value + &other.value))
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.check(other)?;
        let value = if self.value >= other.value {
            &self.value - &other.value
        } else {
            &self.value + self.field.modulus() - &other.value
        };
        Ok(FieldElement {
            value,
            field: self.field.clone(),
        })
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, FieldError> {
        self.check(other)?;
        Ok(self.field.reduce(&self.value * &other.value))
    }

    pub fn square(&self) -> Self {
        self.field.reduce(&self.value * &self.value)
    }

    /// Square-and-multiply exponentiation.
    pub fn pow(&self, exponent: &BigUint) -> Self {
        let mut acc = self.field.one();
        for i in (0..exponent.bits()).rev() {
            acc = acc.square();
            if exponent.bit(i) {
                acc = &acc * self;
            }
        }
        acc
    }

    /// Multiplicative inverse.
    ///
    /// Values that fit a machine word (Lagrange denominators, small test
    /// fields) take an exact-division shortcut; everything else goes
    /// through Fermat, a^(q-2).
    pub fn inv(&self) -> Result<Self, FieldError> {
        if self.is_zero() {
            return Err(FieldError::NoInverse);
        }
        if let Some(d) = self.value.to_u64() {
            return Ok(self.inv_word(d));
        }
        // Negated small values, as Lagrange denominators produce: -(d^-1).
        if let Some(d) = (self.field.modulus() - &self.value).to_u64() {
            return Ok(-self.inv_word(d));
        }
        let value = self.value.modinv(self.field.modulus()).ok_or(FieldError::NoInverse)?;
        Ok(FieldElement {
            value,
            field: self.field.clone(),
        })
    }

    #[cfg(test)]
    pub(crate) fn inv_fermat(&self) -> Self {
        let e = self.field.modulus() - BigUint::from(2u32);
        self.pow(&e)
    }

    // Finds k < d with d | 1 + k*q; the inverse is then (1 + k*q) / d < q.
    fn inv_word(&self, d: u64) -> Self {
        if d == 1 {
            return self.field.one();
        }
        let q_mod_d = (self.field.modulus() % d).to_u64().unwrap_or(0);
        let k = (d - inverse_mod_word(q_mod_d, d)) % d;
        let value = (BigUint::from(k) * self.field.modulus() + 1u32) / d;
        FieldElement {
            value,
            field: self.field.clone(),
        }
    }

    pub fn checked_div(&self, other: &Self) -> Result<Self, FieldError> {
        self.check(other)?;
        Ok(self * &other.inv()?)
    }
}

// a^-1 mod d for gcd(a, d) = 1, via extended Euclid on machine words.
fn inverse_mod_word(a: u64, d: u64) -> u64 {
    let (mut r0, mut r1) = (d as i128, a as i128);
    let (mut s0, mut s1) = (0i128, 1i128);
    while r1 != 0 {
        let quot = r0 / r1;
        (r0, r1) = (r1, r0 - quot * r1);
        (s0, s1) = (s1, s0 - quot * s1);
    }
    s0.rem_euclid(d as i128) as u64
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.value.bits() <= 64 {
            write!(f, "{}", self.value)
        } else {
            write!(f, "<{}-bit element>", self.value.bits())
        }
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

// Operator forms panic on field mismatch; use the checked_* methods at
// trust boundaries.
macro_rules! forward_binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait<&FieldElement> for &FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: &FieldElement) -> FieldElement {
                self.$checked(rhs).expect("field mismatch")
            }
        }
        impl $trait<FieldElement> for FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: FieldElement) -> FieldElement {
                (&self).$checked(&rhs).expect("field mismatch")
            }
        }
        impl $trait<&FieldElement> for FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: &FieldElement) -> FieldElement {
                (&self).$checked(rhs).expect("field mismatch")
            }
        }
    };
}

forward_binop!(Add, add, checked_add);
forward_binop!(Sub, sub, checked_sub);
forward_binop!(Mul, mul, checked_mul);

impl Neg for &FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        self.field.zero() - self
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        -&self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn gf31() -> MersennePrime {
        MersennePrime::new(5).unwrap()
    }

    /// Replays fixed octets, then reports exhaustion.
    struct StubBits(Vec<u8>);

    impl RngCore for StubBits {
        fn next_u32(&mut self) -> u32 {
            unimplemented!()
        }
        fn next_u64(&mut self) -> u64 {
            unimplemented!()
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            self.try_fill_bytes(dest).unwrap()
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
            if self.0.len() < dest.len() {
                return Err(rand::Error::new("stub drained"));
            }
            let rest = self.0.split_off(dest.len());
            dest.copy_from_slice(&self.0);
            self.0 = rest;
            Ok(())
        }
    }

    #[test]
    fn rejects_non_mersenne_exponents() {
        assert_eq!(
            MersennePrime::new(10041).unwrap_err(),
            FieldError::UnsupportedExponent(10041)
        );
        assert!(MersennePrime::new(7).is_err());
        let f = MersennePrime::new(521).unwrap();
        assert_eq!(f.modulus().bits(), 521);
        assert_eq!(f.element_len(), 66);
    }

    #[test]
    fn reduce_examples() {
        let f = gf31();
        assert_eq!(f.reduce(35u32.into()).to_u64(), Some(4));
        assert_eq!(f.reduce(31u32.into()).to_u64(), Some(0));
        assert_eq!(f.reduce(1022u32.into()).to_u64(), Some(30));
    }

    #[test]
    fn add_mul_examples() {
        let f = gf31();
        assert_eq!((f.from_u64(25) + f.from_u64(10)).to_u64(), Some(4));
        assert_eq!((f.from_u64(30) + f.from_u64(1)).to_u64(), Some(0));
        assert_eq!((f.from_u64(6) * f.from_u64(7)).to_u64(), Some(11));
        assert_eq!((f.zero() + f.from_u64(9)).to_u64(), Some(9));
        assert_eq!((f.one() * f.from_u64(9)).to_u64(), Some(9));

        let big = MersennePrime::new(521).unwrap();
        let two_520 = big.reduce(BigUint::one() << 520usize);
        assert_eq!(two_520 * big.from_u64(2), big.one());
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let a = gf31().from_u64(3);
        let b = MersennePrime::new(13).unwrap().from_u64(3);
        assert_eq!(a.checked_add(&b), Err(FieldError::FieldMismatch(5, 13)));
        assert!(a.checked_mul(&b).is_err());
    }

    #[test]
    fn inverse_examples() {
        let f = gf31();
        assert_eq!(f.from_u64(2).inv().unwrap().to_u64(), Some(16));
        assert_eq!(f.one().inv().unwrap(), f.one());
        assert_eq!(f.zero().inv(), Err(FieldError::NoInverse));
    }

    #[test]
    fn both_inverse_routes_agree_with_euclid_over_gf31() {
        let f = gf31();
        for a in 1..31u64 {
            let expected = inverse_mod_word(a, 31);
            let e = f.from_u64(a);
            assert_eq!(e.inv().unwrap().to_u64(), Some(expected));
            assert_eq!(e.inv_fermat().to_u64(), Some(expected));
        }
    }

    #[test]
    fn word_inverse_matches_fermat_at_large_exponent() {
        let f = MersennePrime::new(1279).unwrap();
        for d in [2u64, 3, 6, 12, 7919, u64::MAX / 3] {
            let e = f.from_u64(d);
            assert_eq!(e.inv().unwrap(), e.inv_fermat());
            assert_eq!(e.inv().unwrap() * &e, f.one());
        }
    }

    #[test]
    fn every_inverse_route_matches_fermat() {
        let f = MersennePrime::new(1279).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut cases: Vec<FieldElement> = [1u64, 2, 5, 12].iter().map(|&d| -f.from_u64(d)).collect();
        cases.extend((0..8).map(|_| f.random_element(&mut rng).unwrap()));
        for e in cases {
            assert_eq!(e.inv().unwrap(), e.inv_fermat());
        }
    }

    #[test]
    fn encoding_examples() {
        let f = gf31();
        assert_eq!(f.from_u64(4).to_bytes(), vec![0x04]);
        assert_eq!(f.element_from_bytes(&[0x1f]), Err(FieldError::OutOfRange));
        assert_eq!(
            f.element_from_bytes(&[0x01, 0x00]),
            Err(FieldError::WrongLength {
                expected: 1,
                got: 2
            })
        );
        for v in 0..31 {
            let e = f.from_u64(v);
            assert_eq!(f.element_from_bytes(&e.to_bytes()).unwrap(), e);
        }
    }

    #[test]
    fn random_element_uses_stubbed_bits() {
        let f = gf31();
        let mut rng = StubBits(vec![0b00101]);
        assert_eq!(f.random_element(&mut rng).unwrap().to_u64(), Some(5));
        let mut rng = StubBits(vec![0b11111, 0b00011]);
        assert_eq!(f.random_element(&mut rng).unwrap().to_u64(), Some(3));
        // High bits beyond m are masked off before the rejection test.
        let mut rng = StubBits(vec![0b1110_0010]);
        assert_eq!(f.random_element(&mut rng).unwrap().to_u64(), Some(2));
        let mut rng = StubBits(vec![0b11111]);
        assert_eq!(f.random_element(&mut rng), Err(FieldError::EntropyExhausted));
    }

    #[test]
    fn random_elements_are_canonical() {
        let f = MersennePrime::new(521).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..200 {
            let e = f.random_element(&mut rng).unwrap();
            assert!(e.value() < f.modulus());
            assert_eq!(e.to_bytes().len(), 66);
        }
    }
}
