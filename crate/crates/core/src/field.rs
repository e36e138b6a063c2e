//! Prime-field elements over the BN254 scalar field.
//!
//! Arithmetic is delegated to `ark-bn254`; this module pins the modulus,
//! validates it at configuration time and fixes the 32-byte little-endian
//! wire encoding used by every binary artifact.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;
use std::sync::OnceLock;

use ark_bn254::Fr;
use ark_ff::{BigInteger, Field, One, PrimeField, Zero};
use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Decimal form of the default modulus (the BN254 scalar-field order).
pub const DEFAULT_MODULUS: &str =
    "21888242871839275222246405745257275088548364400416034343698204186575808495617";

/// Byte width of a serialized field element.
pub const ELEMENT_BYTES: usize = 32;

/// Element of the prime field, always reduced into `[0, p)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FieldElement(Fr);

/// The modulus the arithmetic backend actually implements.
pub fn modulus() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| BigUint::from_bytes_le(&Fr::MODULUS.to_bytes_le()))
}

fn half_modulus() -> &'static BigUint {
    static H: OnceLock<BigUint> = OnceLock::new();
    H.get_or_init(|| modulus() >> 1)
}

/// Checks a configured modulus: prime, wider than 250 bits, and equal to the
/// field order of the arithmetic backend.
pub fn check_modulus(p: &BigUint) -> Result<()> {
    if p.bits() <= 250 {
        return Err(Error::InvalidModulus(format!("{p} has only {} bits", p.bits())));
    }
    if !is_probable_prime(p, 40) {
        return Err(Error::InvalidModulus(format!("{p} is composite")));
    }
    if p != modulus() {
        return Err(Error::InvalidModulus(format!(
            "{p} differs from the backend field order {}",
            modulus()
        )));
    }
    Ok(())
}

/// Parses and validates a decimal modulus string.
pub fn parse_modulus(s: &str) -> Result<BigUint> {
    let p = BigUint::from_str(s.trim())
        .map_err(|e| Error::InvalidModulus(format!("{s}: {e}")))?;
    check_modulus(&p)?;
    Ok(p)
}

/// Miller-Rabin with the first `rounds` primes as witnesses.
pub fn is_probable_prime(n: &BigUint, rounds: usize) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    let small: Vec<u32> = (2u32..)
        .filter(|k| (2..*k).take_while(|j| j * j <= *k).all(|j| k % j != 0))
        .take(rounds.max(1))
        .collect();
    for &q in &small {
        let q = BigUint::from(q);
        if *n == q {
            return true;
        }
        if (n % &q).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for &a in &small {
        let mut x = BigUint::from(a).modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

impl FieldElement {
    pub const ZERO: Self = FieldElement(ark_ff::MontFp!("0"));
    pub const ONE: Self = FieldElement(ark_ff::MontFp!("1"));

    pub fn from_u64(v: u64) -> Self {
        FieldElement(Fr::from(v))
    }

    /// Signed embedding: negative `v` maps to `p - |v|`.
    pub fn from_i128(v: i128) -> Self {
        let mag = FieldElement(Fr::from(v.unsigned_abs()));
        if v < 0 {
            -mag
        } else {
            mag
        }
    }

    /// Reduces an arbitrary big integer modulo p.
    pub fn from_biguint(v: &BigUint) -> Self {
        FieldElement(Fr::from_le_bytes_mod_order(&v.to_bytes_le()))
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_le(&self.0.into_bigint().to_bytes_le())
    }

    /// Inverse of [`FieldElement::from_i128`] on `[-(p-1)/2, (p-1)/2]`, limited
    /// to values whose magnitude fits in an `i128`.
    pub fn to_i128(&self) -> Option<i128> {
        let limbs = self.0.into_bigint().0;
        if limbs[2] == 0 && limbs[3] == 0 && limbs[1] >> 63 == 0 {
            return Some(((limbs[1] as i128) << 64) | limbs[0] as i128);
        }
        let neg = (-self.0).into_bigint().0;
        if neg[2] == 0 && neg[3] == 0 && neg[1] >> 63 == 0 {
            return Some(-(((neg[1] as i128) << 64) | neg[0] as i128));
        }
        None
    }

    /// True when the element represents a negative signed value (above (p-1)/2).
    pub fn is_negative(&self) -> bool {
        self.to_biguint() > *half_modulus()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn square(&self) -> Self {
        FieldElement(self.0.square())
    }

    pub fn pow5(&self) -> Self {
        let x2 = self.0.square();
        FieldElement(x2.square() * self.0)
    }

    pub fn to_bytes_le(&self) -> [u8; ELEMENT_BYTES] {
        let mut out = [0u8; ELEMENT_BYTES];
        for (chunk, limb) in out.chunks_exact_mut(8).zip(self.0.into_bigint().0) {
            chunk.copy_from_slice(&limb.to_le_bytes());
        }
        out
    }

    /// Rejects non-canonical encodings (values at or above p).
    pub fn from_bytes_le(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != ELEMENT_BYTES {
            return None;
        }
        let mut limbs = [0u64; 4];
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            limbs[i] = u64::from_le_bytes(chunk.try_into().ok()?);
        }
        Fr::from_bigint(ark_ff::BigInt::new(limbs)).map(FieldElement)
    }

    pub fn to_decimal(&self) -> String {
        self.to_biguint().to_string()
    }

    pub fn from_decimal(s: &str) -> Option<Self> {
        let v = BigUint::from_str(s).ok()?;
        (v < *modulus()).then(|| Self::from_biguint(&v))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_i128() {
            Some(v) => write!(f, "F({v})"),
            None => write!(f, "F({})", self.to_decimal()),
        }
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal())
    }
}

impl Add for FieldElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        FieldElement(self.0 + rhs.0)
    }
}

impl Sub for FieldElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        FieldElement(self.0 - rhs.0)
    }
}

impl Mul for FieldElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        FieldElement(self.0 * rhs.0)
    }
}

impl Neg for FieldElement {
    type Output = Self;
    fn neg(self) -> Self {
        FieldElement(-self.0)
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        self.0 -= rhs.0;
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: Self) {
        self.0 *= rhs.0;
    }
}

impl std::iter::Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(FieldElement::ZERO, |a, b| a + b)
    }
}

pub fn field_add(a: FieldElement, b: FieldElement) -> FieldElement {
    a + b
}

pub fn field_sub(a: FieldElement, b: FieldElement) -> FieldElement {
    a - b
}

pub fn field_mul(a: FieldElement, b: FieldElement) -> FieldElement {
    a * b
}

pub fn field_neg(a: FieldElement) -> FieldElement {
    -a
}

impl Serialize for FieldElement {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_decimal())
    }
}

impl<'de> Deserialize<'de> for FieldElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FieldElement::from_decimal(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("not a canonical field element: {s}")))
    }
}
