//! MiMC-style sponge over the prime field.
//!
//! State starts at zero; each absorbed element `e` updates the state as
//! `s <- permute(s + e)`, where `permute` applies `r` rounds of
//! `s <- (s + c_i)^5`. The final state is the digest.

use std::io::{BufRead, Write};
use std::sync::OnceLock;

use num_bigint::BigUint;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::FieldElement;

pub const DEFAULT_ROUNDS: usize = 110;
pub const CONSTANT_DOMAIN: &str = "veri-cs-fl/mimc/v1/";

/// Digest function used to derive round constants. Only SHA-256 is offered.
pub const CONSTANT_HASH: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sponge {
    constants: Vec<FieldElement>,
}

/// `c_i = SHA-256(domain || decimal(i))` read big-endian, reduced mod p.
pub fn round_constant(i: usize) -> FieldElement {
    let mut h = Sha256::new();
    h.update(CONSTANT_DOMAIN.as_bytes());
    h.update(i.to_string().as_bytes());
    FieldElement::from_biguint(&BigUint::from_bytes_be(&h.finalize()))
}

impl Sponge {
    pub fn new(rounds: usize) -> Self {
        Sponge { constants: (0..rounds).map(round_constant).collect() }
    }

    pub fn with_constants(constants: Vec<FieldElement>) -> Self {
        Sponge { constants }
    }

    /// Process-wide instance with the default round count.
    pub fn standard() -> &'static Sponge {
        static S: OnceLock<Sponge> = OnceLock::new();
        S.get_or_init(|| Sponge::new(DEFAULT_ROUNDS))
    }

    pub fn rounds(&self) -> usize {
        self.constants.len()
    }

    pub fn constants(&self) -> &[FieldElement] {
        &self.constants
    }

    pub fn permute(&self, mut s: FieldElement) -> FieldElement {
        for &c in &self.constants {
            s = (s + c).pow5();
        }
        s
    }

    pub fn hash(&self, elems: &[FieldElement]) -> Result<FieldElement> {
        if elems.is_empty() {
            return Err(Error::EmptyHashInput);
        }
        Ok(elems.iter().fold(FieldElement::ZERO, |s, &e| self.permute(s + e)))
    }

    /// Writes the constants file shared by all parties after keygen.
    pub fn write_constants<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# domain={CONSTANT_DOMAIN} hash={CONSTANT_HASH} rounds={}", self.rounds())?;
        for c in &self.constants {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }

    pub fn read_constants<R: BufRead>(r: R) -> Result<Self> {
        let mut constants = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let c = FieldElement::from_decimal(line)
                .ok_or_else(|| Error::MalformedArtifact(format!("bad round constant {line:?}")))?;
            constants.push(c);
        }
        Ok(Sponge { constants })
    }
}

/// Hash with the standard sponge.
pub fn sponge_hash(elems: &[FieldElement]) -> Result<FieldElement> {
    Sponge::standard().hash(elems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_constants_fix_zero() {
        let s = Sponge::with_constants(vec![FieldElement::ZERO; DEFAULT_ROUNDS]);
        assert_eq!(s.hash(&[FieldElement::ZERO]).unwrap(), FieldElement::ZERO);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(sponge_hash(&[]), Err(Error::EmptyHashInput)));
    }

    #[test]
    fn constants_follow_the_derivation() {
        let c0 = round_constant(0);
        let digest = Sha256::digest(b"veri-cs-fl/mimc/v1/0");
        assert_eq!(c0, FieldElement::from_biguint(&BigUint::from_bytes_be(&digest)));
        assert_eq!(Sponge::standard().constants()[17], round_constant(17));
        assert_ne!(round_constant(1), round_constant(2));
    }

    #[test]
    fn changing_one_element_changes_digest() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v: Vec<FieldElement> =
                (0..4).map(|_| FieldElement::from_u64(rng.gen::<u32>() as u64)).collect();
            let mut w = v.clone();
            let i = rng.gen_range(0..w.len());
            w[i] += FieldElement::from_u64(rng.gen_range(1..1000));
            assert_ne!(sponge_hash(&v).unwrap(), sponge_hash(&w).unwrap());
        }
    }

    #[test]
    fn constants_file_round_trips() {
        let s = Sponge::standard();
        let mut buf = Vec::new();
        s.write_constants(&mut buf).unwrap();
        assert_eq!(&Sponge::read_constants(&buf[..]).unwrap(), s);
    }
}
