//! Sparse rank-1 constraint systems.
//!
//! Each constraint is a triple of linear combinations `(a, b, c)` over the
//! assignment vector `z`, satisfied when `<a,z> * <b,z> = <c,z>`. Terms are
//! stored flat with interned coefficients; coefficient id 0 is always one.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! "VCSR1CS1" | d: u64 | num_vars: u64 | num_constraints: u64
//! per constraint, for each of a, b, c:
//!     term_count: u32 | term_count * (index: u32, coefficient: 32 bytes)
//! ```

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{FieldElement, ELEMENT_BYTES};

pub const R1CS_MAGIC: &[u8; 8] = b"VCSR1CS1";

/// Index of the constant-one variable.
pub const ONE: u32 = 0;

/// Digest of a serialized constraint system.
pub type CircuitDigest = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub var: u32,
    pub coeff: u32,
}

impl Term {
    /// Term with coefficient one.
    pub const fn var(var: u32) -> Self {
        Term { var, coeff: 0 }
    }

    pub const fn new(var: u32, coeff: u32) -> Self {
        Term { var, coeff }
    }
}

#[derive(Debug)]
pub struct ConstraintSystem {
    d: usize,
    num_vars: usize,
    coeffs: Vec<FieldElement>,
    terms: Vec<Term>,
    /// `3 * num_constraints + 1` boundaries into `terms`.
    offsets: Vec<u32>,
    public_indices: Vec<u32>,
    digest: OnceLock<CircuitDigest>,
}

/// Why an assignment fails a constraint system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unsatisfied {
    WrongLength { expected: usize, actual: usize },
    PublicMismatch { slot: usize },
    Constraint { index: usize },
}

impl ConstraintSystem {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        (self.offsets.len() - 1) / 3
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn public_indices(&self) -> &[u32] {
        &self.public_indices
    }

    /// Terms of linear combination `which` (0 = a, 1 = b, 2 = c) of a constraint.
    pub fn lc(&self, constraint: usize, which: usize) -> impl Iterator<Item = (u32, FieldElement)> + '_ {
        let k = 3 * constraint + which;
        let (lo, hi) = (self.offsets[k] as usize, self.offsets[k + 1] as usize);
        self.terms[lo..hi].iter().map(|t| (t.var, self.coeffs[t.coeff as usize]))
    }

    #[inline]
    fn eval(&self, k: usize, z: &[FieldElement]) -> FieldElement {
        let (lo, hi) = (self.offsets[k] as usize, self.offsets[k + 1] as usize);
        let mut acc = FieldElement::ZERO;
        for t in &self.terms[lo..hi] {
            if t.coeff == 0 {
                acc += z[t.var as usize];
            } else if t.var == ONE {
                acc += self.coeffs[t.coeff as usize];
            } else {
                acc += self.coeffs[t.coeff as usize] * z[t.var as usize];
            }
        }
        acc
    }

    /// Checks constraints `range` of the system against `z`, assuming `z[0] = 1`.
    pub fn check_range(&self, z: &[FieldElement], range: std::ops::Range<usize>) -> std::result::Result<(), Unsatisfied> {
        for i in range {
            let a = self.eval(3 * i, z);
            let c = self.eval(3 * i + 2, z);
            let (lo, hi) = (self.offsets[3 * i + 1] as usize, self.offsets[3 * i + 2] as usize);
            // b = one is the encoding of a purely linear constraint
            let ok = if hi - lo == 1 && self.terms[lo].var == ONE && self.terms[lo].coeff == 0 {
                a == c
            } else {
                a * self.eval(3 * i + 1, z) == c
            };
            if !ok {
                return Err(Unsatisfied::Constraint { index: i });
            }
        }
        Ok(())
    }

    /// Full check: length, public slots (with `z[0] = 1`), then every constraint.
    pub fn diagnose(&self, z: &[FieldElement], public: &[FieldElement]) -> std::result::Result<(), Unsatisfied> {
        if z.len() != self.num_vars {
            return Err(Unsatisfied::WrongLength { expected: self.num_vars, actual: z.len() });
        }
        if public.len() != self.public_indices.len() {
            return Err(Unsatisfied::WrongLength { expected: self.public_indices.len(), actual: public.len() });
        }
        for (slot, (&idx, v)) in self.public_indices.iter().zip(public).enumerate() {
            if z[idx as usize] != *v {
                return Err(Unsatisfied::PublicMismatch { slot });
            }
        }
        if z[ONE as usize] != FieldElement::ONE {
            return Err(Unsatisfied::PublicMismatch { slot: 0 });
        }
        self.check_range(z, 0..self.num_constraints())
    }

    /// SHA-256 of the binary serialization, computed once.
    pub fn digest(&self) -> CircuitDigest {
        *self.digest.get_or_init(|| {
            let mut w = HashWriter(Sha256::new());
            self.write_to(&mut w).expect("hashing cannot fail");
            w.0.finalize().into()
        })
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    /// Exact size of [`ConstraintSystem::write_to`] output.
    pub fn serialized_len(&self) -> usize {
        let mut w = CountingWriter(0);
        self.write_to(&mut w).expect("counting cannot fail");
        w.0
    }

    pub fn write_to<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = io::BufWriter::with_capacity(1 << 16, w);
        w.write_all(R1CS_MAGIC)?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.num_vars as u64).to_le_bytes())?;
        w.write_all(&(self.num_constraints() as u64).to_le_bytes())?;
        let coeff_bytes: Vec<[u8; ELEMENT_BYTES]> = self.coeffs.iter().map(|c| c.to_bytes_le()).collect();
        for k in 0..self.offsets.len() - 1 {
            let (lo, hi) = (self.offsets[k] as usize, self.offsets[k + 1] as usize);
            w.write_all(&((hi - lo) as u32).to_le_bytes())?;
            for t in &self.terms[lo..hi] {
                w.write_all(&t.var.to_le_bytes())?;
                w.write_all(&coeff_bytes[t.coeff as usize])?;
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    /// Parses the binary layout. The public slots are the fixed leading indices
    /// `0..public_count`.
    pub fn read_from<R: Read>(r: R, public_count: usize) -> Result<Self> {
        let mut r = io::BufReader::with_capacity(1 << 16, r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != R1CS_MAGIC {
            return Err(Error::MalformedArtifact("bad constraint-system magic".into()));
        }
        let d = read_u64(&mut r)? as usize;
        let num_vars = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        if num_vars < public_count || num_vars > u32::MAX as usize {
            return Err(Error::MalformedArtifact(format!("implausible variable count {num_vars}")));
        }
        let mut b = R1csBuilder::with_vars(num_vars as u32);
        let mut buf = [0u8; 4 + ELEMENT_BYTES];
        let mut lcs: [Vec<Term>; 3] = Default::default();
        for _ in 0..m {
            for lc in lcs.iter_mut() {
                lc.clear();
                let n = read_u32(&mut r)?;
                for _ in 0..n {
                    r.read_exact(&mut buf)?;
                    let var = u32::from_le_bytes(buf[..4].try_into().unwrap());
                    if var as usize >= num_vars {
                        return Err(Error::MalformedArtifact(format!("variable {var} out of range")));
                    }
                    let c = FieldElement::from_bytes_le(&buf[4..])
                        .ok_or_else(|| Error::MalformedArtifact("non-canonical coefficient".into()))?;
                    let coeff = b.coeff(c);
                    lc.push(Term::new(var, coeff));
                }
            }
            b.enforce(&lcs[0], &lcs[1], &lcs[2]);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::MalformedArtifact("trailing bytes after constraint system".into()));
        }
        Ok(b.finish(d, (0..public_count as u32).collect()))
    }
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct CountingWriter(usize);

impl Write for CountingWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len();
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Incremental constructor for [`ConstraintSystem`].
#[derive(Debug)]
pub struct R1csBuilder {
    num_vars: u32,
    coeffs: Vec<FieldElement>,
    coeff_ids: HashMap<FieldElement, u32>,
    terms: Vec<Term>,
    offsets: Vec<u32>,
}

impl Default for R1csBuilder {
    fn default() -> Self {
        Self::with_vars(1)
    }
}

impl R1csBuilder {
    /// Builder with `num_vars` pre-allocated variables (variable 0 is one).
    pub fn with_vars(num_vars: u32) -> Self {
        let mut b = R1csBuilder {
            num_vars: num_vars.max(1),
            coeffs: Vec::new(),
            coeff_ids: HashMap::new(),
            terms: Vec::new(),
            offsets: vec![0],
        };
        b.coeff(FieldElement::ONE);
        b
    }

    pub fn alloc(&mut self) -> u32 {
        let v = self.num_vars;
        self.num_vars += 1;
        v
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        (self.offsets.len() - 1) / 3
    }

    /// Interns a coefficient and returns its id.
    pub fn coeff(&mut self, c: FieldElement) -> u32 {
        if let Some(&id) = self.coeff_ids.get(&c) {
            return id;
        }
        let id = self.coeffs.len() as u32;
        self.coeffs.push(c);
        self.coeff_ids.insert(c, id);
        id
    }

    pub fn enforce(&mut self, a: &[Term], b: &[Term], c: &[Term]) {
        for lc in [a, b, c] {
            self.terms.extend_from_slice(lc);
            self.offsets.push(self.terms.len() as u32);
        }
    }

    pub fn finish(self, d: usize, public_indices: Vec<u32>) -> ConstraintSystem {
        ConstraintSystem {
            d,
            num_vars: self.num_vars as usize,
            coeffs: self.coeffs,
            terms: self.terms,
            offsets: self.offsets,
            public_indices,
            digest: OnceLock::new(),
        }
    }
}
