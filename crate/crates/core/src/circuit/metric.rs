//! The metric circuit: "the committed vector `w_k` hashes to `h_k`, and its dot
//! product with the benchmark `w_s` and its squared norm are `D` and `A`".
//!
//! Variable layout:
//!
//! ```text
//! 0            one
//! 1..5         public: ws_digest, model_digest, D, A
//! benchmark    w_s[0..d], then the sponge wires absorbing w_s
//! client       per weight: w_k, sign, magnitude bits, w_k*w_s, w_k^2;
//!              then the sponge wires absorbing w_k
//! ```
//!
//! The benchmark block is identical for every client proving against the same
//! `w_s`, and its constraints come first.
//!
//! Per-weight constraint cost is `(b+f+1) + 3 + 6r`: `b+f+1` booleanity checks
//! (sign and magnitude bits), one sign/magnitude recomposition, one product,
//! one square, and `3r` sponge constraints for each of the two absorbed
//! vectors. Two further constraints bind `D` and `A`, so the total count is
//! `d * ((b+f+1) + 3 + 6r) + 2`.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::r1cs::{CircuitDigest, ConstraintSystem, R1csBuilder, Term, Unsatisfied, ONE};
use super::sponge::Sponge;
use crate::error::{Error, Result};
use crate::field::{FieldElement, ELEMENT_BYTES};
use crate::fixedpoint::{FixedPointParams, QuantizedVector};

pub const PUBLIC_SLOTS: usize = 5;
const WS_DIGEST: u32 = 1;
const MODEL_DIGEST: u32 = 2;
const DOT: u32 = 3;
const NORM_SQ: u32 = 4;

/// Public inputs and outputs of the metric circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicStatement {
    pub ws_digest: FieldElement,
    pub model_digest: FieldElement,
    pub dot: FieldElement,
    pub norm_sq: FieldElement,
}

impl PublicStatement {
    pub const BYTES: usize = 4 * ELEMENT_BYTES;

    /// Values expected at the public slots, starting with the constant one.
    pub fn public_values(&self) -> [FieldElement; PUBLIC_SLOTS] {
        [FieldElement::ONE, self.ws_digest, self.model_digest, self.dot, self.norm_sq]
    }

    pub fn to_bytes(&self) -> [u8; Self::BYTES] {
        let mut out = [0u8; Self::BYTES];
        for (i, e) in [self.ws_digest, self.model_digest, self.dot, self.norm_sq].iter().enumerate() {
            out[i * ELEMENT_BYTES..(i + 1) * ELEMENT_BYTES].copy_from_slice(&e.to_bytes_le());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != Self::BYTES {
            return None;
        }
        let e = |i: usize| FieldElement::from_bytes_le(&b[i * ELEMENT_BYTES..(i + 1) * ELEMENT_BYTES]);
        Some(PublicStatement { ws_digest: e(0)?, model_digest: e(1)?, dot: e(2)?, norm_sq: e(3)? })
    }
}

/// Assignment vector plus the digest of the circuit it was generated for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub assignment: Vec<FieldElement>,
    pub circuit_digest: CircuitDigest,
}

/// Index arithmetic for a metric circuit of size `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricLayout {
    pub d: usize,
    pub range_bits: usize,
    pub rounds: usize,
}

impl MetricLayout {
    pub fn new(d: usize, params: &FixedPointParams, sponge: &Sponge) -> Self {
        MetricLayout { d, range_bits: params.range_bits() as usize, rounds: sponge.rounds() }
    }

    /// Wires allocated by absorbing `d` elements (the last output is a public slot).
    fn sponge_wires(&self) -> usize {
        3 * self.rounds * self.d - 1
    }

    /// Variables of the benchmark block.
    pub fn benchmark_vars(&self) -> Range<usize> {
        PUBLIC_SLOTS..PUBLIC_SLOTS + self.d + self.sponge_wires()
    }

    /// Constraints of the benchmark block.
    pub fn benchmark_constraints(&self) -> Range<usize> {
        0..3 * self.rounds * self.d
    }

    pub fn per_weight_constraints(&self) -> usize {
        self.range_bits + 3 + 6 * self.rounds
    }

    pub fn num_constraints(&self) -> usize {
        self.d * self.per_weight_constraints() + 2
    }

    pub fn num_vars(&self) -> usize {
        // per weight: w_k, range bits (sign included), product, square
        self.benchmark_vars().end + self.d * (1 + self.range_bits + 2) + self.sponge_wires()
    }
}

/// Target of circuit synthesis: either records constraints or computes values.
trait Sink {
    fn alloc(&mut self, value: impl FnOnce(&[FieldElement]) -> FieldElement) -> u32;
    fn set(&mut self, var: u32, value: impl FnOnce(&[FieldElement]) -> FieldElement);
    fn enforce(&mut self, a: &[Term], b: &[Term], c: &[Term]);
    fn coeff(&mut self, c: FieldElement) -> u32;
}

impl Sink for R1csBuilder {
    fn alloc(&mut self, _: impl FnOnce(&[FieldElement]) -> FieldElement) -> u32 {
        R1csBuilder::alloc(self)
    }
    fn set(&mut self, _: u32, _: impl FnOnce(&[FieldElement]) -> FieldElement) {}
    fn enforce(&mut self, a: &[Term], b: &[Term], c: &[Term]) {
        R1csBuilder::enforce(self, a, b, c)
    }
    fn coeff(&mut self, c: FieldElement) -> u32 {
        R1csBuilder::coeff(self, c)
    }
}

/// Computes values; wires already present in `z` are taken as given.
struct Assigner {
    z: Vec<FieldElement>,
    next: usize,
}

impl Sink for Assigner {
    fn alloc(&mut self, value: impl FnOnce(&[FieldElement]) -> FieldElement) -> u32 {
        let i = self.next;
        self.next += 1;
        if i == self.z.len() {
            let v = value(&self.z);
            self.z.push(v);
        }
        i as u32
    }
    fn set(&mut self, var: u32, value: impl FnOnce(&[FieldElement]) -> FieldElement) {
        self.z[var as usize] = value(&self.z);
    }
    fn enforce(&mut self, _: &[Term], _: &[Term], _: &[Term]) {}
    fn coeff(&mut self, _: FieldElement) -> u32 {
        0
    }
}

/// Inputs known only when generating a witness.
struct Inputs<'a> {
    w_k: &'a [i64],
    w_s: &'a [FieldElement],
}

/// Absorbs `inputs` into a fresh sponge; the final state lands in `out`.
fn absorb<S: Sink>(s: &mut S, sponge: &Sponge, round_ids: &[u32], inputs: &[u32], out: u32) {
    let consts = sponge.constants();
    let r = consts.len();
    let mut state: Option<u32> = None;
    for (i, &e) in inputs.iter().enumerate() {
        let mut prev = state;
        for j in 0..r {
            let c = consts[j];
            let cid = round_ids[j];
            // v = prev + c, or state + e + c on the absorbing round
            let mut v_terms = [Term::var(ONE); 3];
            let mut n = 0;
            if let Some(p) = prev {
                v_terms[n] = Term::var(p);
                n += 1;
            }
            if j == 0 {
                v_terms[n] = Term::var(e);
                n += 1;
            }
            v_terms[n] = Term::new(ONE, cid);
            n += 1;
            let v = &v_terms[..n];
            let value_v = move |z: &[FieldElement]| {
                let mut acc = c;
                if let Some(p) = prev {
                    acc += z[p as usize];
                }
                if j == 0 {
                    acc += z[e as usize];
                }
                acc
            };
            let x2 = s.alloc(|z| value_v(z).square());
            s.enforce(v, v, &[Term::var(x2)]);
            let x4 = s.alloc(|z| z[x2 as usize].square());
            s.enforce(&[Term::var(x2)], &[Term::var(x2)], &[Term::var(x4)]);
            let last = i + 1 == inputs.len() && j + 1 == r;
            let x5 = if last {
                s.set(out, |z| z[x4 as usize] * value_v(z));
                out
            } else {
                s.alloc(|z| z[x4 as usize] * value_v(z))
            };
            s.enforce(&[Term::var(x4)], v, &[Term::var(x5)]);
            prev = Some(x5);
        }
        state = prev;
    }
}

fn synthesize<S: Sink>(s: &mut S, layout: &MetricLayout, sponge: &Sponge, inputs: Option<&Inputs<'_>>) {
    let d = layout.d;
    let mag_bits = layout.range_bits - 1;
    let round_ids: Vec<u32> = sponge.constants().iter().map(|&c| s.coeff(c)).collect();
    let pow_ids: Vec<u32> = (0..mag_bits).map(|j| s.coeff(FieldElement::from_u64(1 << j))).collect();
    let minus_one = s.coeff(-FieldElement::ONE);
    let two = s.coeff(FieldElement::from_u64(2));

    // benchmark block
    let ws: Vec<u32> = (0..d).map(|i| s.alloc(|_| inputs.map_or(FieldElement::ZERO, |x| x.w_s[i]))).collect();
    absorb(s, sponge, &round_ids, &ws, WS_DIGEST);

    // client block
    let mut wk = Vec::with_capacity(d);
    let mut products = Vec::with_capacity(d);
    let mut squares = Vec::with_capacity(d);
    let mut magnitude: Vec<Term> = Vec::with_capacity(mag_bits + 1);
    for i in 0..d {
        let q = inputs.map_or(0, |x| x.w_k[i]);
        let w = s.alloc(|_| FieldElement::from_i128(q as i128));
        let sign = s.alloc(|_| FieldElement::from_u64((q < 0) as u64));
        s.enforce(&[Term::var(sign)], &[Term::var(sign)], &[Term::var(sign)]);
        magnitude.clear();
        for (j, &pid) in pow_ids.iter().enumerate() {
            let bit = s.alloc(|_| FieldElement::from_u64((q.unsigned_abs() >> j) & 1));
            s.enforce(&[Term::var(bit)], &[Term::var(bit)], &[Term::var(bit)]);
            magnitude.push(Term::new(bit, pid));
        }
        // 2*sign * m = m - w, so w = m when sign = 0 and w = -m when sign = 1
        let mut rhs = magnitude.clone();
        rhs.push(Term::new(w, minus_one));
        s.enforce(&[Term::new(sign, two)], &magnitude, &rhs);
        let wsi = ws[i];
        let t = s.alloc(|z| z[w as usize] * z[wsi as usize]);
        s.enforce(&[Term::var(w)], &[Term::var(wsi)], &[Term::var(t)]);
        let sq = s.alloc(|z| z[w as usize].square());
        s.enforce(&[Term::var(w)], &[Term::var(w)], &[Term::var(sq)]);
        wk.push(w);
        products.push(Term::var(t));
        squares.push(Term::var(sq));
    }
    absorb(s, sponge, &round_ids, &wk, MODEL_DIGEST);

    let sum = |z: &[FieldElement], lc: &[Term]| lc.iter().map(|t| z[t.var as usize]).sum::<FieldElement>();
    s.set(DOT, |z| sum(z, &products));
    s.enforce(&products, &[Term::var(ONE)], &[Term::var(DOT)]);
    s.set(NORM_SQ, |z| sum(z, &squares));
    s.enforce(&squares, &[Term::var(ONE)], &[Term::var(NORM_SQ)]);
}

/// Metric circuit for model size `d`, bundled with the parameters it was built for.
#[derive(Debug, Clone)]
pub struct MetricCircuit {
    pub cs: Arc<ConstraintSystem>,
    pub params: FixedPointParams,
    pub layout: MetricLayout,
}

/// Builds the constraint system for model size `d`.
pub fn build_metric_circuit(d: usize, params: &FixedPointParams) -> Result<MetricCircuit> {
    build_metric_circuit_with(d, params, Sponge::standard())
}

pub fn build_metric_circuit_with(d: usize, params: &FixedPointParams, sponge: &Sponge) -> Result<MetricCircuit> {
    if d == 0 {
        return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
    }
    if d > params.max_dim {
        return Err(Error::CircuitTooLarge { d, max: params.max_dim });
    }
    let layout = MetricLayout::new(d, params, sponge);
    let mut b = R1csBuilder::with_vars(PUBLIC_SLOTS as u32);
    synthesize(&mut b, &layout, sponge, None);
    debug_assert_eq!(b.num_constraints(), layout.num_constraints());
    debug_assert_eq!(b.num_vars() as usize, layout.num_vars());
    let cs = b.finish(d, (0..PUBLIC_SLOTS as u32).collect());
    Ok(MetricCircuit { cs: Arc::new(cs), params: params.clone(), layout })
}

impl MetricCircuit {
    pub fn d(&self) -> usize {
        self.layout.d
    }

    pub fn digest(&self) -> CircuitDigest {
        self.cs.digest()
    }

    /// Honest witness for `(w_k, w_s)` and the statement it proves.
    pub fn generate_witness(&self, w_k: &QuantizedVector, w_s: &QuantizedVector) -> Result<(Witness, PublicStatement)> {
        self.generate_witness_with(w_k, w_s, Sponge::standard())
    }

    pub fn generate_witness_with(
        &self,
        w_k: &QuantizedVector,
        w_s: &QuantizedVector,
        sponge: &Sponge,
    ) -> Result<(Witness, PublicStatement)> {
        let wk = self.checked_inputs(w_k, w_s)?;
        Ok(self.assign(&wk, &w_s.elems, sponge, None))
    }

    /// Like [`MetricCircuit::generate_witness`], copying the benchmark block
    /// from `block` (the values of [`MetricLayout::benchmark_vars`] in an
    /// earlier witness for the same `w_s`) instead of recomputing its sponge.
    /// A block whose sponge wires belong to another benchmark yields an
    /// unsatisfying witness.
    pub fn generate_witness_reusing(
        &self,
        w_k: &QuantizedVector,
        w_s: &QuantizedVector,
        block: &[FieldElement],
    ) -> Result<(Witness, PublicStatement)> {
        let wk = self.checked_inputs(w_k, w_s)?;
        let vars = self.layout.benchmark_vars();
        if block.len() != vars.len() {
            return Err(Error::DimensionMismatch { expected: vars.len(), actual: block.len() });
        }
        if block[..self.layout.d] != w_s.elems[..] {
            return Err(Error::MalformedArtifact("benchmark block was built for another w_s".into()));
        }
        Ok(self.assign(&wk, &w_s.elems, Sponge::standard(), Some(block)))
    }

    /// Dimension and range checks; returns the signed client weights.
    fn checked_inputs(&self, w_k: &QuantizedVector, w_s: &QuantizedVector) -> Result<Vec<i64>> {
        let d = self.layout.d;
        for v in [w_k, w_s] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
            }
        }
        let bits = self.params.width();
        let range_err = |index| Error::RangeViolation { index, bits };
        let wk = w_k.signed().map_err(|e| match e {
            Error::MalformedEncoding { index, .. } => range_err(index),
            other => other,
        })?;
        if let Err(Error::MalformedEncoding { index, .. }) = w_s.signed() {
            return Err(range_err(index));
        }
        Ok(wk)
    }

    /// Runs synthesis in assignment mode without range checks on `w_k`.
    fn assign(
        &self,
        wk: &[i64],
        ws: &[FieldElement],
        sponge: &Sponge,
        block: Option<&[FieldElement]>,
    ) -> (Witness, PublicStatement) {
        let mut z = Vec::with_capacity(self.layout.num_vars());
        z.push(FieldElement::ONE);
        z.extend([FieldElement::ZERO; PUBLIC_SLOTS - 1]);
        if let Some(b) = block {
            z.extend_from_slice(b);
        }
        let mut a = Assigner { z, next: PUBLIC_SLOTS };
        synthesize(&mut a, &self.layout, sponge, Some(&Inputs { w_k: wk, w_s: ws }));
        let z = a.z;
        let x = PublicStatement {
            ws_digest: z[WS_DIGEST as usize],
            model_digest: z[MODEL_DIGEST as usize],
            dot: z[DOT as usize],
            norm_sq: z[NORM_SQ as usize],
        };
        (Witness { assignment: z, circuit_digest: self.digest() }, x)
    }

    /// Witness for arbitrary signed weights, bypassing the range precondition.
    /// Exists so range soundness can be exercised.
    #[doc(hidden)]
    pub fn generate_witness_unchecked(&self, wk: &[i64], ws: &[FieldElement]) -> (Witness, PublicStatement) {
        self.assign(wk, ws, Sponge::standard(), None)
    }
}

/// Checks a witness against a circuit and a claimed public statement.
pub fn diagnose(cs: &ConstraintSystem, w: &Witness, x: &PublicStatement) -> std::result::Result<(), Unsatisfied> {
    cs.diagnose(&w.assignment, &x.public_values())
}

pub fn check_satisfied(cs: &ConstraintSystem, w: &Witness, x: &PublicStatement) -> bool {
    match diagnose(cs, w, x) {
        Ok(()) => true,
        Err(why) => {
            log::debug!("assignment rejected: {why:?}");
            false
        }
    }
}
