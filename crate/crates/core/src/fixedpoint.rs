//! Signed fixed-point encoding of real vectors into field elements.
//!
//! A real `v` becomes the integer `q = round(v * 2^f)` (half away from zero),
//! saturated to `|q| <= 2^(b+f) - 1`, and is embedded as `q` or `p - |q|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, FieldElement};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointParams {
    /// Fractional bits `f`.
    pub frac_bits: u32,
    /// Magnitude bits `b`; the signed width is `b + f` plus sign.
    pub int_bits: u32,
    /// Decimal field modulus.
    pub modulus: String,
    /// Largest model size a circuit may be built for.
    pub max_dim: usize,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        FixedPointParams {
            frac_bits: 16,
            int_bits: 8,
            modulus: field::DEFAULT_MODULUS.to_string(),
            max_dim: 4096,
        }
    }
}

impl FixedPointParams {
    pub fn new(frac_bits: u32, int_bits: u32) -> Result<Self> {
        let p = FixedPointParams { frac_bits, int_bits, ..Default::default() };
        p.validate()?;
        Ok(p)
    }

    /// Total magnitude bits `b + f`.
    pub fn width(&self) -> u32 {
        self.frac_bits + self.int_bits
    }

    /// Bits used by the in-circuit range decomposition (magnitude plus sign).
    pub fn range_bits(&self) -> u32 {
        self.width() + 1
    }

    /// Largest representable magnitude, `2^(b+f) - 1`.
    pub fn max_magnitude(&self) -> i64 {
        (1i64 << self.width()) - 1
    }

    pub fn scale(&self) -> f64 {
        (self.frac_bits as f64).exp2()
    }

    /// Checks the modulus and that maximal dot products cannot wrap.
    pub fn validate(&self) -> Result<()> {
        let p = field::parse_modulus(&self.modulus)?;
        if self.frac_bits == 0 || self.width() > 62 {
            return Err(Error::InvalidFixedPoint(format!(
                "frac_bits={} int_bits={} must give 0 < f and b+f <= 62",
                self.frac_bits, self.int_bits
            )));
        }
        if self.max_dim == 0 {
            return Err(Error::InvalidFixedPoint("max_dim must be at least 1".into()));
        }
        let log_d = usize::BITS - (self.max_dim - 1).leading_zeros();
        let needed = 2 * self.width() as u64 + log_d as u64 + 2;
        if needed >= p.bits() {
            return Err(Error::InvalidFixedPoint(format!(
                "2(b+f) + log2(d_max) + 2 = {needed} does not fit below a {}-bit modulus",
                p.bits()
            )));
        }
        Ok(())
    }

    /// Decodes one element to its signed integer, checking the signed range.
    pub fn decode(&self, e: &FieldElement, index: usize) -> Result<i64> {
        match e.to_i128() {
            Some(q) if q.unsigned_abs() <= self.max_magnitude() as u128 => Ok(q as i64),
            _ => Err(Error::MalformedEncoding {
                index,
                reason: format!("outside ±(2^{} - 1)", self.width()),
            }),
        }
    }
}

/// Quantized model vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVector {
    pub elems: Vec<FieldElement>,
    pub params: FixedPointParams,
}

impl QuantizedVector {
    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    /// Builds a vector from already-scaled signed integers.
    pub fn from_signed(values: &[i64], params: &FixedPointParams) -> Result<Self> {
        let max = params.max_magnitude();
        if let Some(index) = values.iter().position(|q| q.unsigned_abs() > max as u64) {
            return Err(Error::RangeViolation { index, bits: params.width() });
        }
        Ok(QuantizedVector {
            elems: values.iter().map(|&q| FieldElement::from_i128(q as i128)).collect(),
            params: params.clone(),
        })
    }

    /// Signed integer view of every element.
    pub fn signed(&self) -> Result<Vec<i64>> {
        self.elems
            .iter()
            .enumerate()
            .map(|(i, e)| self.params.decode(e, i))
            .collect()
    }
}

/// Result of quantizing a vector, with the number of clipped entries.
#[derive(Debug, Clone)]
pub struct Quantized {
    pub vector: QuantizedVector,
    pub saturated: usize,
}

/// Scales, rounds half away from zero and saturates each entry.
pub fn quantize_scalar<S: Scalar>(v: S, params: &FixedPointParams) -> (i64, bool) {
    let max = params.max_magnitude();
    if !v.is_finite() {
        return (0, true);
    }
    let scaled = (v * S::of(params.scale())).round();
    let limit = S::of(max as f64);
    if scaled > limit {
        (max, true)
    } else if scaled < -limit {
        (-max, true)
    } else {
        (scaled.to_i64().unwrap_or(0), false)
    }
}

pub fn quantize<S: Scalar>(v: &[S], params: &FixedPointParams) -> Quantized {
    let mut saturated = 0;
    let elems = v
        .iter()
        .map(|&x| {
            let (q, clipped) = quantize_scalar(x, params);
            saturated += clipped as usize;
            FieldElement::from_i128(q as i128)
        })
        .collect();
    Quantized { vector: QuantizedVector { elems, params: params.clone() }, saturated }
}

pub fn dequantize<S: Scalar>(q: &QuantizedVector) -> Result<Vec<S>> {
    let scale = q.params.scale();
    Ok(q.signed()?.into_iter().map(|v| S::of(v as f64 / scale)).collect())
}
