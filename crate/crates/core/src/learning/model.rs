use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully connected tanh network: `input_dim -> hidden... -> classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl MlpShape {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize) -> Self {
        MlpShape { input_dim, hidden, classes }
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Flat parameter vector of an [`MlpShape`]. Each layer stores its weights
/// `W[out][in]` row-major followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelParams<S: Scalar> {
    pub flat: Vec<S>,
    pub shape: MlpShape,
}

impl<S: Scalar> ModelParams<S> {
    pub fn new(flat: Vec<S>, shape: MlpShape) -> Result<Self> {
        if flat.len() != shape.num_params() {
            return Err(Error::DimensionMismatch { expected: shape.num_params(), actual: flat.len() });
        }
        Ok(ModelParams { flat, shape })
    }

    pub fn zeros(shape: MlpShape) -> Self {
        ModelParams { flat: vec![S::zero(); shape.num_params()], shape }
    }

    /// Glorot-normal weights and zero biases.
    pub fn init(shape: MlpShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = Vec::with_capacity(shape.num_params());
        for (fan_in, fan_out) in shape.layers() {
            let normal = Normal::new(0.0, (2.0 / (fan_in + fan_out) as f64).sqrt()).unwrap();
            flat.extend((0..fan_in * fan_out).map(|_| S::of(normal.sample(&mut rng))));
            flat.extend((0..fan_out).map(|_| S::zero()));
        }
        ModelParams { flat, shape }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|v| v.is_finite())
    }

    /// Logits for one input.
    pub fn forward(&self, x: &[S]) -> Vec<S> {
        self.forward_trace(x).pop().unwrap()
    }

    /// Activations of every layer, input first, logits last.
    pub(crate) fn forward_trace(&self, x: &[S]) -> Vec<Vec<S>> {
        let layers = self.shape.layers();
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.flat[off..off + fan_in * fan_out];
            let b = &self.flat[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let prev = acts.last().unwrap();
            let last = l + 1 == layers.len();
            let out: Vec<S> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = row.iter().zip(prev).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi);
                    if last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Accumulates `scale * dLoss/dparams` into `grad` given `dLoss/dlogits`.
    pub(crate) fn backward(&self, acts: &[Vec<S>], dlogits: &[S], scale: S, grad: &mut [S]) {
        let layers = self.shape.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(i, o) in &layers {
            offsets.push(off);
            off += i * o + o;
        }
        let mut delta: Vec<S> = dlogits.to_vec();
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..fan_out {
                let d = delta[o] * scale;
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let w = &self.flat[off..off + fan_in * fan_out];
                let mut next = vec![S::zero(); fan_in];
                for o in 0..fan_out {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for (n, &wi) in next.iter_mut().zip(row) {
                        *n += delta[o] * wi;
                    }
                }
                // tanh' = 1 - a^2
                for (n, &a) in next.iter_mut().zip(input) {
                    *n *= S::one() - a * a;
                }
                delta = next;
            }
        }
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &[S]) -> usize {
        let logits = self.forward(x);
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }
}
