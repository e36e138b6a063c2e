//! Round state machine: benchmark broadcast, client attestation, ranked
//! selection, hash-checked upload and sample-weighted aggregation.

mod run;
mod transcript;

#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attestation::{
    AttestationConfig, Attestor, BenchmarkCache, Proof, ProvingKey, VerificationKey, PROOF_HEADER_BYTES,
};
use crate::circuit::{build_metric_circuit, sponge_hash, MetricCircuit, PublicStatement};
use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::fixedpoint::{quantize, FixedPointParams, QuantizedVector};
use crate::learning::{local_train, Dataset, ModelParams, TrainConfig};
use crate::scalar::Scalar;

pub use run::{
    random_subset, run_training, run_training_rand_cs, AggregationInput, Bandwidth, ReportEntry, RoundOutcome, RoundRecord,
    RunOutput, SelectionMode,
};
pub use transcript::{replay_transcript, Transcript, TranscriptHeader, TRANSCRIPT_VERSION};

/// Largest accepted gap between a reported cosine and the one recovered from
/// the proved statement.
pub const COSINE_TOLERANCE: f64 = 1.0 / 1024.0;

/// Per-report bytes besides the proof: client id, cosine, statement.
pub const REPORT_OVERHEAD_BYTES: u64 = 4 + 8 + PublicStatement::BYTES as u64;

/// Cosine a metric forger claims.
pub const FORGED_COSINE: f64 = 0.999;

/// Fraction of saturated weights above which a report carries a warning.
pub const SATURATION_WARN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// Proves honestly over a pure-noise model but reports a near-perfect cosine.
    MetricForger,
    /// Reports honestly, then uploads a different model.
    ModelSwapper,
    /// Corrupts one byte of its proof.
    InvalidProof,
}

impl Behavior {
    pub fn is_adversarial(self) -> bool {
        self != Behavior::Honest
    }
}

#[derive(Debug, Clone)]
pub struct ClientProfile<S: Scalar> {
    pub id: u32,
    pub dataset: Arc<Dataset<S>>,
    pub behavior: Behavior,
}

impl<S: Scalar> ClientProfile<S> {
    pub fn new(id: u32, dataset: Dataset<S>, behavior: Behavior) -> Self {
        ClientProfile { id, dataset: Arc::new(dataset), behavior }
    }

    pub fn sample_count(&self) -> usize {
        self.dataset.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub client_id: u32,
    pub cosine: f64,
    pub statement: PublicStatement,
    pub proof: Proof,
    /// Weights clipped during quantization.
    pub saturated: usize,
    pub d: usize,
}

impl MetricReport {
    /// Present when more than 1% of the weights saturated.
    pub fn saturation_warning(&self) -> Option<usize> {
        (self.saturated as f64 > SATURATION_WARN_FRACTION * self.d as f64).then_some(self.saturated)
    }
}

/// What a client holds after its local step: the report it sends and the
/// model it will upload if notified.
#[derive(Debug, Clone)]
pub struct ClientOutcome<S: Scalar> {
    pub report: MetricReport,
    pub upload: ModelParams<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    SampleSizeWeighted,
}

#[derive(Debug, Clone)]
pub struct ServerConfig<S: Scalar> {
    pub n_select: usize,
    pub rounds: usize,
    pub root_dataset: Arc<Dataset<S>>,
    pub aggregation: Aggregation,
    pub benchmark_train: TrainConfig,
    pub client_train: TrainConfig,
    /// Held-out set scored after every round, if present.
    pub test_dataset: Option<Arc<Dataset<S>>>,
}

impl<S: Scalar> ServerConfig<S> {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.n_select == 0 || self.n_select > k {
            return Err(Error::InvalidConfig(format!("N = {} must lie in 1..={k}", self.n_select)));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        self.benchmark_train.validate()?;
        self.client_train.validate()
    }
}

/// Circuit, keys and attestor shared by every round of a run.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub circuit: MetricCircuit,
    pub attestor: Attestor,
    pub pk: ProvingKey,
    pub vk: VerificationKey,
}

impl Deployment {
    pub fn new(d: usize, params: &FixedPointParams, cfg: &AttestationConfig) -> Result<Self> {
        let circuit = build_metric_circuit(d, params)?;
        let attestor = Attestor::new(cfg.clone())?;
        let (pk, vk) = attestor.keygen(&circuit.cs)?;
        Ok(Deployment { circuit, attestor, pk, vk })
    }

    pub fn d(&self) -> usize {
        self.circuit.d()
    }

    pub fn params(&self) -> &FixedPointParams {
        &self.circuit.params
    }
}

/// The round's benchmark as both sides see it.
#[derive(Debug, Clone)]
pub struct BenchmarkView<S: Scalar> {
    pub model: ModelParams<S>,
    pub quantized: QuantizedVector,
    pub digest: FieldElement,
    /// Squared norm of the quantized benchmark in fixed-point units.
    pub norm_sq: i128,
    pub cache: Option<BenchmarkCache>,
}

impl<S: Scalar> BenchmarkView<S> {
    pub fn new(model: ModelParams<S>, dep: &Deployment) -> Result<Self> {
        if model.len() != dep.d() {
            return Err(Error::DimensionMismatch { expected: dep.d(), actual: model.len() });
        }
        let quantized = quantize(&model.flat, dep.params()).vector;
        let digest = sponge_hash(&quantized.elems)?;
        let norm_sq = quantized.signed()?.iter().map(|&v| v as i128 * v as i128).sum();
        let zero = QuantizedVector::from_signed(&vec![0; dep.d()], dep.params())?;
        let (w, x) = dep.circuit.generate_witness(&zero, &quantized)?;
        let cache = Some(BenchmarkCache::from_witness(&dep.circuit, &w, &x)?);
        Ok(BenchmarkView { model, quantized, digest, norm_sq, cache })
    }
}

/// Cosine from a proved dot product `D`, proved squared norm `A` and the
/// benchmark's squared norm `B`. Zero when either norm vanishes; clamped to
/// `[-1, 1]` since `D^2 <= A B` holds exactly and only rounding can exceed it.
pub fn recover_cosine(dot: &FieldElement, norm_sq: &FieldElement, bench_norm_sq: i128) -> Option<f64> {
    let d = dot.to_i128()?;
    let a = norm_sq.to_i128()?;
    if a < 0 || bench_norm_sq < 0 {
        return None;
    }
    if a == 0 || bench_norm_sq == 0 {
        return Some(0.0);
    }
    Some((d as f64 / ((a as f64).sqrt() * (bench_norm_sq as f64).sqrt())).clamp(-1.0, 1.0))
}

/// Deterministic per-stream seed.
pub fn derive_seed(base: u64, round: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ round) ^ stream)
}

/// Stream id of the server's benchmark training.
pub const BENCHMARK_STREAM: u64 = u64::MAX;

pub fn server_benchmark_step<S: Scalar>(
    w_prev: &ModelParams<S>,
    cfg: &ServerConfig<S>,
    seed: u64,
) -> Result<ModelParams<S>> {
    let tc = TrainConfig { seed, ..cfg.benchmark_train.clone() };
    local_train(w_prev, &cfg.root_dataset, &tc)
}

/// I.i.d. standard normal weights, unrelated to any data.
pub fn noise_model<S: Scalar>(like: &ModelParams<S>, seed: u64) -> ModelParams<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = (0..like.len()).map(|_| S::of(rng.sample::<f64, _>(StandardNormal))).collect();
    ModelParams { flat, shape: like.shape.clone() }
}

/// Local training, quantization, witness generation and proof for one client.
pub fn client_step<S: Scalar>(
    profile: &ClientProfile<S>,
    w_prev: &ModelParams<S>,
    bench: &BenchmarkView<S>,
    dep: &Deployment,
    train: &TrainConfig,
    seed: u64,
) -> Result<ClientOutcome<S>> {
    let local = match profile.behavior {
        Behavior::MetricForger => noise_model(w_prev, seed),
        _ => local_train(w_prev, &profile.dataset, &TrainConfig { seed, ..train.clone() })?,
    };
    let q = quantize(&local.flat, dep.params());
    let (w, x) = match &bench.cache {
        Some(c) => dep.circuit.generate_witness_reusing(&q.vector, &bench.quantized, c.block())?,
        None => dep.circuit.generate_witness(&q.vector, &bench.quantized)?,
    };
    let mut proof = dep.attestor.prove_with(&dep.pk, &x, &w, bench.cache.as_ref())?;
    let honest_cosine = recover_cosine(&x.dot, &x.norm_sq, bench.norm_sq).unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6164_7673);
    let cosine = match profile.behavior {
        Behavior::MetricForger => FORGED_COSINE,
        _ => honest_cosine,
    };
    if profile.behavior == Behavior::InvalidProof {
        // the embedded statement copy; any change there is caught before the constraint check
        let at = PROOF_HEADER_BYTES + rng.gen_range(0..PublicStatement::BYTES);
        proof.bytes[at] ^= 1 << rng.gen_range(0..8);
    }
    let upload = match profile.behavior {
        Behavior::ModelSwapper => noise_model(w_prev, rng.gen()),
        _ => local,
    };
    let report = MetricReport { client_id: profile.id, cosine, statement: x, proof, saturated: q.saturated, d: dep.d() };
    if let Some(n) = report.saturation_warning() {
        log::warn!("client {}: {n} of {} weights saturated during quantization", profile.id, dep.d());
    }
    Ok(ClientOutcome { report, upload })
}

/// Why a report was or was not admitted to ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ReportVerdict {
    Accepted,
    CosineOutOfRange,
    StaleBenchmark,
    ProofRejected { reason: String },
    CosineMismatch { recomputed: Option<f64> },
    /// Rand-CS-FL never looks at reports it did not draw.
    NotChecked,
}

impl ReportVerdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, ReportVerdict::Accepted)
    }
}

/// Outcome of checking one report: range, freshness, proof, then cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct Screened {
    pub client_id: u32,
    pub verdict: ReportVerdict,
    pub recomputed: Option<f64>,
}

pub fn screen_report<S: Scalar>(dep: &Deployment, bench: &BenchmarkView<S>, r: &MetricReport, check_cosine: bool) -> Screened {
    let recomputed = recover_cosine(&r.statement.dot, &r.statement.norm_sq, bench.norm_sq);
    let verdict = if check_cosine && !(r.cosine.is_finite() && (-1.0..=1.0).contains(&r.cosine)) {
        ReportVerdict::CosineOutOfRange
    } else if r.statement.ws_digest != bench.digest {
        ReportVerdict::StaleBenchmark
    } else {
        match dep.attestor.verify_with(&dep.vk, &r.statement, &r.proof, bench.cache.as_ref()) {
            crate::attestation::Verdict::Reject(why) => ReportVerdict::ProofRejected { reason: format!("{why:?}") },
            crate::attestation::Verdict::Accept => match recomputed {
                Some(c) if check_cosine && (c - r.cosine).abs() > COSINE_TOLERANCE => {
                    ReportVerdict::CosineMismatch { recomputed: Some(c) }
                }
                None => ReportVerdict::CosineMismatch { recomputed: None },
                Some(_) => ReportVerdict::Accepted,
            },
        }
    };
    Screened { client_id: r.client_id, verdict, recomputed }
}

/// Top `n` by recomputed cosine, descending, ties to the lower id.
pub fn rank(screened: &[Screened], n: usize) -> Vec<u32> {
    let mut ok: Vec<(f64, u32)> = screened
        .iter()
        .filter(|s| s.verdict.is_accepted())
        .map(|s| (s.recomputed.unwrap_or(0.0), s.client_id))
        .collect();
    ok.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ok.into_iter().take(n).map(|(_, id)| id).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub candidates: Vec<u32>,
    pub verified: BTreeSet<u32>,
    pub screened: Vec<Screened>,
}

pub fn server_select<S: Scalar>(
    dep: &Deployment,
    bench: &BenchmarkView<S>,
    reports: &[MetricReport],
    n: usize,
    round: usize,
) -> Result<Selection> {
    let screened: Vec<Screened> = reports.iter().map(|r| screen_report(dep, bench, r, true)).collect();
    let verified = screened.iter().filter(|s| s.verdict.is_accepted()).map(|s| s.client_id).collect();
    let candidates = rank(&screened, n);
    if candidates.is_empty() {
        return Err(Error::EmptySelection { round });
    }
    Ok(Selection { candidates, verified, screened })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Kept,
    HashMismatch,
    MissingUpload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub client_id: u32,
    pub outcome: AuditOutcome,
}

/// Recomputes each candidate's upload digest against its committed one.
pub fn upload_and_audit<S: Scalar>(
    candidates: &[u32],
    uploads: &BTreeMap<u32, ModelParams<S>>,
    reports: &[MetricReport],
    params: &FixedPointParams,
) -> Vec<AuditEntry> {
    candidates
        .iter()
        .map(|&id| {
            let committed = reports.iter().find(|r| r.client_id == id).map(|r| r.statement.model_digest);
            let outcome = match (uploads.get(&id), committed) {
                (Some(m), Some(h)) => {
                    let q = quantize(&m.flat, params).vector;
                    match sponge_hash(&q.elems) {
                        Ok(got) if got == h => AuditOutcome::Kept,
                        _ => AuditOutcome::HashMismatch,
                    }
                }
                (Some(_), None) => AuditOutcome::HashMismatch,
                (None, _) => AuditOutcome::MissingUpload,
            };
            AuditEntry { client_id: id, outcome }
        })
        .collect()
}

/// `sum_k (n_k / sum n) w_k`, accumulated as offsets from the first model so
/// identical inputs reproduce it exactly.
pub fn aggregate<S: Scalar>(models: &[(&ModelParams<S>, usize)]) -> Result<ModelParams<S>> {
    let (first, _) = *models.first().ok_or_else(|| Error::InvalidConfig("nothing to aggregate".into()))?;
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::InvalidConfig("aggregation weights sum to zero".into()));
    }
    for (m, _) in models {
        if m.shape != first.shape || m.len() != first.len() {
            return Err(Error::DimensionMismatch { expected: first.len(), actual: m.len() });
        }
    }
    let mut out = first.clone();
    for (m, n) in &models[1..] {
        let wt = S::of(*n as f64 / total as f64);
        for ((o, &v), &base) in out.flat.iter_mut().zip(&m.flat).zip(&first.flat) {
            *o += wt * (v - base);
        }
    }
    Ok(out)
}

/// Weights used by [`aggregate`], in input order.
pub fn aggregation_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&n| n as f64 / total as f64).collect()
}
