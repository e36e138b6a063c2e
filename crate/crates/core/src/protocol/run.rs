use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transcript::{Transcript, TranscriptHeader, TRANSCRIPT_VERSION};
use super::*;
use crate::learning::evaluate_accuracy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Rank verified reports by recovered cosine.
    Verified,
    /// Uniform random N-subset; proofs only vouch for the committed digest.
    Random,
}

/// Stream id of the random selection draw.
pub const SELECTION_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub client_id: u32,
    pub cosine: f64,
    pub recomputed: Option<f64>,
    pub statement: PublicStatement,
    pub proof_bytes: u64,
    pub proof_sha256: String,
    pub saturated: usize,
    pub verdict: ReportVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AggregationInput<S: Scalar> {
    pub client_id: u32,
    pub sample_count: usize,
    pub model: Vec<S>,
}

/// Bytes sent from clients to the server in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Bandwidth {
    pub notified: usize,
    pub model_upload_bytes: u64,
    pub report_bytes: u64,
    pub proof_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOutcome {
    Aggregated,
    /// Nothing survived; the previous global model is carried forward.
    EmptySelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RoundRecord<S: Scalar> {
    /// Starts at 1.
    pub round: usize,
    pub benchmark: Vec<S>,
    pub ws_digest: FieldElement,
    pub reports: Vec<ReportEntry>,
    pub verified_ids: Vec<u32>,
    pub candidate_set: Vec<u32>,
    pub audits: Vec<AuditEntry>,
    pub removed_at_upload: Vec<u32>,
    pub aggregation_inputs: Vec<AggregationInput<S>>,
    pub outcome: RoundOutcome,
    pub global_after: Vec<S>,
    pub bandwidth: Bandwidth,
    /// Held-out accuracy of `global_after`.
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput<S: Scalar> {
    pub final_model: ModelParams<S>,
    pub transcript: Transcript<S>,
}

impl<S: Scalar> RunOutput<S> {
    pub fn rounds(&self) -> &[RoundRecord<S>] {
        &self.transcript.rounds
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds().last().and_then(|r| r.test_accuracy)
    }
}

pub fn run_training<S: Scalar>(
    clients: &[ClientProfile<S>],
    cfg: &ServerConfig<S>,
    dep: &Deployment,
    initial: &ModelParams<S>,
    seed: u64,
) -> Result<RunOutput<S>> {
    run(clients, cfg, dep, initial, seed, SelectionMode::Verified)
}

pub fn run_training_rand_cs<S: Scalar>(
    clients: &[ClientProfile<S>],
    cfg: &ServerConfig<S>,
    dep: &Deployment,
    initial: &ModelParams<S>,
    seed: u64,
) -> Result<RunOutput<S>> {
    run(clients, cfg, dep, initial, seed, SelectionMode::Random)
}

/// Uniform `n`-subset of `ids` in draw order.
pub fn random_subset(ids: &[u32], n: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    rand::seq::index::sample(rng, ids.len(), n.min(ids.len())).into_iter().map(|i| ids[i]).collect()
}

pub(crate) fn run<S: Scalar>(
    clients: &[ClientProfile<S>],
    cfg: &ServerConfig<S>,
    dep: &Deployment,
    initial: &ModelParams<S>,
    seed: u64,
    mode: SelectionMode,
) -> Result<RunOutput<S>> {
    cfg.validate(clients.len())?;
    let ids: BTreeSet<u32> = clients.iter().map(|c| c.id).collect();
    if ids.len() != clients.len() {
        return Err(Error::InvalidConfig("client ids must be unique".into()));
    }
    if initial.len() != dep.d() {
        return Err(Error::DimensionMismatch { expected: dep.d(), actual: initial.len() });
    }
    let header = TranscriptHeader {
        version: TRANSCRIPT_VERSION,
        mode,
        seed,
        d: dep.d(),
        scalar_bytes: S::BYTES,
        shape: initial.shape.clone(),
        n_select: cfg.n_select,
        rounds: cfg.rounds,
        fixed_point: dep.params().clone(),
        circuit_digest: dep.circuit.cs.digest_hex(),
        clients: clients.iter().map(|c| (c.id, c.behavior, c.sample_count())).collect(),
        initial: initial.flat.clone(),
    };
    let mut global = initial.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let record = run_round(clients, cfg, dep, &global, seed, t, mode)?;
        global = ModelParams { flat: record.global_after.clone(), shape: global.shape.clone() };
        log::info!(
            "round {t}: selected {:?}, removed {:?}, accuracy {:?}",
            record.candidate_set,
            record.removed_at_upload,
            record.test_accuracy
        );
        rounds.push(record);
    }
    Ok(RunOutput { final_model: global, transcript: Transcript { header, rounds } })
}

fn run_round<S: Scalar>(
    clients: &[ClientProfile<S>],
    cfg: &ServerConfig<S>,
    dep: &Deployment,
    global: &ModelParams<S>,
    seed: u64,
    t: usize,
    mode: SelectionMode,
) -> Result<RoundRecord<S>> {
    let ws = server_benchmark_step(global, cfg, derive_seed(seed, t as u64, BENCHMARK_STREAM))?;
    let bench = BenchmarkView::new(ws, dep)?;

    let outcomes: Vec<ClientOutcome<S>> = clients
        .par_iter()
        .map(|c| client_step(c, global, &bench, dep, &cfg.client_train, derive_seed(seed, t as u64, c.id as u64)))
        .collect::<Result<_>>()?;
    let (reports, uploads): (Vec<MetricReport>, Vec<ModelParams<S>>) =
        outcomes.into_iter().map(|o| (o.report, o.upload)).unzip();

    let (screened, candidates) = match mode {
        SelectionMode::Verified => {
            let screened: Vec<Screened> = reports.iter().map(|r| screen_report(dep, &bench, r, true)).collect();
            let c = rank(&screened, cfg.n_select);
            (screened, c)
        }
        SelectionMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64, SELECTION_STREAM));
            let all: Vec<u32> = clients.iter().map(|c| c.id).collect();
            let drawn = random_subset(&all, cfg.n_select, &mut rng);
            let screened: Vec<Screened> = reports
                .iter()
                .map(|r| {
                    if drawn.contains(&r.client_id) {
                        screen_report(dep, &bench, r, false)
                    } else {
                        Screened { client_id: r.client_id, verdict: ReportVerdict::NotChecked, recomputed: None }
                    }
                })
                .collect();
            let ok: BTreeSet<u32> = screened.iter().filter(|s| s.verdict.is_accepted()).map(|s| s.client_id).collect();
            let c = drawn.into_iter().filter(|id| ok.contains(id)).collect();
            (screened, c)
        }
    };
    let verified_ids: Vec<u32> = screened.iter().filter(|s| s.verdict.is_accepted()).map(|s| s.client_id).collect();

    // notified clients upload; the rest keep their models
    let index: BTreeMap<u32, usize> = clients.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let received: BTreeMap<u32, ModelParams<S>> =
        candidates.iter().map(|id| (*id, uploads[index[id]].clone())).collect();
    let audits = upload_and_audit(&candidates, &received, &reports, dep.params());
    let removed_at_upload: Vec<u32> =
        audits.iter().filter(|a| a.outcome != AuditOutcome::Kept).map(|a| a.client_id).collect();
    let mut kept: Vec<u32> = audits.iter().filter(|a| a.outcome == AuditOutcome::Kept).map(|a| a.client_id).collect();
    kept.sort_unstable();

    let aggregation_inputs: Vec<AggregationInput<S>> = kept
        .iter()
        .map(|id| AggregationInput {
            client_id: *id,
            sample_count: clients[index[id]].sample_count(),
            model: received[id].flat.clone(),
        })
        .collect();
    let (outcome, global_after) = if aggregation_inputs.is_empty() {
        log::warn!("{}", Error::EmptySelection { round: t });
        (RoundOutcome::EmptySelection, global.flat.clone())
    } else {
        (RoundOutcome::Aggregated, aggregate_inputs(&aggregation_inputs, &global.shape)?)
    };
    let test_accuracy = match &cfg.test_dataset {
        Some(ds) => Some(evaluate_accuracy(&ModelParams { flat: global_after.clone(), shape: global.shape.clone() }, ds)?),
        None => None,
    };

    let bandwidth = Bandwidth {
        notified: candidates.len(),
        model_upload_bytes: received.values().map(|m| (m.len() * S::BYTES) as u64).sum(),
        report_bytes: reports.len() as u64 * REPORT_OVERHEAD_BYTES,
        proof_bytes: reports.iter().map(|r| r.proof.len() as u64).sum(),
    };
    let reports = reports
        .iter()
        .zip(&screened)
        .map(|(r, s)| ReportEntry {
            client_id: r.client_id,
            cosine: r.cosine,
            recomputed: s.recomputed,
            statement: r.statement,
            proof_bytes: r.proof.len() as u64,
            proof_sha256: hex::encode(Sha256::digest(&r.proof.bytes)),
            saturated: r.saturated,
            verdict: s.verdict.clone(),
        })
        .collect();
    Ok(RoundRecord {
        round: t,
        benchmark: bench.model.flat,
        ws_digest: bench.digest,
        reports,
        verified_ids,
        candidate_set: candidates,
        audits,
        removed_at_upload,
        aggregation_inputs,
        outcome,
        global_after,
        bandwidth,
        test_accuracy,
    })
}

pub(crate) fn aggregate_inputs<S: Scalar>(inputs: &[AggregationInput<S>], shape: &crate::learning::MlpShape) -> Result<Vec<S>> {
    let models: Vec<ModelParams<S>> =
        inputs.iter().map(|i| ModelParams::new(i.model.clone(), shape.clone())).collect::<Result<_>>()?;
    let pairs: Vec<(&ModelParams<S>, usize)> = models.iter().zip(inputs).map(|(m, i)| (m, i.sample_count)).collect();
    Ok(aggregate(&pairs)?.flat)
}
