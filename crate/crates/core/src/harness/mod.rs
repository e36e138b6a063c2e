//! Experiment runner and command line.
//!
//! An [`ExperimentConfig`] names one [`Scenario`] and a sweep. Each sweep
//! point (a model size, or an `(N, seed)` pair and selection mode) runs in
//! isolation with its own RNG streams and yields one [`ResultRow`]; rows are
//! merged in sweep order once every point has finished, so the CSV does not
//! depend on scheduling. Only the timing columns vary between runs.

mod cli;
pub mod config;
mod output;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attestation::BackendId;
use crate::error::{Error, Result};
use crate::fixedpoint::quantize;
use crate::learning::{add_gaussian_noise, load_idx, BlobLayout, Dataset, ModelParams};
use crate::protocol::{
    derive_seed, run_training, run_training_rand_cs, Behavior, ClientProfile, Deployment, RunOutput, SelectionMode,
    ServerConfig, Transcript,
};

pub use cli::cli_main;
pub use config::{four_level_noise, AdversaryMix, DataConfig, DatasetSource, ExperimentConfig, Scenario, CONFIG_VERSION};
pub use output::{emit_csv, emit_plot_script, read_csv, CSV_COLUMNS, CSV_SCHEMA_VERSION, NONDETERMINISTIC_COLUMNS};

/// One measurement, one CSV line. Columns that do not apply to the row's
/// scenario are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub scenario: Scenario,
    /// `veri` or `rand` for training runs, empty otherwise.
    pub mode: String,
    pub backend: BackendId,
    pub config_digest: String,
    pub seed: u64,
    pub d: usize,
    pub n_select: Option<usize>,
    pub clients: Option<usize>,
    pub rounds: Option<usize>,
    pub constraints: Option<usize>,
    pub key_bytes: Option<u64>,
    /// Size of one proof.
    pub proof_bytes: Option<u64>,
    pub prove_ms: Option<f64>,
    pub prove_ms_min: Option<f64>,
    pub prove_ms_max: Option<f64>,
    pub verify_ms: Option<f64>,
    pub verify_ms_min: Option<f64>,
    pub verify_ms_max: Option<f64>,
    /// Test accuracy after each round, `;`-separated.
    pub round_accuracies: String,
    pub final_accuracy: Option<f64>,
    /// Model bytes uploaded over the whole run.
    pub upload_bytes: Option<u64>,
    pub report_bytes: Option<u64>,
    /// Proof bytes sent over the whole run.
    pub proof_bytes_total: Option<u64>,
    /// Adversarial models that entered aggregation, summed over rounds.
    pub adversaries_aggregated: Option<usize>,
    pub swapper_selections: Option<usize>,
    pub swapper_removals: Option<usize>,
    pub rejected_reports: Option<usize>,
}

impl ResultRow {
    fn blank(cfg: &ExperimentConfig, scenario: Scenario, seed: u64, d: usize) -> Self {
        ResultRow {
            schema_version: CSV_SCHEMA_VERSION,
            scenario,
            mode: String::new(),
            backend: cfg.attestation.backend,
            config_digest: cfg.digest(),
            seed,
            d,
            n_select: None,
            clients: None,
            rounds: None,
            constraints: None,
            key_bytes: None,
            proof_bytes: None,
            prove_ms: None,
            prove_ms_min: None,
            prove_ms_max: None,
            verify_ms: None,
            verify_ms_min: None,
            verify_ms_max: None,
            round_accuracies: String::new(),
            final_accuracy: None,
            upload_bytes: None,
            report_bytes: None,
            proof_bytes_total: None,
            adversaries_aggregated: None,
            swapper_selections: None,
            swapper_removals: None,
            rejected_reports: None,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.round_accuracies.split(';').filter(|s| !s.is_empty()).filter_map(|s| s.parse().ok()).collect()
    }

    /// The row with its wall-clock columns cleared.
    pub fn without_timing(&self) -> Self {
        ResultRow {
            prove_ms: None,
            prove_ms_min: None,
            prove_ms_max: None,
            verify_ms: None,
            verify_ms_min: None,
            verify_ms_max: None,
            ..self.clone()
        }
    }
}

/// A training run kept alongside its row.
#[derive(Debug, Clone)]
pub struct ArchivedRun {
    /// File stem such as `veri-vs-rand-rand-n4-seed3`.
    pub label: String,
    pub transcript: Transcript<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub runs: Vec<ArchivedRun>,
}

impl ExperimentOutput {
    /// Writes every transcript as `<label>.jsonl` under `dir`.
    pub fn save_transcripts(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for r in &self.runs {
            r.transcript.save(dir.as_ref().join(format!("{}.jsonl", r.label)))?;
        }
        Ok(())
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    Ok(run_experiment_detailed(cfg)?.rows)
}

/// Rows plus the transcript of every training run.
pub fn run_experiment_detailed(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.scenario {
        Scenario::CircuitScaling => {
            let points: Vec<(usize, u64)> =
                cfg.model_sizes.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
            // one point at a time so the timings do not compete for cores
            let rows = points.iter().map(|&(d, s)| scaling_point(cfg, d, s)).collect::<Result<_>>()?;
            Ok(ExperimentOutput { rows, runs: Vec::new() })
        }
        sc => {
            let modes: &[SelectionMode] = match sc {
                Scenario::VeriVsRand => &[SelectionMode::Verified, SelectionMode::Random],
                _ => &[SelectionMode::Verified],
            };
            let source = Source::open(cfg)?;
            let shape = cfg.shape();
            let dep = Deployment::new(shape.num_params(), &cfg.fixed_point, &cfg.attestation)?;
            let points: Vec<(usize, u64, SelectionMode)> = cfg
                .n_values
                .iter()
                .flat_map(|&n| cfg.seeds.iter().flat_map(move |&s| modes.iter().map(move |&m| (n, s, m))))
                .collect();
            let done: Vec<(ResultRow, ArchivedRun)> =
                points.par_iter().map(|&(n, s, m)| training_point(cfg, &source, &dep, n, s, m)).collect::<Result<_>>()?;
            let (rows, runs) = done.into_iter().unzip();
            Ok(ExperimentOutput { rows, runs })
        }
    })
}

/// `(median, min, max)` wall time in milliseconds over `reps` calls.
pub fn time_ms<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, f64, f64, T)> {
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        last = Some(f()?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    Ok((median, times[0], times[times.len() - 1], last.expect("at least one repetition")))
}

fn scaling_point(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<ResultRow> {
    let dep = Deployment::new(d, &cfg.fixed_point, &cfg.attestation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wk: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ws: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (qk, qs) = (quantize(&wk, dep.params()).vector, quantize(&ws, dep.params()).vector);
    let (w, x) = dep.circuit.generate_witness(&qk, &qs)?;
    let reps = cfg.timing_repetitions;
    let (p_med, p_min, p_max, proof) = time_ms(reps, || dep.attestor.prove(&dep.pk, &x, &w))?;
    let (v_med, v_min, v_max, verdict) = time_ms(reps, || Ok(dep.attestor.verify(&dep.vk, &x, &proof)))?;
    if !verdict.is_accept() {
        return Err(Error::MalformedArtifact(format!("honest proof rejected at d = {d}: {verdict:?}")));
    }
    Ok(ResultRow {
        constraints: Some(dep.circuit.cs.num_constraints()),
        key_bytes: Some(dep.pk.serialized_len() as u64),
        proof_bytes: Some(proof.len() as u64),
        prove_ms: Some(p_med),
        prove_ms_min: Some(p_min),
        prove_ms_max: Some(p_max),
        verify_ms: Some(v_med),
        verify_ms_min: Some(v_min),
        verify_ms_max: Some(v_max),
        ..ResultRow::blank(cfg, Scenario::CircuitScaling, seed, d)
    })
}

fn training_point(
    cfg: &ExperimentConfig,
    source: &Source,
    dep: &Deployment,
    n: usize,
    seed: u64,
    mode: SelectionMode,
) -> Result<(ResultRow, ArchivedRun)> {
    let pop = source.population(cfg, seed)?;
    let server = ServerConfig {
        n_select: n,
        rounds: cfg.rounds,
        root_dataset: pop.root,
        aggregation: Default::default(),
        benchmark_train: cfg.benchmark_train.clone(),
        client_train: cfg.client_train.clone(),
        test_dataset: Some(pop.test),
    };
    let initial = ModelParams::init(cfg.shape(), seed);
    let out = match mode {
        SelectionMode::Verified => run_training(&pop.clients, &server, dep, &initial, seed)?,
        SelectionMode::Random => run_training_rand_cs(&pop.clients, &server, dep, &initial, seed)?,
    };
    let mode_name = match mode {
        SelectionMode::Verified => "veri",
        SelectionMode::Random => "rand",
    };
    let row = ResultRow {
        mode: mode_name.into(),
        n_select: Some(n),
        clients: Some(pop.clients.len()),
        rounds: Some(cfg.rounds),
        ..training_row(ResultRow::blank(cfg, cfg.scenario, seed, dep.d()), &pop.clients, &out)
    };
    let label = format!("{}-{mode_name}-n{n}-seed{seed}", cfg.scenario);
    Ok((row, ArchivedRun { label, transcript: out.transcript }))
}

fn training_row(mut row: ResultRow, clients: &[ClientProfile<f64>], out: &RunOutput<f64>) -> ResultRow {
    let behavior = |id: u32| clients.iter().find(|c| c.id == id).map(|c| c.behavior).unwrap_or(Behavior::Honest);
    let rounds = out.rounds();
    let accs: Vec<String> = rounds.iter().filter_map(|r| r.test_accuracy).map(|a| a.to_string()).collect();
    row.round_accuracies = accs.join(";");
    row.final_accuracy = out.final_accuracy();
    row.upload_bytes = Some(rounds.iter().map(|r| r.bandwidth.model_upload_bytes).sum());
    row.report_bytes = Some(rounds.iter().map(|r| r.bandwidth.report_bytes).sum());
    row.proof_bytes_total = Some(rounds.iter().map(|r| r.bandwidth.proof_bytes).sum());
    row.proof_bytes = rounds.first().and_then(|r| r.reports.first()).map(|e| e.proof_bytes);
    row.adversaries_aggregated = Some(
        rounds
            .iter()
            .flat_map(|r| &r.aggregation_inputs)
            .filter(|a| behavior(a.client_id).is_adversarial())
            .count(),
    );
    let swapper = |id: &&u32| behavior(**id) == Behavior::ModelSwapper;
    row.swapper_selections = Some(rounds.iter().map(|r| r.candidate_set.iter().filter(swapper).count()).sum());
    row.swapper_removals = Some(rounds.iter().map(|r| r.removed_at_upload.iter().filter(swapper).count()).sum());
    row.rejected_reports = Some(
        rounds
            .iter()
            .flat_map(|r| &r.reports)
            .filter(|e| !e.verdict.is_accepted() && e.verdict != crate::protocol::ReportVerdict::NotChecked)
            .count(),
    );
    row
}

/// The clients, root dataset and test set of one run.
pub struct Population {
    pub clients: Vec<ClientProfile<f64>>,
    pub root: Arc<Dataset<f64>>,
    pub test: Arc<Dataset<f64>>,
}

enum Source {
    Synthetic(BlobLayout),
    Idx { train: Dataset<f64>, test: Dataset<f64> },
}

impl Source {
    fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let dc = &cfg.data;
        let synthetic = || Source::Synthetic(BlobLayout::new(dc.input_dim, dc.classes, dc.spread, dc.layout_seed));
        let DatasetSource::IdxFiles { train_images, train_labels, test_images, test_labels } = &cfg.dataset_source
        else {
            return Ok(synthetic());
        };
        let loaded = load_idx(train_images, train_labels, Some(dc.input_dim), dc.classes)
            .and_then(|train| Ok((train, load_idx(test_images, test_labels, Some(dc.input_dim), dc.classes)?)));
        match loaded {
            Ok((train, test)) => {
                let need = cfg.clients() * dc.samples_per_client + dc.root_samples;
                if train.len() < need || test.len() < dc.test_samples {
                    return Err(Error::InvalidConfig(format!(
                        "IDX files hold {} training and {} test samples; the config needs {need} and {}",
                        train.len(),
                        test.len(),
                        dc.test_samples
                    )));
                }
                Ok(Source::Idx { train, test })
            }
            Err(e) => {
                log::warn!("IDX dataset unavailable ({e}); falling back to synthetic data");
                Ok(synthetic())
            }
        }
    }

    fn population(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Population> {
        let dc = &cfg.data;
        let k = cfg.clients();
        let (clean, root, test): (Vec<Dataset<f64>>, Dataset<f64>, Dataset<f64>) = match self {
            Source::Synthetic(layout) => (
                (0..k).map(|i| layout.sample(dc.samples_per_client, derive_seed(seed, 0, i as u64))).collect(),
                layout.sample(dc.root_samples, derive_seed(seed, 2, 0)),
                layout.sample(dc.test_samples, derive_seed(dc.layout_seed, 3, 0)),
            ),
            Source::Idx { train, test } => {
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 4, 0)));
                let n = dc.samples_per_client;
                let chunks = (0..k).map(|i| gather(train, &order[i * n..(i + 1) * n])).collect::<Result<_>>()?;
                let root = gather(train, &order[k * n..k * n + dc.root_samples])?;
                (chunks, root, test.slice(0..dc.test_samples)?)
            }
        };
        let behaviors = behaviors(&cfg.adversaries, k);
        let clients = clean
            .iter()
            .enumerate()
            .map(|(i, ds)| {
                let noisy = add_gaussian_noise(ds, dc.client_noise[i], derive_seed(seed, 1, i as u64));
                ClientProfile::new(i as u32, noisy, behaviors[i])
            })
            .collect();
        Ok(Population { clients, root: Arc::new(root), test: Arc::new(test) })
    }
}

/// Builds the population of one run, exactly as the experiment runner does.
pub fn build_population(cfg: &ExperimentConfig, seed: u64) -> Result<Population> {
    Source::open(cfg)?.population(cfg, seed)
}

/// Behaviors in client-id order: forgers, swappers, invalid provers, then honest.
pub fn behaviors(mix: &AdversaryMix, k: usize) -> Vec<Behavior> {
    let mut out = Vec::with_capacity(k);
    out.extend(std::iter::repeat(Behavior::MetricForger).take(mix.metric_forgers));
    out.extend(std::iter::repeat(Behavior::ModelSwapper).take(mix.model_swappers));
    out.extend(std::iter::repeat(Behavior::InvalidProof).take(mix.invalid_proof));
    out.resize(k.max(out.len()), Behavior::Honest);
    out.truncate(k);
    out
}

fn gather(ds: &Dataset<f64>, idx: &[usize]) -> Result<Dataset<f64>> {
    let mut feats = Vec::with_capacity(idx.len() * ds.input_dim());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let (x, y) = ds.sample(i);
        feats.extend_from_slice(x);
        labels.push(y);
    }
    Dataset::new(feats, labels, ds.input_dim(), ds.classes())
}
