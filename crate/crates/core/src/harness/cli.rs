use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{emit_csv, emit_plot_script, run_experiment_detailed, ExperimentConfig, Scenario};
use crate::attestation::AttestationConfig;
use crate::circuit::{build_metric_circuit, check_satisfied, sponge_hash};
use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::fixedpoint::{dequantize, quantize, FixedPointParams};
use crate::learning::{add_gaussian_noise, sce_loss, BlobLayout, MlpShape, ModelParams, TrainConfig};
use crate::protocol::{
    aggregate, replay_transcript, run_training, Aggregation, Behavior, ClientProfile, Deployment, ServerConfig, Transcript,
};
use crate::scalar::Scalar;

#[derive(Debug, Parser)]
#[command(name = "vcsfl", version, about = "Verifiable client selection for federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the metric circuit for a model size and generate its keys.
    Keygen {
        #[arg(long = "model-size")]
        model_size: usize,
        #[arg(long, default_value_t = 128)]
        security_param: u16,
        /// Write the proving key here (replay keys are also the verification key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment scenario and write results.csv and plot.gp.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario named in the config.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also archive every training transcript under OUT/transcripts.
        #[arg(long)]
        transcripts: bool,
    },
    /// Replay a transcript and confirm every round's global model.
    VerifyTranscript {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

/// Runs the command line; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Keygen { model_size, security_param, out } => keygen(model_size, security_param, out.as_deref()),
        Command::Run { config, scenario, out, transcripts } => {
            if !config.is_file() {
                eprintln!("error: config file {} not found", config.display());
                return 2;
            }
            run(&config, scenario.as_deref(), &out, transcripts)
        }
        Command::VerifyTranscript { input } => verify_transcript(&input),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn keygen(d: usize, security_param: u16, out: Option<&Path>) -> Result<()> {
    let cfg = AttestationConfig { security_param, ..Default::default() };
    let dep = Deployment::new(d, &FixedPointParams::default(), &cfg)?;
    println!("model size        {d}");
    println!("constraints       {}", dep.circuit.cs.num_constraints());
    println!("variables         {}", dep.circuit.cs.num_vars());
    println!("circuit digest    {}", dep.circuit.cs.digest_hex());
    println!("backend           {}", dep.pk.backend());
    println!("key bytes         {}", dep.pk.serialized_len());
    if let Some(path) = out {
        dep.pk.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        println!("wrote             {}", path.display());
    }
    Ok(())
}

fn run(config: &Path, scenario: Option<&str>, out: &Path, transcripts: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = scenario {
        cfg.scenario = s.parse::<Scenario>()?;
    }
    std::fs::create_dir_all(out)?;
    let output = run_experiment_detailed(&cfg)?;
    emit_csv(&output.rows, out.join("results.csv"))?;
    emit_plot_script(&output.rows, out.join("plot.gp"))?;
    if transcripts {
        output.save_transcripts(out.join("transcripts"))?;
    }
    println!("{} rows written to {}", output.rows.len(), out.join("results.csv").display());
    Ok(())
}

fn verify_transcript(path: &Path) -> Result<()> {
    let first = std::io::BufReader::new(std::fs::File::open(path)?)
        .lines()
        .next()
        .ok_or_else(|| Error::TranscriptMismatch { round: 0, reason: "empty transcript".into() })??;
    let head: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::TranscriptMismatch { round: 0, reason: e.to_string() })?;
    match head["body"]["scalar_bytes"].as_u64() {
        Some(4) => verify_as::<f32>(path),
        _ => verify_as::<f64>(path),
    }
}

fn verify_as<S: Scalar>(path: &Path) -> Result<()> {
    let t = Transcript::<S>::load(path)?;
    let model = replay_transcript(&t)?;
    let q = quantize(&model.flat, &t.header.fixed_point);
    println!("{} rounds reproduced bit-exactly", t.rounds.len());
    println!("final model digest {}", sponge_hash(&q.vector.elems)?.to_decimal());
    Ok(())
}

type Check = (&'static str, fn() -> Result<bool>);

const CHECKS: [Check; 8] = [
    ("field ring laws", check_field),
    ("fixed-point round trip", check_fixed_point),
    ("sponge determinism", check_sponge),
    ("circuit completeness and public binding", check_circuit),
    ("attestation accepts honest, rejects tampered", check_attestation),
    ("loss gradient matches finite differences", check_gradient),
    ("aggregation of identical models is exact", check_aggregation),
    ("short run replays bit-exactly; tampering is caught", check_replay),
];

fn selftest() -> Result<()> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        let ok = matches!(check(), Ok(true));
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        return Err(Error::InvalidConfig(format!("{failed} of {} self-checks failed", CHECKS.len())));
    }
    Ok(())
}

fn check_field() -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut el = || FieldElement::from_i128(rng.gen::<i64>() as i128 * rng.gen::<u32>() as i128);
    Ok((0..100).all(|_| {
        let (a, b, c) = (el(), el(), el());
        a * (b + c) == a * b + a * c && (a - b) + b == a && (a * b) * c == a * (b * c)
    }))
}

fn check_fixed_point() -> Result<bool> {
    let params = FixedPointParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f64> = (0..1000).map(|_| rng.gen_range(-100.0..100.0)).collect();
    let back: Vec<f64> = dequantize(&quantize(&v, &params).vector)?;
    let half_ulp = 0.5 / params.scale();
    Ok(v.iter().zip(&back).all(|(a, b)| (a - b).abs() <= half_ulp))
}

fn check_sponge() -> Result<bool> {
    let a = [FieldElement::from_u64(1), FieldElement::from_u64(2)];
    let b = [FieldElement::from_u64(2), FieldElement::from_u64(1)];
    Ok(sponge_hash(&a)? == sponge_hash(&a)? && sponge_hash(&a)? != sponge_hash(&b)?)
}

fn check_circuit() -> Result<bool> {
    let params = FixedPointParams::default();
    let c = build_metric_circuit(8, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut vec = || quantize(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(), &params).vector;
    let (wk, ws) = (vec(), vec());
    let (w, x) = c.generate_witness(&wk, &ws)?;
    let mut forged = x;
    forged.dot = forged.dot + FieldElement::from_u64(1);
    Ok(check_satisfied(&c.cs, &w, &x) && !check_satisfied(&c.cs, &w, &forged))
}

fn check_attestation() -> Result<bool> {
    let params = FixedPointParams::default();
    let dep = Deployment::new(8, &params, &AttestationConfig::default())?;
    let v = quantize(&[0.5f64, -0.25, 0.125, 1.0, -1.0, 0.0, 2.0, -3.0], &params).vector;
    let (w, x) = dep.circuit.generate_witness(&v, &v)?;
    let proof = dep.attestor.prove(&dep.pk, &x, &w)?;
    let mut bad = proof.clone();
    let last = bad.bytes.len() - 1;
    bad.bytes[last] ^= 1;
    Ok(dep.attestor.verify(&dep.vk, &x, &proof).is_accept() && !dep.attestor.verify(&dep.vk, &x, &bad).is_accept())
}

fn check_gradient() -> Result<bool> {
    let cfg = TrainConfig::default();
    let logits = [0.3f64, -1.2, 2.0, 0.1];
    let (_, grad) = sce_loss(&logits, 2, &cfg);
    let h = 1e-5;
    Ok((0..logits.len()).all(|i| {
        let mut up = logits;
        let mut down = logits;
        up[i] += h;
        down[i] -= h;
        let fd = (sce_loss(&up, 2, &cfg).0 - sce_loss(&down, 2, &cfg).0) / (2.0 * h);
        (fd - grad[i]).abs() <= 1e-6
    }))
}

fn check_aggregation() -> Result<bool> {
    let m = ModelParams::<f64>::init(MlpShape::new(4, vec![3], 3), 4);
    let agg = aggregate(&[(&m, 7), (&m, 13), (&m, 1)])?;
    Ok(agg.flat == m.flat)
}

fn check_replay() -> Result<bool> {
    let shape = MlpShape::new(4, vec![3], 3);
    let dep = Deployment::new(shape.num_params(), &FixedPointParams::default(), &AttestationConfig::default())?;
    let layout = BlobLayout::new(4, 3, 0.2, 1);
    let clients: Vec<ClientProfile<f64>> = [Behavior::Honest, Behavior::Honest, Behavior::ModelSwapper, Behavior::Honest]
        .iter()
        .enumerate()
        .map(|(i, &b)| ClientProfile::new(i as u32, add_gaussian_noise(&layout.sample(40, i as u64), 0.2, 9), b))
        .collect();
    let train = TrainConfig { batch_size: 8, ..Default::default() };
    let cfg = ServerConfig {
        n_select: 3,
        rounds: 2,
        root_dataset: Arc::new(layout.sample(40, 77)),
        aggregation: Aggregation::SampleSizeWeighted,
        benchmark_train: train.clone(),
        client_train: train,
        test_dataset: Some(Arc::new(layout.sample(60, 78))),
    };
    let out = run_training(&clients, &cfg, &dep, &ModelParams::init(shape, 5), 11)?;
    let text = out.transcript.to_jsonl();
    let parsed = Transcript::<f64>::read_jsonl(&text[..])?;
    let replayed = replay_transcript(&parsed)?;
    let mut tampered = parsed.clone();
    tampered.rounds[1].candidate_set.reverse();
    let caught = matches!(replay_transcript(&tampered), Err(Error::TranscriptMismatch { round: 2, .. }));
    Ok(replayed.flat == out.final_model.flat && caught)
}
