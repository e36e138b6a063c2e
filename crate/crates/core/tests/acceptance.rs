//! Acceptance suite. Criteria run one after another in a single test so wall
//! times are not distorted by each other; each prints one PASS/FAIL line to
//! stderr, which the test harness does not capture.
//! Set `ACCEPTANCE_CRITERIA=1,2,6` to run a subset.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcsfl::attestation::AttestationConfig;
use vcsfl::circuit::{check_satisfied, PUBLIC_SLOTS};
use vcsfl::fixedpoint::{quantize, FixedPointParams};
use vcsfl::harness::{run_experiment_detailed, AdversaryMix, ArchivedRun, ExperimentConfig, Scenario};
use vcsfl::protocol::{recover_cosine, AuditOutcome, Behavior, Deployment, REPORT_OVERHEAD_BYTES};
use vcsfl::FieldElement;

const C1_PAIRS: usize = 500;
const C1_DIMS: [usize; 3] = [8, 16, 64];
const C1_TOLERANCE: f64 = 1.0 / 1024.0;
const C1_BUDGET: Duration = Duration::from_secs(30);

const C2_D: usize = 16;
const C2_HONEST: usize = 100;
const C2_MUTATIONS: usize = 100;
const C2_MIN_WIRE_REJECTION: f64 = 0.99;
const C2_BUDGET: Duration = Duration::from_secs(60);

const C3_RUNS: u64 = 50;
const C3_N: usize = 8;
const C3_ROUNDS: usize = 5;
const C3_MIX: AdversaryMix = AdversaryMix { metric_forgers: 4, model_swappers: 2, invalid_proof: 1 };
/// Hidden width of the 64-4-10 model (d = 310) used for the 50 adversarial runs.
const C3_HIDDEN: usize = 4;
const C3_BUDGET: Duration = Duration::from_secs(600);

const C4_ROUNDS: usize = 10;
const C4_STEP_TOLERANCE: f64 = 0.01;
const C4_MIN_N4_ACCURACY: f64 = 0.85;
const C4_BUDGET: Duration = Duration::from_secs(1200);

const C5_ROUNDS: usize = 10;
const C5_MIN_GAP: f64 = 0.02;
const C5_BUDGET: Duration = Duration::from_secs(600);

const C6_MIN_R2: f64 = 0.999;
const C6_BUDGET: Duration = Duration::from_secs(120);

const C8_ARCHIVED: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn line(id: u32, name: &str, o: &Outcome, took: Duration) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    report(&format!("{tag} criterion {id} {name}: {} [{:.1} s]", o.detail, took.as_secs_f64()));
}

fn report(msg: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{msg}");
}

fn selected(id: u32) -> bool {
    match std::env::var("ACCEPTANCE_CRITERIA") {
        Ok(list) => list.split(',').any(|s| s.trim() == id.to_string()),
        Err(_) => true,
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > budget {
        o.pass = false;
        o.detail += &format!("; over the {} s budget", budget.as_secs());
    }
    (o, took)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn metric_fidelity() -> Outcome {
    let params = FixedPointParams::default();
    let deps: Vec<Deployment> =
        C1_DIMS.iter().map(|&d| Deployment::new(d, &params, &AttestationConfig::default()).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1);
    let mut worst = 0.0f64;
    let mut rejected = 0;
    for i in 0..C1_PAIRS {
        let dep = &deps[i % deps.len()];
        let d = dep.d();
        let wk: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ws: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (qk, qs) = (quantize(&wk, &params).vector, quantize(&ws, &params).vector);
        let (w, x) = dep.circuit.generate_witness(&qk, &qs).unwrap();
        let proof = dep.attestor.prove(&dep.pk, &x, &w).unwrap();
        if !dep.attestor.verify(&dep.vk, &x, &proof).is_accept() {
            rejected += 1;
            continue;
        }
        let b: i128 = qs.signed().unwrap().iter().map(|&v| v as i128 * v as i128).sum();
        let recovered = recover_cosine(&x.dot, &x.norm_sq, b).unwrap();
        worst = worst.max((recovered - cosine(&wk, &ws)).abs());
    }
    Outcome {
        pass: rejected == 0 && worst <= C1_TOLERANCE,
        detail: format!("max |error| {worst:.3e} <= {C1_TOLERANCE:.3e} over {C1_PAIRS} pairs, {rejected} honest proofs rejected"),
    }
}

fn circuit_soundness() -> Outcome {
    let params = FixedPointParams::default();
    let dep = Deployment::new(C2_D, &params, &AttestationConfig::default()).unwrap();
    let cs = &dep.circuit.cs;
    let mut rng = ChaCha8Rng::seed_from_u64(0xc2);
    let vector = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..C2_D).map(|_| rng.gen_range(-1.0..1.0)).collect();
        quantize(&v, &params).vector
    };
    let mut honest_ok = 0;
    let mut wire_rejected = 0;
    let mut public_rejected = 0;
    for i in 0..C2_HONEST.max(C2_MUTATIONS) {
        let (wk, ws) = (vector(&mut rng), vector(&mut rng));
        let (w, x) = dep.circuit.generate_witness(&wk, &ws).unwrap();
        if i < C2_HONEST && check_satisfied(cs, &w, &x) {
            honest_ok += 1;
        }
        if i < C2_MUTATIONS {
            let mut bad = w.clone();
            let wire = rng.gen_range(PUBLIC_SLOTS..bad.assignment.len());
            bad.assignment[wire] += FieldElement::from_u64(rng.gen_range(1..u64::MAX));
            wire_rejected += usize::from(!check_satisfied(cs, &bad, &x));

            let delta = FieldElement::from_u64(rng.gen_range(1..u64::MAX));
            let mut forged = x;
            match i % 4 {
                0 => forged.ws_digest += delta,
                1 => forged.model_digest += delta,
                2 => forged.dot += delta,
                _ => forged.norm_sq += delta,
            }
            let proof = dep.attestor.prove(&dep.pk, &x, &w).unwrap();
            let caught = !check_satisfied(cs, &w, &forged) && !dep.attestor.verify(&dep.vk, &forged, &proof).is_accept();
            public_rejected += usize::from(caught);
        }
    }
    let wire_rate = wire_rejected as f64 / C2_MUTATIONS as f64;
    Outcome {
        pass: honest_ok == C2_HONEST && wire_rate >= C2_MIN_WIRE_REJECTION && public_rejected == C2_MUTATIONS,
        detail: format!(
            "honest {honest_ok}/{C2_HONEST} satisfied, wire mutations {wire_rejected}/{C2_MUTATIONS} rejected (need {:.0}%), public mutations {public_rejected}/{C2_MUTATIONS} rejected",
            C2_MIN_WIRE_REJECTION * 100.0
        ),
    }
}

/// Every round of every run: model bytes plus report bytes equal
/// `|notified| * d * 8 + K * REPORT_OVERHEAD_BYTES`. Returns rounds checked
/// and the labels of runs that broke it.
fn bandwidth_violations(runs: &[ArchivedRun]) -> (usize, Vec<String>) {
    let mut rounds = 0;
    let mut bad = Vec::new();
    for run in runs {
        let h = &run.transcript.header;
        for r in &run.transcript.rounds {
            rounds += 1;
            let b = &r.bandwidth;
            let expected = (b.notified * h.d * 8) as u64 + h.clients.len() as u64 * REPORT_OVERHEAD_BYTES;
            if b.notified != r.candidate_set.len() || b.model_upload_bytes + b.report_bytes != expected {
                bad.push(format!("{} round {}", run.label, r.round));
            }
        }
    }
    (rounds, bad)
}

fn adversary_exclusion(archive: &mut Vec<ArchivedRun>) -> Outcome {
    let mut cfg = ExperimentConfig {
        scenario: Scenario::AdversaryAudit,
        n_values: vec![C3_N],
        seeds: (1..=C3_RUNS).collect(),
        rounds: C3_ROUNDS,
        hidden: vec![C3_HIDDEN],
        adversaries: C3_MIX,
        ..Default::default()
    };
    cfg.data.test_samples = 500;
    let out = run_experiment_detailed(&cfg).unwrap();
    let mut entered = 0;
    let mut swapper_selected = 0;
    let mut swapper_missed = 0;
    for run in &out.runs {
        let behavior = |id: u32| run.transcript.header.clients.iter().find(|c| c.0 == id).unwrap().1;
        for r in &run.transcript.rounds {
            entered += r.aggregation_inputs.iter().filter(|a| behavior(a.client_id).is_adversarial()).count();
            for a in &r.audits {
                if behavior(a.client_id) == Behavior::ModelSwapper {
                    swapper_selected += 1;
                    swapper_missed += usize::from(a.outcome != AuditOutcome::HashMismatch);
                }
            }
        }
    }
    archive.extend(out.runs);
    Outcome {
        pass: out.rows.len() == C3_RUNS as usize && entered == 0 && swapper_missed == 0,
        detail: format!(
            "{} runs (d = {}): {entered} adversarial models aggregated, {swapper_selected} swapper selections, {swapper_missed} not removed at upload",
            out.rows.len(),
            cfg.shape().num_params()
        ),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn selection_trend(archive: &mut Vec<ArchivedRun>) -> Outcome {
    let cfg = ExperimentConfig { scenario: Scenario::SelectionSweep, rounds: C4_ROUNDS, ..Default::default() };
    let out = run_experiment_detailed(&cfg).unwrap();
    let means: Vec<(usize, f64)> = cfg
        .n_values
        .iter()
        .map(|&n| (n, mean(out.rows.iter().filter(|r| r.n_select == Some(n)).map(|r| r.final_accuracy.unwrap()))))
        .collect();
    let monotone = means.windows(2).all(|w| w[1].1 <= w[0].1 + C4_STEP_TOLERANCE);
    let n4 = means[0].1;
    archive.extend(out.runs);
    let shown: Vec<String> = means.iter().map(|(n, a)| format!("N={n}: {a:.4}")).collect();
    Outcome {
        pass: means[0].0 == 4 && monotone && n4 >= C4_MIN_N4_ACCURACY,
        detail: format!(
            "mean final accuracy over {} seeds {}; non-increasing within {C4_STEP_TOLERANCE} per step: {monotone}; N=4 >= {C4_MIN_N4_ACCURACY}",
            cfg.seeds.len(),
            shown.join(", ")
        ),
    }
}

fn veri_vs_rand(archive: &mut Vec<ArchivedRun>) -> Outcome {
    let mut cfg = ExperimentConfig { scenario: Scenario::VeriVsRand, rounds: C5_ROUNDS, n_values: vec![4], ..Default::default() };
    // four clients at sigma = 1.0, the rest spread over the three lower levels
    cfg.data.client_noise = [(0.0, 6), (0.3, 5), (0.6, 5), (1.0, 4)]
        .iter()
        .flat_map(|&(s, n)| std::iter::repeat(s).take(n))
        .collect();
    let out = run_experiment_detailed(&cfg).unwrap();
    let acc = |mode: &str| mean(out.rows.iter().filter(|r| r.mode == mode).map(|r| r.final_accuracy.unwrap()));
    let (veri, rand) = (acc("veri"), acc("rand"));
    archive.extend(out.runs);
    Outcome {
        pass: veri - rand >= C5_MIN_GAP,
        detail: format!(
            "Veri {veri:.4} vs Rand {rand:.4} over {} paired seeds, gap {:.2} pp (need {:.0})",
            cfg.seeds.len(),
            (veri - rand) * 100.0,
            C5_MIN_GAP * 100.0
        ),
    }
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn linear_scaling() -> Outcome {
    let cfg = ExperimentConfig {
        scenario: Scenario::CircuitScaling,
        seeds: vec![1],
        timing_repetitions: 1,
        ..Default::default()
    };
    let rows = vcsfl::harness::run_experiment(&cfg).unwrap();
    let d: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();
    let cons: Vec<f64> = rows.iter().map(|r| r.constraints.unwrap() as f64).collect();
    let keys: Vec<f64> = rows.iter().map(|r| r.key_bytes.unwrap() as f64).collect();
    let (rc, rk) = (r_squared(&d, &cons), r_squared(&d, &keys));
    Outcome {
        pass: rows.len() == cfg.model_sizes.len() && rc >= C6_MIN_R2 && rk >= C6_MIN_R2,
        detail: format!(
            "d in {:?}: R^2 constraints {rc:.6}, key bytes {rk:.6} (need {C6_MIN_R2})",
            cfg.model_sizes
        ),
    }
}

fn bandwidth_identity(archive: &[ArchivedRun]) -> Outcome {
    let (rounds, bad) = bandwidth_violations(archive);
    Outcome {
        pass: rounds > 0 && bad.is_empty(),
        detail: format!(
            "{rounds} rounds across {} runs, {} violations{}",
            archive.len(),
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    }
}

fn verify_with_cli(path: &Path) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vcsfl")).arg("verify-transcript").arg("--in").arg(path).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.success(), text)
}

fn transcript_replay(archive: &[ArchivedRun]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut reproduced = 0;
    let mut picked = BTreeSet::new();
    // spread the sample over the scenarios that produced runs
    let step = (archive.len() / C8_ARCHIVED).max(1);
    for run in archive.iter().step_by(step).take(C8_ARCHIVED) {
        let path = dir.path().join(format!("{}.jsonl", run.label));
        run.transcript.save(&path).unwrap();
        let last = run.transcript.rounds.last().unwrap();
        let q = quantize(&last.global_after, &run.transcript.header.fixed_point);
        let digest = vcsfl::circuit::sponge_hash(&q.vector.elems).unwrap().to_decimal();
        let (ok, text) = verify_with_cli(&path);
        if ok && text.contains("rounds reproduced bit-exactly") && text.contains(&digest) {
            reproduced += 1;
        }
        picked.insert(run.label.clone());
    }
    // one flipped verdict must be caught and attributed
    let victim = &archive[0];
    let text = String::from_utf8(victim.transcript.to_jsonl()).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let round = lines.len() - 1;
    lines[round] = lines[round].replacen("\"kind\":\"accepted\"", "\"kind\":\"not_checked\"", 1);
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let (ok, msg) = verify_with_cli(&tampered);
    let caught = !ok && msg.contains(&format!("round {round}"));
    Outcome {
        pass: picked.len() == C8_ARCHIVED && reproduced == C8_ARCHIVED && caught,
        detail: format!(
            "{reproduced}/{} archived runs reproduced bit-exactly by verify-transcript; tampered round {round} named: {caught}",
            picked.len()
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    let mut archive: Vec<ArchivedRun> = Vec::new();
    let mut record = |id: u32, name: &str, (o, took): (Outcome, Duration)| {
        line(id, name, &o, took);
        if !o.pass {
            failed.push(id);
        }
    };
    if selected(1) {
        record(1, "metric fidelity", timed(C1_BUDGET, metric_fidelity));
    }
    if selected(2) {
        record(2, "circuit completeness and soundness", timed(C2_BUDGET, circuit_soundness));
    }
    if selected(3) || selected(7) || selected(8) {
        let o = timed(C3_BUDGET, || adversary_exclusion(&mut archive));
        if selected(3) {
            record(3, "adversary exclusion", o);
        }
    }
    if selected(4) {
        record(4, "selection trend", timed(C4_BUDGET, || selection_trend(&mut archive)));
    }
    if selected(5) {
        record(5, "Veri vs Rand", timed(C5_BUDGET, || veri_vs_rand(&mut archive)));
    }
    if selected(6) {
        record(6, "linear scaling", timed(C6_BUDGET, linear_scaling));
    }
    if selected(7) {
        record(7, "bandwidth identity", timed(Duration::MAX, || bandwidth_identity(&archive)));
    }
    if selected(8) {
        record(8, "transcript replay", timed(Duration::MAX, || transcript_replay(&archive)));
    }
    report("SKIP criterion 9 constant proof size and verify time: no SnarkAdapter attached");
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
