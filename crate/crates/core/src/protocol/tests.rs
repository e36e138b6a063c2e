use super::*;
use crate::attestation::AttestationConfig;
use crate::learning::{add_gaussian_noise, evaluate_accuracy, synth_dataset, BlobLayout, MlpShape};
use proptest::prelude::*;

const DIM: usize = 4;
const CLASSES: usize = 3;

fn shape() -> MlpShape {
    MlpShape::new(DIM, vec![3], CLASSES)
}

fn deployment() -> Deployment {
    Deployment::new(shape().num_params(), &FixedPointParams::default(), &AttestationConfig::default()).unwrap()
}

fn server(n: usize, rounds: usize) -> ServerConfig<f64> {
    ServerConfig {
        n_select: n,
        rounds,
        root_dataset: Arc::new(synth_dataset(60, DIM, CLASSES, 1)),
        aggregation: Aggregation::SampleSizeWeighted,
        benchmark_train: TrainConfig { batch_size: 8, ..Default::default() },
        client_train: TrainConfig { batch_size: 8, ..Default::default() },
        test_dataset: Some(Arc::new(synth_dataset(100, DIM, CLASSES, 2))),
    }
}

fn clients(behaviors: &[Behavior]) -> Vec<ClientProfile<f64>> {
    let layout = BlobLayout::new(DIM, CLASSES, 0.2, 1);
    behaviors
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let ds = add_gaussian_noise(&layout.sample(30 + i, 100 + i as u64), 0.1 * (i % 4) as f64, i as u64);
            ClientProfile::new(i as u32, ds, b)
        })
        .collect()
}

fn initial() -> ModelParams<f64> {
    ModelParams::init(shape(), 7)
}

fn screened(id: u32, cos: f64) -> Screened {
    Screened { client_id: id, verdict: ReportVerdict::Accepted, recomputed: Some(cos) }
}

#[test]
fn benchmark_step_with_zero_epochs_is_identity() {
    let cfg = ServerConfig { benchmark_train: TrainConfig { epochs: 0, ..Default::default() }, ..server(1, 1) };
    assert_eq!(server_benchmark_step(&initial(), &cfg, 3).unwrap(), initial());
    let cfg = server(1, 1);
    assert_eq!(server_benchmark_step(&initial(), &cfg, 3).unwrap(), server_benchmark_step(&initial(), &cfg, 3).unwrap());
}

#[test]
fn benchmark_beats_zero_model() {
    let shape = MlpShape::new(64, vec![14], 10);
    let layout = BlobLayout::new(64, 10, DEFAULT_TEST_SPREAD, 4);
    let cfg = ServerConfig {
        root_dataset: Arc::new(layout.sample(400, 5)),
        benchmark_train: TrainConfig { batch_size: 16, ..Default::default() },
        ..server(1, 1)
    };
    let test = layout.sample::<f64>(1000, 6);
    let ws = server_benchmark_step(&ModelParams::init(shape.clone(), 1), &cfg, 0).unwrap();
    let base = evaluate_accuracy(&ModelParams::zeros(shape), &test).unwrap();
    assert!(evaluate_accuracy(&ws, &test).unwrap() > base);
}

const DEFAULT_TEST_SPREAD: f64 = 0.2;

#[test]
fn self_similarity_is_one() {
    let dep = deployment();
    let w = initial();
    let bench = BenchmarkView::new(w.clone(), &dep).unwrap();
    let c = &clients(&[Behavior::Honest])[0];
    let tc = TrainConfig { epochs: 0, ..Default::default() };
    let out = client_step(c, &w, &bench, &dep, &tc, 1).unwrap();
    assert!((out.report.cosine - 1.0).abs() <= COSINE_TOLERANCE);
    let v = screen_report(&dep, &bench, &out.report, true).verdict;
    assert!(v.is_accepted(), "{v:?}");
}

#[test]
fn adversarial_reports_are_screened_out() {
    let dep = deployment();
    let w = initial();
    let bench = BenchmarkView::new(w.clone(), &dep).unwrap();
    let cs = clients(&[Behavior::Honest, Behavior::MetricForger, Behavior::InvalidProof, Behavior::ModelSwapper]);
    let tc = TrainConfig { batch_size: 8, ..Default::default() };
    let v: Vec<ReportVerdict> = cs
        .iter()
        .map(|c| {
            let out = client_step(c, &w, &bench, &dep, &tc, c.id as u64).unwrap();
            screen_report(&dep, &bench, &out.report, true).verdict
        })
        .collect();
    assert_eq!(v[0], ReportVerdict::Accepted);
    assert!(matches!(v[1], ReportVerdict::CosineMismatch { .. }), "{:?}", v[1]);
    assert!(matches!(v[2], ReportVerdict::ProofRejected { .. }), "{:?}", v[2]);
    assert_eq!(v[3], ReportVerdict::Accepted);
}

#[test]
fn out_of_range_and_stale_reports_rejected() {
    let dep = deployment();
    let w = initial();
    let old = BenchmarkView::new(w.clone(), &dep).unwrap();
    let c = &clients(&[Behavior::Honest])[0];
    let tc = TrainConfig { batch_size: 8, ..Default::default() };
    let mut out = client_step(c, &w, &old, &dep, &tc, 1).unwrap();
    let fresh = BenchmarkView::new(server_benchmark_step(&w, &server(1, 1), 9).unwrap(), &dep).unwrap();
    assert_eq!(screen_report(&dep, &fresh, &out.report, true).verdict, ReportVerdict::StaleBenchmark);
    out.report.cosine = 1.5;
    assert_eq!(screen_report(&dep, &old, &out.report, true).verdict, ReportVerdict::CosineOutOfRange);
    out.report.cosine = f64::NAN;
    assert_eq!(screen_report(&dep, &old, &out.report, true).verdict, ReportVerdict::CosineOutOfRange);
}

#[test]
fn ranking_and_ties() {
    assert_eq!(rank(&[screened(0, 0.9), screened(1, 0.5), screened(2, 0.7)], 2), vec![0, 2]);
    assert_eq!(rank(&[screened(5, 0.8), screened(3, 0.8)], 1), vec![3]);
    let mut rejected = screened(9, 1.0);
    rejected.verdict = ReportVerdict::StaleBenchmark;
    assert_eq!(rank(&[rejected, screened(1, 0.1)], 4), vec![1]);
}

proptest! {
    #[test]
    fn ranking_ignores_uniform_scaling(cos in proptest::collection::vec(-1.0f64..1.0, 1..20), scale in 0.01f64..100.0, n in 1usize..20) {
        let a: Vec<Screened> = cos.iter().enumerate().map(|(i, &c)| screened(i as u32, c)).collect();
        let b: Vec<Screened> = cos.iter().enumerate().map(|(i, &c)| screened(i as u32, c * scale)).collect();
        prop_assert_eq!(rank(&a, n), rank(&b, n));
    }

    #[test]
    fn aggregation_weights_sum_to_one(counts in proptest::collection::vec(1usize..5000, 1..30)) {
        let s: f64 = aggregation_weights(&counts).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn aggregate_of_identical_models_is_exact(v in proptest::collection::vec(-10.0f64..10.0, 27), counts in proptest::collection::vec(1usize..1000, 1..8)) {
        let m = ModelParams::new(v, shape()).unwrap();
        let pairs: Vec<_> = counts.iter().map(|&n| (&m, n)).collect();
        prop_assert_eq!(aggregate(&pairs).unwrap(), m.clone());
    }
}

#[test]
fn forgers_never_selected() {
    let dep = deployment();
    let mut behaviors = vec![Behavior::Honest; 20];
    for b in behaviors.iter_mut().take(4) {
        *b = Behavior::MetricForger;
    }
    let cs = clients(&behaviors);
    let tc = TrainConfig { batch_size: 8, ..Default::default() };
    for trial in 0..50u64 {
        let w = ModelParams::init(shape(), trial);
        let bench = BenchmarkView::new(server_benchmark_step(&w, &server(8, 1), trial).unwrap(), &dep).unwrap();
        let reports: Vec<MetricReport> =
            cs.iter().map(|c| client_step(c, &w, &bench, &dep, &tc, derive_seed(trial, 1, c.id as u64)).unwrap().report).collect();
        let sel = server_select(&dep, &bench, &reports, 8, 1).unwrap();
        assert_eq!(sel.candidates.len(), 8);
        assert!(sel.candidates.iter().all(|&id| id >= 4), "trial {trial}: {:?}", sel.candidates);
        assert!(sel.candidates.iter().all(|id| sel.verified.contains(id)));
    }
}

#[test]
fn empty_selection_is_an_error_for_the_step() {
    let dep = deployment();
    let w = initial();
    let bench = BenchmarkView::new(w.clone(), &dep).unwrap();
    let cs = clients(&[Behavior::InvalidProof, Behavior::MetricForger]);
    let reports: Vec<MetricReport> =
        cs.iter().map(|c| client_step(c, &w, &bench, &dep, &TrainConfig::default(), 1).unwrap().report).collect();
    assert!(matches!(server_select(&dep, &bench, &reports, 1, 4), Err(Error::EmptySelection { round: 4 })));
}

#[test]
fn upload_audit_outcomes() {
    let dep = deployment();
    let w = initial();
    let bench = BenchmarkView::new(w.clone(), &dep).unwrap();
    let cs = clients(&[Behavior::Honest, Behavior::ModelSwapper, Behavior::Honest]);
    let outs: Vec<ClientOutcome<f64>> =
        cs.iter().map(|c| client_step(c, &w, &bench, &dep, &TrainConfig::default(), 2).unwrap()).collect();
    let reports: Vec<MetricReport> = outs.iter().map(|o| o.report.clone()).collect();
    let uploads: BTreeMap<u32, ModelParams<f64>> = outs.iter().take(2).map(|o| (o.report.client_id, o.upload.clone())).collect();
    let audit = upload_and_audit(&[0, 1, 2], &uploads, &reports, dep.params());
    let outcomes: Vec<AuditOutcome> = audit.iter().map(|a| a.outcome).collect();
    assert_eq!(outcomes, vec![AuditOutcome::Kept, AuditOutcome::HashMismatch, AuditOutcome::MissingUpload]);
}

#[test]
fn aggregation_examples() {
    let one = MlpShape::new(0, vec![], 1);
    let a = ModelParams::new(vec![0.0], one.clone()).unwrap();
    let b = ModelParams::new(vec![4.0], one.clone()).unwrap();
    assert_eq!(aggregate(&[(&a, 1), (&b, 3)]).unwrap().flat, vec![3.0]);
    assert_eq!(aggregate(&[(&b, 7)]).unwrap(), b);

    let models: Vec<ModelParams<f64>> = (0..5).map(|s| ModelParams::init(shape(), s)).collect();
    let pairs: Vec<_> = models.iter().map(|m| (m, 10)).collect();
    let agg = aggregate(&pairs).unwrap();
    for i in 0..agg.len() {
        let mean = models.iter().map(|m| m.flat[i]).sum::<f64>() / 5.0;
        assert!((agg.flat[i] - mean).abs() <= 1e-12);
    }
    let other = ModelParams::<f64>::zeros(MlpShape::new(2, vec![], 2));
    assert!(matches!(aggregate(&[(&models[0], 1), (&other, 1)]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn single_round_with_everyone_is_weighted_mean() {
    let dep = deployment();
    let cs = clients(&[Behavior::Honest; 5]);
    let cfg = server(5, 1);
    let out = run_training(&cs, &cfg, &dep, &initial(), 11).unwrap();
    let locals: Vec<ModelParams<f64>> = cs
        .iter()
        .map(|c| {
            let tc = TrainConfig { seed: derive_seed(11, 1, c.id as u64), ..cfg.client_train.clone() };
            local_train(&initial(), &c.dataset, &tc).unwrap()
        })
        .collect();
    let pairs: Vec<_> = locals.iter().zip(&cs).map(|(m, c)| (m, c.sample_count())).collect();
    assert_eq!(out.final_model, aggregate(&pairs).unwrap());
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let dep = deployment();
    let cs = clients(&[Behavior::Honest, Behavior::MetricForger, Behavior::Honest, Behavior::ModelSwapper, Behavior::Honest]);
    let a = run_training(&cs, &server(3, 3), &dep, &initial(), 5).unwrap();
    let b = run_training(&cs, &server(3, 3), &dep, &initial(), 5).unwrap();
    let bytes = a.transcript.to_jsonl();
    assert_eq!(bytes, b.transcript.to_jsonl());

    let back = Transcript::<f64>::read_jsonl(&bytes[..]).unwrap();
    assert_eq!(back, a.transcript);
    assert_eq!(replay_transcript(&back).unwrap(), a.final_model);
}

#[test]
fn tampered_transcript_names_the_round() {
    let dep = deployment();
    let cs = clients(&[Behavior::Honest, Behavior::InvalidProof, Behavior::Honest]);
    let out = run_training(&cs, &server(2, 3), &dep, &initial(), 6).unwrap();
    let text = String::from_utf8(out.transcript.to_jsonl()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let flipped = lines[2].replacen("\"kind\":\"accepted\"", "\"kind\":\"acceptee\"", 1);
    assert_ne!(flipped, lines[2]);
    let mut tampered = lines.clone();
    tampered[2] = &flipped;
    let err = Transcript::<f64>::read_jsonl(tampered.join("\n").as_bytes()).unwrap_err();
    assert!(matches!(err, Error::TranscriptMismatch { round: 2, .. }), "{err}");

    // a consistent chain over altered content still fails the semantic replay
    let mut t = out.transcript.clone();
    t.rounds[1].global_after[0] += 1e-9;
    let rewritten = Transcript::<f64>::read_jsonl(&t.to_jsonl()[..]).unwrap();
    assert!(matches!(replay_transcript(&rewritten), Err(Error::TranscriptMismatch { round: 2, .. })));
}

#[test]
fn adversaries_never_aggregated() {
    let dep = deployment();
    let behaviors = [
        Behavior::MetricForger,
        Behavior::Honest,
        Behavior::ModelSwapper,
        Behavior::InvalidProof,
        Behavior::Honest,
        Behavior::Honest,
    ];
    let cs = clients(&behaviors);
    let out = run_training(&cs, &server(4, 3), &dep, &initial(), 8).unwrap();
    for r in out.rounds() {
        for inp in &r.aggregation_inputs {
            assert_eq!(behaviors[inp.client_id as usize], Behavior::Honest);
        }
        if r.candidate_set.contains(&2) {
            assert!(r.removed_at_upload.contains(&2));
        }
        assert_eq!(
            r.bandwidth.model_upload_bytes + r.bandwidth.report_bytes,
            (r.bandwidth.notified * dep.d() * 8) as u64 + behaviors.len() as u64 * REPORT_OVERHEAD_BYTES
        );
    }
}

#[test]
fn random_selection_with_everyone_matches_verified() {
    let dep = deployment();
    let cs = clients(&[Behavior::Honest; 4]);
    let veri = run_training(&cs, &server(4, 2), &dep, &initial(), 3).unwrap();
    let rand = run_training_rand_cs(&cs, &server(4, 2), &dep, &initial(), 3).unwrap();
    assert_eq!(veri.final_model, rand.final_model);
    assert_eq!(replay_transcript(&rand.transcript).unwrap(), rand.final_model);
}

#[test]
fn random_subsets_are_uniform() {
    let ids: Vec<u32> = (0..20).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0f64; 20];
    let draws = 10_000;
    for _ in 0..draws {
        let s = random_subset(&ids, 4, &mut rng);
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 4);
        for id in s {
            counts[id as usize] += 1.0;
        }
    }
    let expected = draws as f64 * 4.0 / 20.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // chi-square with 19 degrees of freedom: mean 19, sd sqrt(38)
    assert!(chi2 <= 19.0 + 3.0 * 38f64.sqrt(), "chi2 = {chi2}");
}

#[test]
fn config_validation() {
    assert!(server(0, 1).validate(5).is_err());
    assert!(server(6, 1).validate(5).is_err());
    assert!(server(5, 0).validate(5).is_err());
    assert!(server(5, 1).validate(5).is_ok());
}
