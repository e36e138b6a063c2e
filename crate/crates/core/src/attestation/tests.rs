use super::*;
use crate::circuit::{build_metric_circuit, MetricCircuit};
use crate::fixedpoint::{quantize, FixedPointParams, QuantizedVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut impl Rng, d: usize) -> QuantizedVector {
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    quantize(&v, &FixedPointParams::default()).vector
}

fn setup(d: usize) -> (MetricCircuit, Attestor, ProvingKey, VerificationKey) {
    let circuit = build_metric_circuit(d, &FixedPointParams::default()).unwrap();
    let att = Attestor::new(AttestationConfig::default()).unwrap();
    let (pk, vk) = att.keygen(&circuit.cs).unwrap();
    (circuit, att, pk, vk)
}

#[test]
fn replay_keys_are_deterministic_and_shared() {
    let (c, att, pk, vk) = setup(8);
    assert_eq!(pk.circuit_digest(), vk.circuit_digest());
    assert_eq!(pk.to_bytes(), vk.to_bytes());
    let (pk2, _) = att.keygen(&c.cs).unwrap();
    assert_eq!(pk.to_bytes(), pk2.to_bytes());
    let rebuilt = build_metric_circuit(8, &FixedPointParams::default()).unwrap();
    let (pk3, _) = att.keygen(&rebuilt.cs).unwrap();
    assert_eq!(pk.to_bytes(), pk3.to_bytes());
}

#[test]
fn key_sizes_grow_affinely() {
    let sizes: Vec<usize> = [8usize, 16, 32].iter().map(|&d| setup(d).2.serialized_len()).collect();
    assert!(sizes[0] < sizes[1] && sizes[1] < sizes[2]);
    assert_eq!(sizes[2] - sizes[1], 2 * (sizes[1] - sizes[0]));
}

#[test]
fn keys_round_trip_byte_exactly() {
    let (_, _, pk, _) = setup(4);
    let bytes = pk.to_bytes();
    assert_eq!(bytes.len(), pk.serialized_len());
    let back = ProvingKey::read_from(&bytes[..]).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let mut tampered = bytes.clone();
    let last = tampered.len() - 1;
    tampered[last] ^= 0x01;
    assert!(VerificationKey::read_from(&tampered[..]).is_err());
}

#[test]
fn completeness_and_statement_binding() {
    let (c, att, pk, vk) = setup(8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, x) = c.generate_witness(&random_vec(&mut rng, 8), &random_vec(&mut rng, 8)).unwrap();
    let proof = att.prove(&pk, &x, &w).unwrap();
    assert_eq!(att.verify(&vk, &x, &proof), Verdict::Accept);

    let bumped = PublicStatement { dot: x.dot + FieldElement::ONE, ..x };
    assert_eq!(att.verify(&vk, &bumped, &proof), Verdict::Reject(RejectReason::StatementMismatch));

    // a prover that embeds the bumped statement still fails the constraint check
    let forged = att.prove(&pk, &bumped, &w).unwrap();
    assert!(matches!(att.verify(&vk, &bumped, &forged), Verdict::Reject(RejectReason::Unsatisfied(_))));
}

#[test]
fn proof_header_flags_replay_as_not_zero_knowledge() {
    let (c, att, pk, _) = setup(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, x) = c.generate_witness(&random_vec(&mut rng, 2), &random_vec(&mut rng, 2)).unwrap();
    let proof = att.prove(&pk, &x, &w).unwrap();
    let (header, _) = ProofHeader::parse(&proof.bytes).unwrap();
    assert_eq!(header.backend, BackendId::Replay);
    assert_eq!(header.zk_flag, NOT_ZK);
    assert_eq!(header.security_param, 128);
    assert_eq!(proof.len(), PROOF_HEADER_BYTES + 128 + 8 + 32 * c.cs.num_vars());
}

#[test]
fn malformed_proofs_rejected_without_panicking() {
    let (c, att, pk, vk) = setup(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, x) = c.generate_witness(&random_vec(&mut rng, 4), &random_vec(&mut rng, 4)).unwrap();
    let proof = att.prove(&pk, &x, &w).unwrap();
    for cut in [0, 5, PROOF_HEADER_BYTES, PROOF_HEADER_BYTES + 100, proof.len() - 1] {
        let truncated = Proof { bytes: proof.bytes[..cut].to_vec() };
        assert!(matches!(att.verify(&vk, &x, &truncated), Verdict::Reject(RejectReason::MalformedProof(_))), "cut {cut}");
    }
    let mut flag = proof.clone();
    flag.bytes[43] = ZK;
    assert!(!att.verify(&vk, &x, &flag).is_accept());
    for _ in 0..200 {
        let mut p = proof.clone();
        let i = rng.gen_range(0..p.len());
        p.bytes[i] ^= 1 << rng.gen_range(0..8);
        assert!(!att.verify(&vk, &x, &p).is_accept(), "byte {i} flip accepted");
    }
}

#[test]
fn single_wire_mutation_rejected() {
    let (c, att, pk, vk) = setup(8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rejected = 0;
    for _ in 0..100 {
        let (mut w, x) = c.generate_witness(&random_vec(&mut rng, 8), &random_vec(&mut rng, 8)).unwrap();
        let i = rng.gen_range(crate::circuit::PUBLIC_SLOTS..w.assignment.len());
        w.assignment[i] += FieldElement::from_u64(rng.gen_range(1..1 << 40));
        let proof = att.prove(&pk, &x, &w).unwrap();
        rejected += !att.verify(&vk, &x, &proof).is_accept() as usize;
    }
    assert!(rejected >= 99);
}

#[test]
fn key_circuit_mismatch_is_an_error() {
    let (_, att, pk8, _) = setup(8);
    let c16 = build_metric_circuit(16, &FixedPointParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (w, x) = c16.generate_witness(&random_vec(&mut rng, 16), &random_vec(&mut rng, 16)).unwrap();
    assert!(matches!(att.prove(&pk8, &x, &w), Err(Error::KeyCircuitMismatch { .. })));
}

#[test]
fn proof_under_other_key_rejected() {
    let (c8, att, pk8, _) = setup(8);
    let (_, _, _, vk16) = setup(16);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (w, x) = c8.generate_witness(&random_vec(&mut rng, 8), &random_vec(&mut rng, 8)).unwrap();
    let proof = att.prove(&pk8, &x, &w).unwrap();
    assert_eq!(att.verify(&vk16, &x, &proof), Verdict::Reject(RejectReason::CircuitMismatch));
}

#[test]
fn security_param_and_backend_checks() {
    assert!(Attestor::new(AttestationConfig { security_param: 100, backend: BackendId::Replay }).is_err());
    let att = Attestor::new(AttestationConfig { security_param: 80, backend: BackendId::SnarkAdapter }).unwrap();
    let c = build_metric_circuit(2, &FixedPointParams::default()).unwrap();
    assert!(matches!(att.keygen(&c.cs), Err(Error::BackendUnavailable(_))));
}

struct WrongField;

impl SnarkAdapter for WrongField {
    fn name(&self) -> &str {
        "wrong-field"
    }
    fn field_modulus(&self) -> BigUint {
        BigUint::from(101u32)
    }
    fn setup(&self, _: &ConstraintSystem, _: u16) -> Result<(Vec<u8>, Vec<u8>)> {
        unreachable!()
    }
    fn prove(&self, _: &[u8], _: &ConstraintSystem, _: &[FieldElement]) -> Result<Vec<u8>> {
        unreachable!()
    }
    fn verify(&self, _: &[u8], _: &[FieldElement], _: &[u8]) -> bool {
        false
    }
}

#[test]
fn adapter_field_order_must_match() {
    let cfg = AttestationConfig { security_param: 128, backend: BackendId::SnarkAdapter };
    assert!(matches!(Attestor::with_adapter(cfg, Arc::new(WrongField)), Err(Error::InvalidModulus(_))));
}

#[test]
fn benchmark_cache_is_transparent() {
    let (c, att, pk, vk) = setup(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ws = random_vec(&mut rng, 8);
    let zero = quantize(&[0.0f64; 8], &FixedPointParams::default()).vector;
    let (bw, bx) = c.generate_witness(&zero, &ws).unwrap();
    let cache = BenchmarkCache::from_witness(&c, &bw, &bx).unwrap();
    for _ in 0..20 {
        let (mut w, x) = c.generate_witness(&random_vec(&mut rng, 8), &ws).unwrap();
        let cached = att.prove_with(&pk, &x, &w, Some(&cache)).unwrap();
        let plain = att.prove(&pk, &x, &w).unwrap();
        assert_eq!(cached, plain);
        assert!(att.verify_with(&vk, &x, &cached, Some(&cache)).is_accept());

        // mutations anywhere, including inside the benchmark block, are caught
        let i = rng.gen_range(crate::circuit::PUBLIC_SLOTS..w.assignment.len());
        w.assignment[i] += FieldElement::ONE;
        let bad = att.prove_with(&pk, &x, &w, Some(&cache)).unwrap();
        assert!(!att.verify_with(&vk, &x, &bad, Some(&cache)).is_accept());
    }
    // a different benchmark bypasses the cache and still verifies
    let (w, x) = c.generate_witness(&random_vec(&mut rng, 8), &random_vec(&mut rng, 8)).unwrap();
    let proof = att.prove_with(&pk, &x, &w, Some(&cache)).unwrap();
    assert!(att.verify_with(&vk, &x, &proof, Some(&cache)).is_accept());
}
