//! Append-only JSON-lines transcript.
//!
//! Line 0 is the run header, line `t` the record of round `t`. Every line is
//! `{"chain":HEX,"body":{...}}` where `chain = sha256(previous chain || body)`
//! over the exact body text, with an all-zero chain before the header.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::{aggregate_inputs, Bandwidth, RoundOutcome, RoundRecord, SelectionMode};
use super::*;
use crate::learning::MlpShape;

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TranscriptHeader<S: Scalar> {
    pub version: u32,
    pub mode: SelectionMode,
    pub seed: u64,
    pub d: usize,
    pub scalar_bytes: usize,
    pub shape: MlpShape,
    pub n_select: usize,
    pub rounds: usize,
    pub fixed_point: FixedPointParams,
    pub circuit_digest: String,
    /// `(id, behavior, sample count)` per client.
    pub clients: Vec<(u32, Behavior, usize)>,
    pub initial: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript<S: Scalar> {
    pub header: TranscriptHeader<S>,
    pub rounds: Vec<RoundRecord<S>>,
}

#[derive(Deserialize)]
struct Line {
    chain: String,
    body: serde_json::Value,
}

fn chain(prev: &[u8; 32], body: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(body.as_bytes());
    h.finalize().into()
}

fn mismatch(round: usize, reason: impl Into<String>) -> Error {
    Error::TranscriptMismatch { round, reason: reason.into() }
}

impl<S: Scalar> Transcript<S> {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut prev = [0u8; 32];
        let mut put = |body: String, w: &mut W| -> Result<()> {
            prev = chain(&prev, &body);
            writeln!(w, "{{\"chain\":\"{}\",\"body\":{body}}}", hex::encode(prev))?;
            Ok(())
        };
        put(serde_json::to_string(&self.header)?, &mut w)?;
        for r in &self.rounds {
            put(serde_json::to_string(r)?, &mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    /// Parses and checks the digest chain; errors name the first bad line.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut prev = [0u8; 32];
        let mut header: Option<TranscriptHeader<S>> = None;
        let mut rounds = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let value: Line =
                serde_json::from_str(&line).map_err(|e| mismatch(i, format!("unparseable line: {e}")))?;
            let claimed = value.chain;
            let text = if i == 0 {
                let h: TranscriptHeader<S> =
                    serde_json::from_value(value.body).map_err(|e| mismatch(0, format!("bad header: {e}")))?;
                let text = serde_json::to_string(&h)?;
                header = Some(h);
                text
            } else {
                let rec: RoundRecord<S> =
                    serde_json::from_value(value.body).map_err(|e| mismatch(i, format!("bad record: {e}")))?;
                let text = serde_json::to_string(&rec)?;
                rounds.push(rec);
                text
            };
            // the body must be the canonical serialization of what was parsed
            let embedded = body_text(&line).ok_or_else(|| mismatch(i, "missing body"))?;
            if embedded != text {
                return Err(mismatch(i, "body is not in canonical form"));
            }
            prev = chain(&prev, &text);
            if hex::encode(prev) != claimed {
                return Err(mismatch(i, "chain digest mismatch"));
            }
        }
        let header = header.ok_or_else(|| mismatch(0, "empty transcript"))?;
        Ok(Transcript { header, rounds })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

fn body_text(line: &str) -> Option<&str> {
    let start = line.find(",\"body\":")? + ",\"body\":".len();
    line.get(start..line.len().checked_sub(1)?)
}

/// Re-derives every round from its recorded inputs and returns the final
/// global model. Fails with the index of the first round that disagrees.
pub fn replay_transcript<S: Scalar>(t: &Transcript<S>) -> Result<ModelParams<S>> {
    let h = &t.header;
    if h.version != TRANSCRIPT_VERSION {
        return Err(mismatch(0, format!("version {} is not {TRANSCRIPT_VERSION}", h.version)));
    }
    if h.scalar_bytes != S::BYTES {
        return Err(mismatch(0, format!("transcript holds {}-byte scalars", h.scalar_bytes)));
    }
    if h.shape.num_params() != h.d || h.initial.len() != h.d {
        return Err(mismatch(0, "model size disagrees with shape"));
    }
    if t.rounds.len() != h.rounds {
        return Err(mismatch(t.rounds.len(), format!("{} of {} rounds present", t.rounds.len(), h.rounds)));
    }
    let mut global = h.initial.clone();
    for (i, r) in t.rounds.iter().enumerate() {
        replay_round(h, r, i + 1, &global)?;
        global = r.global_after.clone();
    }
    ModelParams::new(global, h.shape.clone())
}

fn replay_round<S: Scalar>(h: &TranscriptHeader<S>, r: &RoundRecord<S>, t: usize, prev: &[S]) -> Result<()> {
    let bad = |why: String| mismatch(t, why);
    if r.round != t {
        return Err(bad(format!("record is labelled round {}", r.round)));
    }
    let params = &h.fixed_point;
    let digest = |v: &[S]| -> Result<FieldElement> { sponge_hash(&quantize(v, params).vector.elems) };
    if r.benchmark.len() != h.d || digest(&r.benchmark)? != r.ws_digest {
        return Err(bad("benchmark digest".into()));
    }
    let qb = quantize(&r.benchmark, params).vector.signed()?;
    let bench_norm: i128 = qb.iter().map(|&v| v as i128 * v as i128).sum();

    let ids: Vec<u32> = h.clients.iter().map(|c| c.0).collect();
    if r.reports.iter().map(|e| e.client_id).collect::<Vec<_>>() != ids {
        return Err(bad("report list does not cover every client in order".into()));
    }
    let mut screened = Vec::with_capacity(r.reports.len());
    for e in &r.reports {
        let recomputed = recover_cosine(&e.statement.dot, &e.statement.norm_sq, bench_norm);
        if e.verdict != ReportVerdict::NotChecked && recomputed != e.recomputed {
            return Err(bad(format!("client {}: recovered cosine", e.client_id)));
        }
        if e.verdict.is_accepted() {
            if e.statement.ws_digest != r.ws_digest {
                return Err(bad(format!("client {}: accepted with a stale benchmark", e.client_id)));
            }
            if h.mode == SelectionMode::Verified
                && !matches!(recomputed, Some(c) if (c - e.cosine).abs() <= COSINE_TOLERANCE)
            {
                return Err(bad(format!("client {}: accepted with a mismatched cosine", e.client_id)));
            }
        }
        screened.push(Screened { client_id: e.client_id, verdict: e.verdict.clone(), recomputed: e.recomputed });
    }
    let verified: Vec<u32> = screened.iter().filter(|s| s.verdict.is_accepted()).map(|s| s.client_id).collect();
    if verified != r.verified_ids {
        return Err(bad("verified set".into()));
    }
    let vset: BTreeSet<u32> = verified.iter().copied().collect();
    if r.candidate_set.len() > h.n_select || !r.candidate_set.iter().all(|id| vset.contains(id)) {
        return Err(bad("candidate set".into()));
    }
    if h.mode == SelectionMode::Verified && rank(&screened, h.n_select) != r.candidate_set {
        return Err(bad("candidate set is not the top-N ranking".into()));
    }

    if r.audits.iter().map(|a| a.client_id).collect::<Vec<_>>() != r.candidate_set {
        return Err(bad("audit list".into()));
    }
    let removed: Vec<u32> = r.audits.iter().filter(|a| a.outcome != AuditOutcome::Kept).map(|a| a.client_id).collect();
    if removed != r.removed_at_upload {
        return Err(bad("removal list".into()));
    }
    let mut kept: Vec<u32> = r.audits.iter().filter(|a| a.outcome == AuditOutcome::Kept).map(|a| a.client_id).collect();
    kept.sort_unstable();
    if r.aggregation_inputs.iter().map(|a| a.client_id).collect::<Vec<_>>() != kept {
        return Err(bad("aggregation inputs are not the audited survivors".into()));
    }
    for a in &r.aggregation_inputs {
        let (_, _, n) = h.clients.iter().find(|c| c.0 == a.client_id).expect("survivor is a known client");
        if a.sample_count != *n {
            return Err(bad(format!("client {}: sample count", a.client_id)));
        }
        let committed = r.reports.iter().find(|e| e.client_id == a.client_id).unwrap().statement.model_digest;
        if a.model.len() != h.d || digest(&a.model)? != committed {
            return Err(bad(format!("client {}: upload does not match its commitment", a.client_id)));
        }
    }

    let expected = match r.outcome {
        RoundOutcome::EmptySelection if r.aggregation_inputs.is_empty() => prev.to_vec(),
        RoundOutcome::Aggregated if !r.aggregation_inputs.is_empty() => aggregate_inputs(&r.aggregation_inputs, &h.shape)?,
        _ => return Err(bad("outcome disagrees with the aggregation inputs".into())),
    };
    if expected.len() != r.global_after.len()
        || expected.iter().zip(&r.global_after).any(|(a, b)| a.to_f64().map(f64::to_bits) != b.to_f64().map(f64::to_bits))
    {
        return Err(bad("global model is not reproduced bit-exactly".into()));
    }

    let expected_bw = Bandwidth {
        notified: r.candidate_set.len(),
        model_upload_bytes: (r.candidate_set.len() * h.d * h.scalar_bytes) as u64,
        report_bytes: h.clients.len() as u64 * REPORT_OVERHEAD_BYTES,
        proof_bytes: r.reports.iter().map(|e| e.proof_bytes).sum(),
    };
    if expected_bw != r.bandwidth {
        return Err(bad("byte accounting".into()));
    }
    Ok(())
}
