//! KEYGEN / PROVE / VERIFY over the metric circuit.
//!
//! Two backends sit behind one contract. [`BackendId::Replay`] ships the full
//! witness and re-checks every constraint: interface-faithful and sound at the
//! structural level, but neither zero-knowledge nor succinct, and its proofs
//! say so in their header. [`BackendId::SnarkAdapter`] forwards to an attached
//! [`SnarkAdapter`] implementation; without one it reports
//! [`Error::BackendUnavailable`].
//!
//! Proof wire format:
//!
//! ```text
//! "VCSFPRF1" | backend_id: u8 | circuit digest: 32 | lambda: u16 LE | zk flag: u8 | backend bytes
//! ```
//!
//! The zk flag is `0x00` ("NOT-ZK") for replay proofs. Keys use
//! `"VCSFKEY1" | backend_id | lambda | circuit digest | backend bytes`; for the
//! replay backend the backend bytes are the serialized constraint system, so
//! the proving and verification keys are byte-identical.

mod replay;

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitDigest, ConstraintSystem, PublicStatement, Unsatisfied, Witness, PUBLIC_SLOTS};
use crate::error::{Error, Result};
use crate::field::{self, FieldElement};

pub use replay::BenchmarkCache;

pub const PROOF_MAGIC: &[u8; 8] = b"VCSFPRF1";
pub const KEY_MAGIC: &[u8; 8] = b"VCSFKEY1";
pub const PROOF_HEADER_BYTES: usize = 8 + 1 + 32 + 2 + 1;
pub const KEY_HEADER_BYTES: usize = 8 + 1 + 2 + 32;
pub const NOT_ZK: u8 = 0x00;
pub const ZK: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendId {
    Replay,
    SnarkAdapter,
}

impl BackendId {
    pub fn wire(self) -> u8 {
        match self {
            BackendId::Replay => 1,
            BackendId::SnarkAdapter => 2,
        }
    }

    pub fn from_wire(b: u8) -> Option<Self> {
        match b {
            1 => Some(BackendId::Replay),
            2 => Some(BackendId::SnarkAdapter),
            _ => None,
        }
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendId::Replay => "replay",
            BackendId::SnarkAdapter => "snark_adapter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttestationConfig {
    /// Security parameter lambda in bits.
    pub security_param: u16,
    pub backend: BackendId,
}

impl Default for AttestationConfig {
    fn default() -> Self {
        AttestationConfig { security_param: 128, backend: BackendId::Replay }
    }
}

impl AttestationConfig {
    pub fn validate(&self) -> Result<()> {
        if ![80, 128, 256].contains(&self.security_param) {
            return Err(Error::InvalidConfig(format!(
                "security_param must be 80, 128 or 256, got {}",
                self.security_param
            )));
        }
        Ok(())
    }
}

/// A real succinct proof system plugged in behind the attestation contract.
pub trait SnarkAdapter: Send + Sync {
    fn name(&self) -> &str;
    /// Scalar-field order; must equal the crate's field modulus.
    fn field_modulus(&self) -> BigUint;
    /// Returns `(proving key bytes, verification key bytes)`.
    fn setup(&self, cs: &ConstraintSystem, security_param: u16) -> Result<(Vec<u8>, Vec<u8>)>;
    fn prove(&self, pk: &[u8], cs: &ConstraintSystem, assignment: &[FieldElement]) -> Result<Vec<u8>>;
    fn verify(&self, vk: &[u8], public: &[FieldElement], proof: &[u8]) -> bool;
}

#[derive(Debug)]
struct KeyMaterial {
    backend: BackendId,
    security_param: u16,
    circuit_digest: CircuitDigest,
    circuit: Arc<ConstraintSystem>,
    /// Adapter key bytes; empty for replay, whose payload is the circuit itself.
    backend_bytes: Vec<u8>,
}

impl KeyMaterial {
    fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(KEY_MAGIC)?;
        w.write_all(&[self.backend.wire()])?;
        w.write_all(&self.security_param.to_le_bytes())?;
        w.write_all(&self.circuit_digest)?;
        match self.backend {
            BackendId::Replay => self.circuit.write_to(&mut w)?,
            BackendId::SnarkAdapter => {
                w.write_all(&(self.backend_bytes.len() as u64).to_le_bytes())?;
                w.write_all(&self.backend_bytes)?;
                self.circuit.write_to(&mut w)?;
            }
        }
        Ok(())
    }

    fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; KEY_HEADER_BYTES];
        r.read_exact(&mut head)?;
        if &head[..8] != KEY_MAGIC {
            return Err(Error::MalformedArtifact("bad key magic".into()));
        }
        let backend = BackendId::from_wire(head[8])
            .ok_or_else(|| Error::MalformedArtifact(format!("unknown backend id {}", head[8])))?;
        let security_param = u16::from_le_bytes([head[9], head[10]]);
        let circuit_digest: CircuitDigest = head[11..43].try_into().unwrap();
        let backend_bytes = match backend {
            BackendId::Replay => Vec::new(),
            BackendId::SnarkAdapter => {
                let mut len = [0u8; 8];
                r.read_exact(&mut len)?;
                let mut bytes = vec![0u8; u64::from_le_bytes(len) as usize];
                r.read_exact(&mut bytes)?;
                bytes
            }
        };
        let circuit = ConstraintSystem::read_from(r, PUBLIC_SLOTS)?;
        if circuit.digest() != circuit_digest {
            return Err(Error::MalformedArtifact("key circuit does not match its digest".into()));
        }
        Ok(KeyMaterial { backend, security_param, circuit_digest, circuit: Arc::new(circuit), backend_bytes })
    }

    fn serialized_len(&self) -> usize {
        let extra = match self.backend {
            BackendId::Replay => 0,
            BackendId::SnarkAdapter => 8 + self.backend_bytes.len(),
        };
        KEY_HEADER_BYTES + extra + self.circuit.serialized_len()
    }
}

macro_rules! key_type {
    ($name:ident) => {
        #[derive(Debug, Clone)]
        pub struct $name(Arc<KeyMaterial>);

        impl $name {
            pub fn backend(&self) -> BackendId {
                self.0.backend
            }

            pub fn security_param(&self) -> u16 {
                self.0.security_param
            }

            pub fn circuit_digest(&self) -> CircuitDigest {
                self.0.circuit_digest
            }

            pub fn circuit(&self) -> &Arc<ConstraintSystem> {
                &self.0.circuit
            }

            pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
                self.0.write_to(w)
            }

            pub fn to_bytes(&self) -> Vec<u8> {
                let mut out = Vec::with_capacity(self.serialized_len());
                self.write_to(&mut out).expect("in-memory write");
                out
            }

            pub fn read_from<R: Read>(r: R) -> Result<Self> {
                Ok($name(Arc::new(KeyMaterial::read_from(r)?)))
            }

            /// Serialized size in bytes.
            pub fn serialized_len(&self) -> usize {
                self.0.serialized_len()
            }
        }
    };
}

key_type!(ProvingKey);
key_type!(VerificationKey);

/// Opaque proof bytes, header included.
#[derive(Clone, PartialEq, Eq)]
pub struct Proof {
    pub bytes: Vec<u8>,
}

impl fmt::Debug for Proof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Proof({} bytes)", self.bytes.len())
    }
}

impl Proof {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Parsed proof header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProofHeader {
    pub backend: BackendId,
    pub circuit_digest: CircuitDigest,
    pub security_param: u16,
    pub zk_flag: u8,
}

impl ProofHeader {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(PROOF_MAGIC);
        out.push(self.backend.wire());
        out.extend_from_slice(&self.circuit_digest);
        out.extend_from_slice(&self.security_param.to_le_bytes());
        out.push(self.zk_flag);
    }

    pub fn parse(bytes: &[u8]) -> std::result::Result<(Self, &[u8]), RejectReason> {
        if bytes.len() < PROOF_HEADER_BYTES {
            return Err(RejectReason::MalformedProof(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..8] != PROOF_MAGIC {
            return Err(RejectReason::MalformedProof("bad proof magic".into()));
        }
        let backend = BackendId::from_wire(bytes[8])
            .ok_or_else(|| RejectReason::MalformedProof(format!("unknown backend id {}", bytes[8])))?;
        let header = ProofHeader {
            backend,
            circuit_digest: bytes[9..41].try_into().unwrap(),
            security_param: u16::from_le_bytes([bytes[41], bytes[42]]),
            zk_flag: bytes[43],
        };
        Ok((header, &bytes[PROOF_HEADER_BYTES..]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    MalformedProof(String),
    BackendMismatch,
    CircuitMismatch,
    SecurityParamMismatch,
    StatementMismatch,
    Unsatisfied(Unsatisfied),
    AdapterRejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// Entry point for the three attestation operations under one configuration.
#[derive(Clone)]
pub struct Attestor {
    cfg: AttestationConfig,
    adapter: Option<Arc<dyn SnarkAdapter>>,
}

impl fmt::Debug for Attestor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Attestor")
            .field("cfg", &self.cfg)
            .field("adapter", &self.adapter.as_ref().map(|a| a.name().to_string()))
            .finish()
    }
}

impl Attestor {
    pub fn new(cfg: AttestationConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Attestor { cfg, adapter: None })
    }

    /// Attaches a succinct backend after checking its field order.
    pub fn with_adapter(cfg: AttestationConfig, adapter: Arc<dyn SnarkAdapter>) -> Result<Self> {
        cfg.validate()?;
        let theirs = adapter.field_modulus();
        if &theirs != field::modulus() {
            return Err(Error::InvalidModulus(format!(
                "adapter {} works over {theirs}, expected {}",
                adapter.name(),
                field::modulus()
            )));
        }
        Ok(Attestor { cfg, adapter: Some(adapter) })
    }

    pub fn config(&self) -> &AttestationConfig {
        &self.cfg
    }

    fn adapter(&self) -> Result<&Arc<dyn SnarkAdapter>> {
        self.adapter
            .as_ref()
            .ok_or_else(|| Error::BackendUnavailable("no SNARK adapter attached".into()))
    }

    pub fn keygen(&self, cs: &Arc<ConstraintSystem>) -> Result<(ProvingKey, VerificationKey)> {
        let digest = cs.digest();
        let material = |backend_bytes: Vec<u8>| KeyMaterial {
            backend: self.cfg.backend,
            security_param: self.cfg.security_param,
            circuit_digest: digest,
            circuit: Arc::clone(cs),
            backend_bytes,
        };
        match self.cfg.backend {
            BackendId::Replay => {
                let shared = Arc::new(material(Vec::new()));
                Ok((ProvingKey(Arc::clone(&shared)), VerificationKey(shared)))
            }
            BackendId::SnarkAdapter => {
                let (pk, vk) = self.adapter()?.setup(cs, self.cfg.security_param)?;
                Ok((ProvingKey(Arc::new(material(pk))), VerificationKey(Arc::new(material(vk)))))
            }
        }
    }

    pub fn prove(&self, pk: &ProvingKey, x: &PublicStatement, w: &Witness) -> Result<Proof> {
        self.prove_with(pk, x, w, None)
    }

    /// Like [`Attestor::prove`], reusing the serialized benchmark block when
    /// `cache` already holds it for this statement's `ws_digest`.
    pub fn prove_with(
        &self,
        pk: &ProvingKey,
        x: &PublicStatement,
        w: &Witness,
        cache: Option<&BenchmarkCache>,
    ) -> Result<Proof> {
        if w.circuit_digest != pk.circuit_digest() {
            return Err(Error::KeyCircuitMismatch {
                key: hex::encode(pk.circuit_digest()),
                witness: hex::encode(w.circuit_digest),
            });
        }
        if pk.backend() != self.cfg.backend {
            return Err(Error::BackendUnavailable(format!("key was generated for {}", pk.backend())));
        }
        let mut header = ProofHeader {
            backend: pk.backend(),
            circuit_digest: pk.circuit_digest(),
            security_param: pk.security_param(),
            zk_flag: NOT_ZK,
        };
        match pk.backend() {
            BackendId::Replay => Ok(Proof { bytes: replay::prove(&header, pk.circuit(), x, w, cache) }),
            BackendId::SnarkAdapter => {
                header.zk_flag = ZK;
                let body = self.adapter()?.prove(&pk.0.backend_bytes, pk.circuit(), &w.assignment)?;
                let mut bytes = Vec::with_capacity(PROOF_HEADER_BYTES + body.len());
                header.write(&mut bytes);
                bytes.extend_from_slice(&body);
                Ok(Proof { bytes })
            }
        }
    }

    /// Never panics on malformed bytes; public inputs always come from `x`.
    pub fn verify(&self, vk: &VerificationKey, x: &PublicStatement, proof: &Proof) -> Verdict {
        self.verify_with(vk, x, proof, None)
    }

    pub fn verify_with(
        &self,
        vk: &VerificationKey,
        x: &PublicStatement,
        proof: &Proof,
        cache: Option<&BenchmarkCache>,
    ) -> Verdict {
        let (header, body) = match ProofHeader::parse(&proof.bytes) {
            Ok(v) => v,
            Err(r) => return Verdict::Reject(r),
        };
        if header.backend != vk.backend() {
            return Verdict::Reject(RejectReason::BackendMismatch);
        }
        if header.circuit_digest != vk.circuit_digest() {
            return Verdict::Reject(RejectReason::CircuitMismatch);
        }
        if header.security_param != vk.security_param() {
            return Verdict::Reject(RejectReason::SecurityParamMismatch);
        }
        match header.backend {
            BackendId::Replay => {
                if header.zk_flag != NOT_ZK {
                    return Verdict::Reject(RejectReason::MalformedProof("replay proof must carry the NOT-ZK flag".into()));
                }
                replay::verify(vk.circuit(), x, body, cache)
            }
            BackendId::SnarkAdapter => match &self.adapter {
                Some(a) if a.verify(&vk.0.backend_bytes, &x.public_values(), body) => Verdict::Accept,
                Some(_) => Verdict::Reject(RejectReason::AdapterRejected),
                None => Verdict::Reject(RejectReason::MalformedProof("no SNARK adapter attached".into())),
            },
        }
    }
}

/// Free-function forms over the default replay configuration.
pub fn keygen(cfg: &AttestationConfig, cs: &Arc<ConstraintSystem>) -> Result<(ProvingKey, VerificationKey)> {
    Attestor::new(cfg.clone())?.keygen(cs)
}

pub fn prove(pk: &ProvingKey, x: &PublicStatement, w: &Witness) -> Result<Proof> {
    let cfg = AttestationConfig { security_param: pk.security_param(), backend: pk.backend() };
    Attestor::new(cfg)?.prove(pk, x, w)
}

pub fn verify(vk: &VerificationKey, x: &PublicStatement, proof: &Proof) -> Verdict {
    let cfg = AttestationConfig { security_param: vk.security_param(), backend: vk.backend() };
    match Attestor::new(cfg) {
        Ok(a) => a.verify(vk, x, proof),
        Err(e) => Verdict::Reject(RejectReason::MalformedProof(e.to_string())),
    }
}

#[cfg(test)]
mod tests;
