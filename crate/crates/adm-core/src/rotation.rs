//! Certified model rotation: structural certificates, a hash-linked chain of
//! signed version records, and the serving engine that swaps weights only
//! after a candidate certifies.
//!
//! Records serialize through canonical JSON (sorted keys, shortest float
//! round-trip), so byte-level digests are stable across runs. Each record's
//! `parent_hash` covers the parent's full canonical bytes including its
//! signature, and each signature covers the record's canonical bytes with the
//! signature field removed; flipping any bit in a committed record breaks the
//! chain.

use std::collections::VecDeque;

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapt::{AdaptError, ShiftDetector, Verdict};
use crate::autodiff::{AutodiffError, Layer, LossGraph};
use crate::clifford::{CliffordError, Multivector, RawMultivector, RotorCheck};
use crate::units::DimVec;

#[derive(Debug, Error)]
pub enum RotationError {
    #[error("record {seq}: {reason}")]
    ChainInvalid { seq: u64, reason: String },
    #[error("record {seq} does not extend the chain: {reason}")]
    BadAppend { seq: u64, reason: String },
    #[error("initial weights fail certification: {0}")]
    BadGenesis(String),
    #[error("serialization: {0}")]
    Json(String),
    #[error(transparent)]
    Clifford(#[from] CliffordError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

fn json_err(e: serde_json::Error) -> RotationError {
    RotationError::Json(e.to_string())
}

/// Canonical JSON bytes: routing through `Value` sorts object keys, and
/// serde_json prints floats with the shortest round-trip form, so equal data
/// always yields equal bytes.
pub fn canonical_bytes<T: Serialize>(x: &T) -> Result<Vec<u8>, RotationError> {
    let value = serde_json::to_value(x).map_err(json_err)?;
    serde_json::to_vec(&value).map_err(json_err)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a weight set's canonical serialized form.
pub fn weights_hash(weights: &[RawMultivector]) -> Result<String, RotationError> {
    Ok(sha256_hex(&canonical_bytes(&weights)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub scheme: String,
    pub public_key: String,
    pub signature: String,
}

/// Record signer. The null scheme commits to nothing and exists for
/// development runs; tamper evidence for the chain head needs ed25519.
#[derive(Debug, Clone)]
pub enum Signing {
    Null,
    Ed25519(SigningKey),
}

impl Signing {
    pub fn ed25519_from_seed(seed: [u8; 32]) -> Self {
        Signing::Ed25519(SigningKey::from_bytes(&seed))
    }

    pub fn scheme(&self) -> &'static str {
        match self {
            Signing::Null => "null",
            Signing::Ed25519(_) => "ed25519",
        }
    }

    pub fn sign(&self, msg: &[u8]) -> SignatureEntry {
        match self {
            Signing::Null => SignatureEntry {
                scheme: "null".into(),
                public_key: String::new(),
                signature: String::new(),
            },
            Signing::Ed25519(key) => SignatureEntry {
                scheme: "ed25519".into(),
                public_key: hex::encode(key.verifying_key().to_bytes()),
                signature: hex::encode(key.sign(msg).to_bytes()),
            },
        }
    }
}

/// Decode hex in the canonical form the signer emits: lowercase only.
/// `hex::decode` alone would accept mixed case, letting two distinct byte
/// streams denote the same entry — malleability in the one field the payload
/// signature cannot cover.
fn canonical_hex(s: &str) -> Option<Vec<u8>> {
    if !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return None;
    }
    hex::decode(s).ok()
}

/// Check one signature entry against a message. Unknown schemes and
/// non-canonical encodings fail closed.
pub fn verify_entry(entry: &SignatureEntry, msg: &[u8]) -> bool {
    match entry.scheme.as_str() {
        "null" => true,
        "ed25519" => {
            let Some(pk) = canonical_hex(&entry.public_key) else { return false };
            let Ok(pk) = <[u8; 32]>::try_from(pk) else { return false };
            let Ok(vk) = VerifyingKey::from_bytes(&pk) else { return false };
            let Some(sig) = canonical_hex(&entry.signature) else { return false };
            let Ok(sig) = <[u8; 64]>::try_from(sig) else { return false };
            vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&sig)).is_ok()
        }
        _ => false,
    }
}

/// Structural fingerprint of one trainable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCert {
    pub index: usize,
    pub grade_mask: crate::clifford::GradeMask,
    pub dim: DimVec,
    pub stored_blades: usize,
}

/// Rotor residual for one sandwich layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotorCert {
    pub layer: usize,
    pub check: RotorCheck,
}

/// Everything a party needs to audit a model version's structure without
/// rerunning it: the algebra (pinned by the Cayley table digest), the scalar
/// format, every parameter's grade mask and dimension, rotor residuals, and
/// the dimension-chain verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub algebra: String,
    pub cayley_fingerprint: String,
    pub format: String,
    pub input_dim: DimVec,
    pub loss_dim: DimVec,
    pub dim_chain_ok: bool,
    pub weights: Vec<WeightCert>,
    pub rotors: Vec<RotorCert>,
}

impl Certificate {
    pub fn for_graph(graph: &LossGraph, rotor_tol: f64) -> Result<Self, RotationError> {
        let weights = graph
            .params()
            .iter()
            .enumerate()
            .map(|(index, p)| WeightCert {
                index,
                grade_mask: p.grade_mask(),
                dim: p.dim(),
                stored_blades: p.stored_blades().len(),
            })
            .collect();
        let mut rotors = Vec::new();
        for (layer, l) in graph.layers().iter().enumerate() {
            if let Layer::Sandwich { rotor } = l {
                rotors.push(RotorCert { layer, check: rotor.rotor_check(graph.table(), rotor_tol)? });
            }
        }
        Ok(Certificate {
            algebra: graph.table().signature().to_string(),
            cayley_fingerprint: graph.table().fingerprint(),
            format: graph.format().descriptor(),
            input_dim: graph.input_dim(),
            loss_dim: graph.loss_dim(),
            // a constructed graph has already passed the chain check
            dim_chain_ok: true,
            weights,
            rotors,
        })
    }

    pub fn ok(&self) -> bool {
        self.dim_chain_ok && self.rotors.iter().all(|r| r.check.ok)
    }
}

/// Human-readable differences between two certificates. Field-by-field, so a
/// version record shows exactly what a rotation changed structurally.
pub fn certificate_diff(old: &Certificate, new: &Certificate) -> Vec<String> {
    let mut out = Vec::new();
    let mut push = |label: &str, a: String, b: String| {
        if a != b {
            out.push(format!("{label}: {a} -> {b}"));
        }
    };
    push("algebra", old.algebra.clone(), new.algebra.clone());
    push("cayley fingerprint", old.cayley_fingerprint.clone(), new.cayley_fingerprint.clone());
    push("format", old.format.clone(), new.format.clone());
    push("input dim", old.input_dim.to_string(), new.input_dim.to_string());
    push("loss dim", old.loss_dim.to_string(), new.loss_dim.to_string());
    push("dim chain ok", old.dim_chain_ok.to_string(), new.dim_chain_ok.to_string());
    push("parameter count", old.weights.len().to_string(), new.weights.len().to_string());
    for (a, b) in old.weights.iter().zip(&new.weights) {
        push(
            &format!("weight {} grade mask", a.index),
            a.grade_mask.to_string(),
            b.grade_mask.to_string(),
        );
        push(&format!("weight {} dim", a.index), a.dim.to_string(), b.dim.to_string());
    }
    push("rotor count", old.rotors.len().to_string(), new.rotors.len().to_string());
    for (a, b) in old.rotors.iter().zip(&new.rotors) {
        push(&format!("rotor at layer {} ok", a.layer), a.check.ok.to_string(), b.check.ok.to_string());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionRecord {
    pub seq: u64,
    pub version_id: String,
    /// Digest of the parent record's full canonical bytes, signature included.
    pub parent_hash: Option<String>,
    pub weights_hash: String,
    pub timestamp_ms: u64,
    /// Divergence that triggered this rotation; absent for the genesis record
    /// and operator-forced rotations.
    pub kl_at_trigger: Option<f64>,
    pub evidence_sources: Vec<String>,
    pub user_feedback: Vec<String>,
    pub certificate: Certificate,
    /// What changed structurally relative to the parent.
    pub cert_diff: Vec<String>,
    pub signature: SignatureEntry,
}

pub fn version_id(seq: u64, weights_hash: &str) -> String {
    format!("v{seq:04}-{}", &weights_hash[..12.min(weights_hash.len())])
}

/// Canonical bytes of a record with the signature field removed: the message
/// the record's signature commits to.
pub fn signable_bytes(record: &VersionRecord) -> Result<Vec<u8>, RotationError> {
    let mut value = serde_json::to_value(record).map_err(json_err)?;
    value
        .as_object_mut()
        .expect("record serializes to an object")
        .remove("signature");
    serde_json::to_vec(&value).map_err(json_err)
}

/// Digest of a record's full canonical bytes, the value a child stores as
/// `parent_hash`.
pub fn record_digest(record: &VersionRecord) -> Result<String, RotationError> {
    Ok(sha256_hex(&canonical_bytes(record)?))
}

#[derive(Debug, Clone, Default)]
pub struct VersionChain {
    records: Vec<VersionRecord>,
}

impl VersionChain {
    pub fn new() -> Self {
        VersionChain::default()
    }

    pub fn from_records(records: Vec<VersionRecord>) -> Self {
        VersionChain { records }
    }

    pub fn records(&self) -> &[VersionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head(&self) -> Option<&VersionRecord> {
        self.records.last()
    }

    pub fn append(&mut self, record: VersionRecord) -> Result<(), RotationError> {
        let seq = record.seq;
        let bad = |reason: String| RotationError::BadAppend { seq, reason };
        if seq != self.records.len() as u64 {
            return Err(bad(format!("expected seq {}", self.records.len())));
        }
        let want_parent = match self.head() {
            None => None,
            Some(h) => Some(record_digest(h)?),
        };
        if record.parent_hash != want_parent {
            return Err(bad("parent hash does not match the head".into()));
        }
        self.records.push(record);
        Ok(())
    }

    /// Recompute every link: sequence numbers, version ids, parent digests,
    /// certificate diffs, and signatures. Any flipped bit in a committed
    /// record surfaces here, and so does a validly signed record whose stored
    /// diff disagrees with its own certificates.
    pub fn verify(&self) -> Result<(), RotationError> {
        let mut parent: Option<&VersionRecord> = None;
        let mut parent_digest: Option<String> = None;
        for (i, rec) in self.records.iter().enumerate() {
            let fail = |reason: &str| RotationError::ChainInvalid { seq: rec.seq, reason: reason.into() };
            if rec.seq != i as u64 {
                return Err(fail("sequence number out of order"));
            }
            if rec.version_id != version_id(rec.seq, &rec.weights_hash) {
                return Err(fail("version id does not match weights hash"));
            }
            if rec.parent_hash != parent_digest {
                return Err(fail("parent hash mismatch"));
            }
            let want_diff = match parent {
                None => Vec::new(),
                Some(p) => certificate_diff(&p.certificate, &rec.certificate),
            };
            if rec.cert_diff != want_diff {
                return Err(fail("certificate diff does not match recomputation"));
            }
            if !verify_entry(&rec.signature, &signable_bytes(rec)?) {
                return Err(fail("signature rejected"));
            }
            parent = Some(rec);
            parent_digest = Some(record_digest(rec)?);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EngineState {
    Serving,
    Training,
    Certifying,
    Rotating,
}

/// Everything the engine can be told, as one event stream.
#[derive(Debug, Clone)]
pub enum EngineEvent {
    /// One scalar observation from the environment.
    Observe { x: f64 },
    /// An inference request; the reply carries exactly one version id.
    Request { id: u64, input: RawMultivector },
    /// A trained candidate: new parameter values plus the histogram of the
    /// regime it was fit to, so the detector can refit after the swap.
    Candidate {
        weights: Vec<RawMultivector>,
        evidence_sources: Vec<String>,
        user_feedback: Vec<String>,
        model_counts: Vec<u64>,
    },
    /// Advance the injected logical clock; completes a pending rotation.
    Tick { now_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EngineOutput {
    Prediction { id: u64, version_id: String, loss: f64 },
    BadRequest { id: u64, reason: String },
    TrainingStarted { kl: f64 },
    RotationStarted { version_id: String },
    Rotated { version_id: String },
    Refused { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EngineStats {
    pub served: u64,
    pub rotations: u64,
    pub refusals: u64,
    pub buffered_peak: usize,
}

struct PendingRotation {
    graph: LossGraph,
    certificate: Certificate,
    kl: Option<f64>,
    evidence_sources: Vec<String>,
    user_feedback: Vec<String>,
    model_counts: Vec<u64>,
}

/// Single-loop serving engine. All state transitions happen inside
/// [`RotationEngine::handle`]; requests that arrive while a rotation is
/// draining are buffered and replayed against the new version on the next
/// tick, so no response ever mixes versions.
pub struct RotationEngine {
    graph: LossGraph,
    detector: ShiftDetector,
    signing: Signing,
    rotor_tol: f64,
    chain: VersionChain,
    state: EngineState,
    now_ms: u64,
    pending_kl: Option<f64>,
    pending: Option<PendingRotation>,
    buffered: VecDeque<(u64, RawMultivector)>,
    stats: EngineStats,
}

impl RotationEngine {
    pub fn new(
        graph: LossGraph,
        detector: ShiftDetector,
        signing: Signing,
        rotor_tol: f64,
        now_ms: u64,
    ) -> Result<Self, RotationError> {
        let certificate = Certificate::for_graph(&graph, rotor_tol)?;
        if !certificate.ok() {
            return Err(RotationError::BadGenesis("rotor residual above tolerance".into()));
        }
        let mut engine = RotationEngine {
            graph,
            detector,
            signing,
            rotor_tol,
            chain: VersionChain::new(),
            state: EngineState::Serving,
            now_ms,
            pending_kl: None,
            pending: None,
            buffered: VecDeque::new(),
            stats: EngineStats::default(),
        };
        let record = engine.build_record(certificate, None, Vec::new(), Vec::new())?;
        engine.chain.append(record)?;
        Ok(engine)
    }

    pub fn state(&self) -> EngineState {
        self.state
    }

    pub fn chain(&self) -> &VersionChain {
        &self.chain
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn graph(&self) -> &LossGraph {
        &self.graph
    }

    pub fn detector(&self) -> &ShiftDetector {
        &self.detector
    }

    pub fn current_version(&self) -> &str {
        &self.chain.head().expect("chain has a genesis record").version_id
    }

    fn raw_params(graph: &LossGraph) -> Vec<RawMultivector> {
        graph.params().iter().map(|p| p.to_raw()).collect()
    }

    fn build_record(
        &self,
        certificate: Certificate,
        kl: Option<f64>,
        evidence_sources: Vec<String>,
        user_feedback: Vec<String>,
    ) -> Result<VersionRecord, RotationError> {
        let seq = self.chain.len() as u64;
        let parent_hash = match self.chain.head() {
            None => None,
            Some(h) => Some(record_digest(h)?),
        };
        let cert_diff = match self.chain.head() {
            None => Vec::new(),
            Some(h) => certificate_diff(&h.certificate, &certificate),
        };
        let whash = weights_hash(&Self::raw_params(&self.graph))?;
        let mut record = VersionRecord {
            seq,
            version_id: version_id(seq, &whash),
            parent_hash,
            weights_hash: whash,
            timestamp_ms: self.now_ms,
            kl_at_trigger: kl,
            evidence_sources,
            user_feedback,
            certificate,
            cert_diff,
            signature: SignatureEntry {
                scheme: self.signing.scheme().into(),
                public_key: String::new(),
                signature: String::new(),
            },
        };
        record.signature = self.signing.sign(&signable_bytes(&record)?);
        Ok(record)
    }

    /// Elaborate and certify a candidate. Any failure is a refusal: the
    /// serving version, the chain, and the rotation counter stay untouched.
    fn certify(
        &mut self,
        weights: Vec<RawMultivector>,
        model_counts: &[u64],
    ) -> Result<(LossGraph, Certificate), String> {
        let params = self.graph.params().len();
        if weights.len() != params {
            return Err(format!("candidate has {} parameters, serving model has {params}", weights.len()));
        }
        if model_counts.len() != self.detector.model_probs().len() {
            return Err(format!(
                "candidate predictive has {} bins, detector has {}",
                model_counts.len(),
                self.detector.model_probs().len()
            ));
        }
        let mut candidate = self.graph.clone();
        for (i, raw) in weights.iter().enumerate() {
            let mv = Multivector::from_raw(raw).map_err(|e| format!("parameter {i}: {e}"))?;
            candidate.set_param(i, mv).map_err(|e| e.to_string())?;
        }
        let cert = Certificate::for_graph(&candidate, self.rotor_tol).map_err(|e| e.to_string())?;
        if !cert.ok() {
            let worst = cert
                .rotors
                .iter()
                .filter(|r| !r.check.ok)
                .map(|r| format!("layer {} residual {:.3e} > {:.3e}", r.layer, r.check.residual, r.check.tol))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(format!("rotor check failed: {worst}"));
        }
        Ok((candidate, cert))
    }

    fn serve(&mut self, id: u64, input: &RawMultivector) -> EngineOutput {
        let mv = match Multivector::from_raw(input) {
            Ok(mv) => mv,
            Err(e) => return EngineOutput::BadRequest { id, reason: e.to_string() },
        };
        match self.graph.forward(&mv) {
            Ok(fwd) => {
                self.stats.served += 1;
                EngineOutput::Prediction {
                    id,
                    version_id: self.current_version().to_string(),
                    loss: fwd.loss.decode(),
                }
            }
            Err(e) => EngineOutput::BadRequest { id, reason: e.to_string() },
        }
    }

    pub fn handle(&mut self, event: EngineEvent) -> Result<Vec<EngineOutput>, RotationError> {
        match event {
            EngineEvent::Observe { x } => {
                let verdict = self.detector.observe(x);
                if self.state == EngineState::Serving {
                    if let Verdict::Rotate { kl } = verdict {
                        self.state = EngineState::Training;
                        self.pending_kl = Some(kl);
                        return Ok(vec![EngineOutput::TrainingStarted { kl }]);
                    }
                }
                Ok(Vec::new())
            }
            EngineEvent::Request { id, input } => {
                if self.state == EngineState::Rotating {
                    self.buffered.push_back((id, input));
                    self.stats.buffered_peak = self.stats.buffered_peak.max(self.buffered.len());
                    return Ok(Vec::new());
                }
                Ok(vec![self.serve(id, &input)])
            }
            EngineEvent::Candidate { weights, evidence_sources, user_feedback, model_counts } => {
                if self.state == EngineState::Rotating {
                    return Ok(vec![EngineOutput::Refused {
                        reason: "rotation already in progress".into(),
                    }]);
                }
                let resume = self.state;
                self.state = EngineState::Certifying;
                match self.certify(weights, &model_counts) {
                    Ok((graph, certificate)) => {
                        self.state = EngineState::Rotating;
                        self.pending = Some(PendingRotation {
                            graph,
                            certificate,
                            kl: self.pending_kl.take(),
                            evidence_sources,
                            user_feedback,
                            model_counts,
                        });
                        Ok(vec![EngineOutput::RotationStarted {
                            version_id: self.current_version().to_string(),
                        }])
                    }
                    Err(reason) => {
                        self.state = resume;
                        self.stats.refusals += 1;
                        Ok(vec![EngineOutput::Refused { reason }])
                    }
                }
            }
            EngineEvent::Tick { now_ms } => {
                self.now_ms = self.now_ms.max(now_ms);
                let Some(pending) = self.pending.take() else {
                    return Ok(Vec::new());
                };
                // drain: swap weights, commit the record, refit the detector,
                // then replay everything buffered against the new version
                self.graph = pending.graph;
                let record = self.build_record(
                    pending.certificate,
                    pending.kl,
                    pending.evidence_sources,
                    pending.user_feedback,
                )?;
                self.chain.append(record)?;
                self.detector.refit(&pending.model_counts)?;
                self.stats.rotations += 1;
                self.state = EngineState::Serving;
                let mut out = vec![EngineOutput::Rotated {
                    version_id: self.current_version().to_string(),
                }];
                while let Some((id, input)) = self.buffered.pop_front() {
                    out.push(self.serve(id, &input));
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::DetectorConfig;
    use crate::arith::{PositFormat, PositValue};
    use crate::autodiff::Reduce;
    use crate::clifford::{CayleyTable, GradeMask, Signature};
    use serde_json::json;

    #[test]
    fn canonical_bytes_sort_object_keys() {
        let v = json!({"zeta": 1, "alpha": {"d": 2, "c": 3}});
        assert_eq!(canonical_bytes(&v).unwrap(), br#"{"alpha":{"c":3,"d":2},"zeta":1}"#);
    }

    #[test]
    fn signatures_round_trip_and_fail_closed() {
        let msg = b"payload";
        let null = Signing::Null.sign(msg);
        assert!(verify_entry(&null, msg));

        let signer = Signing::ed25519_from_seed([7u8; 32]);
        let entry = signer.sign(msg);
        assert_eq!(entry.scheme, "ed25519");
        assert!(verify_entry(&entry, msg));
        assert!(!verify_entry(&entry, b"other payload"));

        let mut bad = entry.clone();
        bad.signature.replace_range(0..1, if &bad.signature[0..1] == "a" { "b" } else { "a" });
        assert!(!verify_entry(&bad, msg));

        let mut unknown = entry;
        unknown.scheme = "rot13".into();
        assert!(!verify_entry(&unknown, msg));

        // same seed, same key
        let again = Signing::ed25519_from_seed([7u8; 32]).sign(msg);
        assert_eq!(again.public_key, Signing::ed25519_from_seed([7u8; 32]).sign(msg).public_key);
    }

    fn scalar_graph(w: f64) -> LossGraph {
        let sig = Signature::new(2, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let fmt = PositFormat::new(32, 2, 6).unwrap();
        let mask = GradeMask::from_grades(&[0]);
        let dim = DimVec::dimensionless();
        let mut weight = Multivector::zero(sig, mask, dim, fmt);
        weight.set(0, PositValue::encode(w, fmt)).unwrap();
        LossGraph::new(
            table,
            fmt,
            mask,
            dim,
            vec![Layer::GeometricProduct { weight }],
            Reduce::SquaredNorm,
        )
        .unwrap()
    }

    fn detector() -> ShiftDetector {
        let edges: Vec<f64> = (0..=8).map(|i| i as f64).collect();
        let counts = vec![2, 10, 40, 80, 80, 40, 10, 2];
        ShiftDetector::new(edges, &counts, DetectorConfig { window: 32, epsilon: 0.35, alpha: 1.0 })
            .unwrap()
    }

    fn raw_scalar(graph: &LossGraph, w: f64) -> RawMultivector {
        let p = graph.params()[0];
        let mut mv = Multivector::zero(p.signature(), p.grade_mask(), p.dim(), p.format());
        mv.set(0, PositValue::encode(w, p.format())).unwrap();
        mv.to_raw()
    }

    fn scalar_input(graph: &LossGraph, x: f64) -> RawMultivector {
        let mut mv = Multivector::zero(
            graph.table().signature(),
            graph.input_mask(),
            graph.input_dim(),
            graph.format(),
        );
        mv.set(0, PositValue::encode(x, graph.format())).unwrap();
        mv.to_raw()
    }

    #[test]
    fn certificate_reflects_graph_structure() {
        let graph = scalar_graph(3.0);
        let cert = Certificate::for_graph(&graph, 1e-6).unwrap();
        assert_eq!(cert.algebra, "Cl(2,0,0)");
        assert_eq!(cert.format, "posit(32,2,6)");
        assert_eq!(cert.cayley_fingerprint, graph.table().fingerprint());
        assert_eq!(cert.weights.len(), 1);
        assert_eq!(cert.weights[0].grade_mask, GradeMask::from_grades(&[0]));
        assert!(cert.rotors.is_empty());
        assert!(cert.ok());
        assert!(certificate_diff(&cert, &cert).is_empty());

        let other = Certificate::for_graph(&scalar_graph(5.0), 1e-6).unwrap();
        // values differ, structure does not
        assert!(certificate_diff(&cert, &other).is_empty());
    }

    fn drive_to_training(engine: &mut RotationEngine) -> f64 {
        for step in 0..500 {
            let outs = engine.handle(EngineEvent::Observe { x: 7.5 }).unwrap();
            if let Some(EngineOutput::TrainingStarted { kl }) = outs.first() {
                assert!(step >= 31, "cannot fire before the window fills");
                return *kl;
            }
        }
        panic!("drift never tripped the detector");
    }

    fn new_counts() -> Vec<u64> {
        let mut c = vec![0u64; 8];
        c[7] = 200;
        c
    }

    #[test]
    fn drift_rotates_exactly_once_and_replays_buffered_requests() {
        let graph = scalar_graph(3.0);
        let mut engine =
            RotationEngine::new(graph, detector(), Signing::ed25519_from_seed([1; 32]), 1e-6, 100).unwrap();
        assert_eq!(engine.chain().len(), 1);
        assert_eq!(engine.current_version(), &version_id(0, &engine.chain().records()[0].weights_hash));

        // serve under the genesis version
        let x = scalar_input(engine.graph(), 2.0);
        let outs = engine.handle(EngineEvent::Request { id: 1, input: x.clone() }).unwrap();
        let genesis_version = engine.current_version().to_string();
        match &outs[0] {
            EngineOutput::Prediction { id: 1, version_id, loss } => {
                assert_eq!(version_id, &genesis_version);
                assert_eq!(*loss, 18.0); // (3*2)^2 / 2
            }
            other => panic!("unexpected {other:?}"),
        }

        let kl = drive_to_training(&mut engine);
        assert!(kl > 0.35);
        assert_eq!(engine.state(), EngineState::Training);

        // candidate certifies; requests during the drain are buffered
        let cand = raw_scalar(engine.graph(), 1.5);
        let outs = engine
            .handle(EngineEvent::Candidate {
                weights: vec![cand],
                evidence_sources: vec!["stream".into()],
                user_feedback: vec![],
                model_counts: new_counts(),
            })
            .unwrap();
        assert!(matches!(outs[0], EngineOutput::RotationStarted { .. }));
        assert_eq!(engine.state(), EngineState::Rotating);
        assert!(engine
            .handle(EngineEvent::Request { id: 2, input: x.clone() })
            .unwrap()
            .is_empty());

        let outs = engine.handle(EngineEvent::Tick { now_ms: 250 }).unwrap();
        assert_eq!(engine.state(), EngineState::Serving);
        assert_eq!(engine.chain().len(), 2);
        let new_version = engine.current_version().to_string();
        assert_ne!(new_version, genesis_version);
        assert!(matches!(&outs[0], EngineOutput::Rotated { version_id } if *version_id == new_version));
        // the buffered request replays under the new version with new weights
        match &outs[1] {
            EngineOutput::Prediction { id: 2, version_id, loss } => {
                assert_eq!(version_id, &new_version);
                assert_eq!(*loss, 4.5); // (1.5*2)^2 / 2
            }
            other => panic!("unexpected {other:?}"),
        }

        let head = engine.chain().head().unwrap();
        assert_eq!(head.kl_at_trigger, Some(kl));
        assert_eq!(head.timestamp_ms, 250);
        assert_eq!(head.evidence_sources, vec!["stream".to_string()]);
        assert!(head.cert_diff.is_empty(), "structure did not change: {:?}", head.cert_diff);
        engine.chain().verify().unwrap();
        assert_eq!(engine.stats().rotations, 1);
        assert_eq!(engine.stats().buffered_peak, 1);

        // the detector was refit to the new regime: the same stream is quiet now
        for _ in 0..200 {
            assert!(engine.handle(EngineEvent::Observe { x: 7.5 }).unwrap().is_empty());
        }
        assert_eq!(engine.stats().rotations, 1, "drift must rotate exactly once");
    }

    #[test]
    fn refusal_leaves_version_chain_and_counters_unchanged() {
        let graph = scalar_graph(3.0);
        let mut engine =
            RotationEngine::new(graph, detector(), Signing::Null, 1e-6, 0).unwrap();
        drive_to_training(&mut engine);
        let before_version = engine.current_version().to_string();

        // wrong grade mask: elaboration succeeds but set_param refuses
        let sig = Signature::new(2, 0, 0).unwrap();
        let fmt = PositFormat::new(32, 2, 6).unwrap();
        let mut bad = Multivector::zero(sig, GradeMask::from_grades(&[1]), DimVec::dimensionless(), fmt);
        bad.set(1, PositValue::encode(1.0, fmt)).unwrap();
        let outs = engine
            .handle(EngineEvent::Candidate {
                weights: vec![bad.to_raw()],
                evidence_sources: vec![],
                user_feedback: vec![],
                model_counts: new_counts(),
            })
            .unwrap();
        assert!(matches!(outs[0], EngineOutput::Refused { .. }));
        assert_eq!(engine.state(), EngineState::Training);
        assert_eq!(engine.chain().len(), 1);
        assert_eq!(engine.current_version(), before_version);
        assert_eq!(engine.stats().rotations, 0);
        assert_eq!(engine.stats().refusals, 1);

        // a well-formed candidate still rotates afterwards
        let cand = raw_scalar(engine.graph(), 2.0);
        engine
            .handle(EngineEvent::Candidate {
                weights: vec![cand],
                evidence_sources: vec![],
                user_feedback: vec![],
                model_counts: new_counts(),
            })
            .unwrap();
        let outs = engine.handle(EngineEvent::Tick { now_ms: 10 }).unwrap();
        assert!(matches!(outs[0], EngineOutput::Rotated { .. }));
        assert_eq!(engine.stats().rotations, 1);
        engine.chain().verify().unwrap();
    }

    #[test]
    fn operator_candidate_rotates_without_a_trigger() {
        let graph = scalar_graph(3.0);
        let mut engine = RotationEngine::new(graph, detector(), Signing::Null, 1e-6, 0).unwrap();
        let cand = raw_scalar(engine.graph(), 4.0);
        engine
            .handle(EngineEvent::Candidate {
                weights: vec![cand],
                evidence_sources: vec!["operator".into()],
                user_feedback: vec!["requested offline".into()],
                model_counts: vec![2, 10, 40, 80, 80, 40, 10, 2],
            })
            .unwrap();
        let outs = engine.handle(EngineEvent::Tick { now_ms: 5 }).unwrap();
        assert!(matches!(outs[0], EngineOutput::Rotated { .. }));
        let head = engine.chain().head().unwrap();
        assert_eq!(head.kl_at_trigger, None);
        assert_eq!(head.user_feedback, vec!["requested offline".to_string()]);
        engine.chain().verify().unwrap();
    }

    #[test]
    fn any_bit_flip_in_a_committed_record_breaks_verification() {
        let graph = scalar_graph(3.0);
        let mut engine =
            RotationEngine::new(graph, detector(), Signing::ed25519_from_seed([9; 32]), 1e-6, 0).unwrap();
        for (i, w) in [(0u64, 2.0), (1, 2.5)] {
            let cand = raw_scalar(engine.graph(), w);
            engine
                .handle(EngineEvent::Candidate {
                    weights: vec![cand],
                    evidence_sources: vec![],
                    user_feedback: vec![],
                    model_counts: new_counts(),
                })
                .unwrap();
            engine.handle(EngineEvent::Tick { now_ms: 10 * (i + 1) }).unwrap();
        }
        engine.chain().verify().unwrap();
        let records = engine.chain().records().to_vec();
        assert_eq!(records.len(), 3);

        // flip the middle record's timestamp: its child's parent hash breaks
        let mut tampered = records.clone();
        tampered[1].timestamp_ms ^= 1;
        assert!(matches!(
            VersionChain::from_records(tampered).verify(),
            Err(RotationError::ChainInvalid { .. })
        ));

        // flip a weight-hash nibble: the version id no longer matches
        let mut tampered = records.clone();
        let mut h = tampered[2].weights_hash.clone();
        let flip = if &h[..1] == "0" { "1" } else { "0" };
        h.replace_range(0..1, flip);
        tampered[2].weights_hash = h;
        assert!(matches!(
            VersionChain::from_records(tampered).verify(),
            Err(RotationError::ChainInvalid { seq: 2, .. })
        ));

        // flip the head's kl field: its own signature rejects
        let mut tampered = records.clone();
        tampered[2].kl_at_trigger = Some(99.0);
        assert!(matches!(
            VersionChain::from_records(tampered).verify(),
            Err(RotationError::ChainInvalid { seq: 2, .. })
        ));

        // flip a signature byte: rejected
        let mut tampered = records;
        let mut s = tampered[0].signature.signature.clone();
        let flip = if &s[..1] == "a" { "b" } else { "a" };
        s.replace_range(0..1, flip);
        tampered[0].signature.signature = s;
        assert!(matches!(
            VersionChain::from_records(tampered).verify(),
            Err(RotationError::ChainInvalid { seq: 0, .. })
        ));
    }

    #[test]
    fn records_survive_json_round_trips_byte_for_byte() {
        let graph = scalar_graph(3.0);
        let engine = RotationEngine::new(graph, detector(), Signing::ed25519_from_seed([3; 32]), 1e-6, 7)
            .unwrap();
        let rec = engine.chain().head().unwrap();
        let bytes = canonical_bytes(rec).unwrap();
        let back: VersionRecord = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(&back, rec);
        assert_eq!(canonical_bytes(&back).unwrap(), bytes);
    }
}
