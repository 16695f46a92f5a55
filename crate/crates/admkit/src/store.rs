//! On-disk layout for a served model: the scenario that built it, every
//! version record, every referenced weight set, and the run report. All
//! machine files are canonical JSON, so re-running a scenario overwrites a
//! store with byte-identical content.
//!
//! ```text
//! <store>/
//!   manifest.json        scenario + algebra/format/signing identity
//!   records/0000.json    one version record per file, named by sequence
//!   weights/<hash>.json  full parameter set, named by its digest
//!   report.json          the run report
//! ```
//!
//! The manifest holds only the *public* half of the signing identity; the
//! private seed never reaches disk and must be supplied again to extend the
//! chain.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use adm_core::autodiff::LossGraph;
use adm_core::clifford::{CayleyTable, Multivector, RawMultivector};
use adm_core::rotation::{
    canonical_bytes, certificate_diff, record_digest, signable_bytes, verify_entry, version_id,
    weights_hash, Certificate, SignatureEntry, Signing, VersionChain, VersionRecord,
};

use crate::runner::{RunOutcome, RunReport};
use crate::scenario::Scenario;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub scenario: Scenario,
    pub format: String,
    pub algebra: String,
    pub cayley_fingerprint: String,
    pub signing_scheme: String,
    /// Hex public key; empty under the null scheme.
    pub public_key: String,
}

/// What a successful verification covered.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreVerification {
    pub records: usize,
    pub weight_sets: usize,
    pub scheme: String,
}

fn store_err(path: &Path, reason: impl Into<String>) -> HarnessError {
    HarnessError::Store { path: path.display().to_string(), reason: reason.into() }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    fs::write(path, canonical_bytes(value)?).map_err(|e| HarnessError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| store_err(path, format!("unreadable JSON: {e}")))
}

fn record_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join("records").join(format!("{seq:04}.json"))
}

fn weights_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join("weights").join(format!("{hash}.json"))
}

/// Write a completed run to `dir`, creating it if needed.
pub fn write_store(dir: &Path, scn: &Scenario, outcome: &RunOutcome) -> Result<(), HarnessError> {
    fs::create_dir_all(dir.join("records")).map_err(|e| HarnessError::io(dir, e))?;
    fs::create_dir_all(dir.join("weights")).map_err(|e| HarnessError::io(dir, e))?;
    let genesis = outcome
        .records
        .first()
        .ok_or_else(|| store_err(dir, "a run always produces a genesis record"))?;
    let manifest = StoreManifest {
        scenario: scn.clone(),
        format: outcome.report.format.clone(),
        algebra: outcome.report.algebra.clone(),
        cayley_fingerprint: outcome.report.cayley_fingerprint.clone(),
        signing_scheme: genesis.signature.scheme.clone(),
        public_key: genesis.signature.public_key.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    for rec in &outcome.records {
        write_json(&record_path(dir, rec.seq), rec)?;
    }
    for (hash, weights) in &outcome.weights {
        write_json(&weights_path(dir, hash), weights)?;
    }
    write_json(&dir.join("report.json"), &outcome.report)
}

pub fn load_manifest(dir: &Path) -> Result<StoreManifest, HarnessError> {
    read_json(&dir.join("manifest.json"))
}

pub fn load_report(dir: &Path) -> Result<RunReport, HarnessError> {
    read_json(&dir.join("report.json"))
}

/// All records in sequence order; rejects gaps and misnamed files.
pub fn load_records(dir: &Path) -> Result<Vec<VersionRecord>, HarnessError> {
    let records_dir = dir.join("records");
    let mut names: Vec<String> = Vec::new();
    let entries = fs::read_dir(&records_dir).map_err(|e| HarnessError::io(&records_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(&records_dir, e))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    let mut records = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let path = records_dir.join(name);
        if *name != format!("{i:04}.json") {
            return Err(store_err(&path, format!("expected record file {i:04}.json")));
        }
        let rec: VersionRecord = read_json(&path)?;
        if rec.seq != i as u64 {
            return Err(store_err(&path, format!("record claims seq {}, file says {i}", rec.seq)));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(store_err(&records_dir, "store has no records"));
    }
    Ok(records)
}

pub fn load_weights(dir: &Path, hash: &str) -> Result<Vec<RawMultivector>, HarnessError> {
    read_json(&weights_path(dir, hash))
}

/// Full audit of a store: the record chain re-verifies (sequence, parents,
/// certificate diffs, signatures), every referenced weight set is present
/// and hashes to its name, and — when a key is pinned — every record was
/// signed by exactly that key.
pub fn verify_store(
    dir: &Path,
    expected_pubkey: Option<&str>,
) -> Result<StoreVerification, HarnessError> {
    let manifest = load_manifest(dir)?;
    let records = load_records(dir)?;
    let chain = VersionChain::from_records(records);
    chain.verify()?;
    let records = chain.records();
    for rec in records {
        let weights = load_weights(dir, &rec.weights_hash)?;
        let actual = weights_hash(&weights)?;
        if actual != rec.weights_hash {
            return Err(store_err(
                &weights_path(dir, &rec.weights_hash),
                format!("weights hash to {actual}"),
            ));
        }
        if rec.certificate.cayley_fingerprint != manifest.cayley_fingerprint {
            return Err(store_err(
                &record_path(dir, rec.seq),
                "certificate pins a different algebra than the manifest",
            ));
        }
        if rec.signature.scheme != manifest.signing_scheme {
            return Err(store_err(
                &record_path(dir, rec.seq),
                format!(
                    "record signed with {}, manifest says {}",
                    rec.signature.scheme, manifest.signing_scheme
                ),
            ));
        }
    }
    if let Some(pin) = expected_pubkey {
        for rec in records {
            if rec.signature.public_key != pin {
                return Err(store_err(
                    &record_path(dir, rec.seq),
                    format!("record signed by {}, pinned key is {pin}", rec.signature.public_key),
                ));
            }
        }
        if manifest.public_key != pin {
            return Err(store_err(
                &dir.join("manifest.json"),
                "manifest public key differs from pinned key",
            ));
        }
    }
    let weight_sets = records
        .iter()
        .map(|r| r.weights_hash.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    Ok(StoreVerification {
        records: records.len(),
        weight_sets,
        scheme: manifest.signing_scheme,
    })
}

/// Reconstruct the live graph serving a store's head version.
pub fn head_graph(dir: &Path) -> Result<(StoreManifest, Vec<VersionRecord>, LossGraph), HarnessError> {
    let manifest = load_manifest(dir)?;
    let records = load_records(dir)?;
    let head = records.last().expect("load_records rejects empty stores");
    let weights = load_weights(dir, &head.weights_hash)?;
    let mut graph = manifest.scenario.build_graph()?;
    set_all_params(&mut graph, &weights).map_err(|violations| {
        store_err(dir, format!("stored head weights do not fit the model: {}", violations.join("; ")))
    })?;
    Ok((manifest, records, graph))
}

fn set_all_params(graph: &mut LossGraph, weights: &[RawMultivector]) -> Result<(), Vec<String>> {
    let expected = graph.params().len();
    if weights.len() != expected {
        return Err(vec![format!(
            "candidate has {} parameters, model needs {expected}",
            weights.len()
        )]);
    }
    let mut violations = Vec::new();
    for (i, raw) in weights.iter().enumerate() {
        match Multivector::from_raw(raw) {
            Ok(mv) => {
                if let Err(e) = graph.set_param(i, mv) {
                    violations.push(format!("parameter {i}: {e}"));
                }
            }
            Err(e) => violations.push(format!("parameter {i}: {e}")),
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Elaborate and certify a candidate against the serving graph, collecting
/// every violation instead of stopping at the first.
fn certify_candidate(
    serving: &LossGraph,
    weights: &[RawMultivector],
    rotor_tol: f64,
) -> Result<Certificate, Vec<String>> {
    let mut candidate = serving.clone();
    set_all_params(&mut candidate, weights)?;
    let cert = Certificate::for_graph(&candidate, rotor_tol).map_err(|e| vec![e.to_string()])?;
    if cert.ok() {
        return Ok(cert);
    }
    let mut violations = Vec::new();
    if !cert.dim_chain_ok {
        violations.push("dimension chain broken".into());
    }
    for r in &cert.rotors {
        if !r.check.ok {
            violations.push(format!(
                "layer {} rotor residual {:.3e} exceeds {:.3e}",
                r.layer, r.check.residual, r.check.tol
            ));
        }
    }
    Err(violations)
}

/// Operator-forced rotation against a store, without a live engine: certify
/// the candidate, extend the chain, persist the new record and weights. The
/// signer must match the store's signing identity so one chain never mixes
/// keys.
pub fn manual_rotate(
    dir: &Path,
    weights: Vec<RawMultivector>,
    signing: &Signing,
    now_ms: Option<u64>,
    evidence_sources: Vec<String>,
    user_feedback: Vec<String>,
) -> Result<VersionRecord, HarnessError> {
    let (manifest, records, graph) = head_graph(dir)?;
    if signing.scheme() != manifest.signing_scheme {
        return Err(store_err(
            dir,
            format!("store is signed with {}, got a {} signer", manifest.signing_scheme, signing.scheme()),
        ));
    }
    let probe = signing.sign(b"");
    if probe.public_key != manifest.public_key {
        return Err(store_err(dir, "signer public key differs from the store's identity"));
    }
    let certificate = certify_candidate(&graph, &weights, manifest.scenario.rotation.rotor_tol)
        .map_err(|violations| HarnessError::CandidateRejected { violations })?;

    let head = records.last().expect("load_records rejects empty stores");
    let whash = weights_hash(&weights)?;
    let seq = records.len() as u64;
    let mut record = VersionRecord {
        seq,
        version_id: version_id(seq, &whash),
        parent_hash: Some(record_digest(head)?),
        weights_hash: whash.clone(),
        timestamp_ms: now_ms.unwrap_or(head.timestamp_ms + 1),
        kl_at_trigger: None,
        evidence_sources,
        user_feedback,
        cert_diff: certificate_diff(&head.certificate, &certificate),
        certificate,
        signature: SignatureEntry {
            scheme: signing.scheme().into(),
            public_key: String::new(),
            signature: String::new(),
        },
    };
    record.signature = signing.sign(&signable_bytes(&record)?);
    debug_assert!(verify_entry(&record.signature, &signable_bytes(&record)?));

    write_json(&record_path(dir, seq), &record)?;
    write_json(&weights_path(dir, &whash), &weights)?;
    Ok(record)
}

/// The sparsity report for a store's algebra, for the CLI.
pub fn store_table(dir: &Path) -> Result<CayleyTable, HarnessError> {
    let manifest = load_manifest(dir)?;
    Ok(CayleyTable::new(manifest.scenario.signature()?))
}
