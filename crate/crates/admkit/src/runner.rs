//! End-to-end scenario execution: drive the rotation engine with a seeded
//! observation stream, train replacement weights when the detector fires,
//! and collect a serializable run report.
//!
//! Event order within a step is fixed — tick, observe, (train + candidate),
//! request — so a request issued on the candidate's step lands while the
//! engine is rotating, gets buffered, and is answered under the new version
//! at the next tick. One generator, consumed in one order, makes the whole
//! run a pure function of the scenario file.
//!
//! Training waits one full window after the trigger before submitting a
//! candidate: at the trigger the retained window still straddles the change
//! point, and refitting the detector to that mixture would leave it primed
//! to fire again on the next pure post-change window.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use adm_core::arith::{PositFormat, PositValue};
use adm_core::autodiff::{grade_restricted_step, Layer, LossGraph, Reduce};
use adm_core::clifford::{CayleyTable, GradeMask, Multivector, RawMultivector, Signature};
use adm_core::rotation::{EngineEvent, EngineOutput, RotationEngine, VersionRecord};
use adm_core::units::DimVec;

use crate::scenario::{bin_of, Scenario, StreamState};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub step: u64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEvent {
    pub step: u64,
    pub version_id: String,
    pub kl_at_trigger: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalEvent {
    pub step: u64,
    pub reason: String,
}

/// Peak live multivectors for one pipeline, and how the training pass
/// relates to inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub label: String,
    pub params: usize,
    pub inference_peak: usize,
    pub training_peak: usize,
    pub auxiliary_overhead: i64,
}

/// Structural identity of one parameter: which grades it is typed over and
/// which blades it actually stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub index: usize,
    pub grades: Vec<u32>,
    pub dim: String,
    pub stored_blades: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySection {
    pub before: Vec<ParamShape>,
    pub after: Vec<ParamShape>,
    /// Training never added or removed a stored blade.
    pub stable: bool,
}

/// Everything a run produced, minus the raw weights (those travel separately
/// so the report stays small enough to read).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub steps: u64,
    pub format: String,
    pub algebra: String,
    pub cayley_fingerprint: String,
    pub epsilon: f64,
    pub served: u64,
    pub rotations: u64,
    pub refusals: u64,
    pub buffered_peak: usize,
    pub responses_by_version: BTreeMap<String, u64>,
    pub kl_trajectory: Vec<KlPoint>,
    pub rotation_events: Vec<RotationEvent>,
    pub refusal_events: Vec<RefusalEvent>,
    pub chain_versions: Vec<String>,
    pub final_version: String,
    pub final_loss_mean: Option<f64>,
    pub memory: Vec<MemoryRow>,
    pub sparsity: SparsitySection,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub records: Vec<VersionRecord>,
    /// Full parameter sets keyed by their weights hash, one entry per chain
    /// record.
    pub weights: BTreeMap<String, Vec<RawMultivector>>,
}

#[derive(Default)]
struct RunAccum {
    responses_by_version: BTreeMap<String, u64>,
    loss_by_version: BTreeMap<String, (u64, f64)>,
    rotation_events: Vec<RotationEvent>,
    refusal_events: Vec<RefusalEvent>,
    weights_by_hash: BTreeMap<String, Vec<RawMultivector>>,
}

impl RunAccum {
    fn absorb(
        &mut self,
        step: u64,
        outs: &[EngineOutput],
        engine: &RotationEngine,
    ) -> Result<(), HarnessError> {
        for out in outs {
            match out {
                EngineOutput::Prediction { version_id, loss, .. } => {
                    *self.responses_by_version.entry(version_id.clone()).or_default() += 1;
                    let slot = self.loss_by_version.entry(version_id.clone()).or_insert((0, 0.0));
                    slot.0 += 1;
                    slot.1 += loss;
                }
                EngineOutput::BadRequest { id, reason } => {
                    return Err(HarnessError::invalid(
                        "runner",
                        format!("request {id} rejected: {reason}"),
                    ));
                }
                EngineOutput::Rotated { version_id } => {
                    let head = engine.chain().head().expect("rotated chain has a head");
                    self.rotation_events.push(RotationEvent {
                        step,
                        version_id: version_id.clone(),
                        kl_at_trigger: head.kl_at_trigger,
                    });
                    self.weights_by_hash
                        .insert(head.weights_hash.clone(), raw_params(engine.graph()));
                }
                EngineOutput::Refused { reason } => {
                    self.refusal_events.push(RefusalEvent { step, reason: reason.clone() });
                }
                EngineOutput::TrainingStarted { .. } | EngineOutput::RotationStarted { .. } => {}
            }
        }
        Ok(())
    }
}

fn raw_params(graph: &LossGraph) -> Vec<RawMultivector> {
    graph.params().iter().map(|p| p.to_raw()).collect()
}

fn param_shapes(graph: &LossGraph) -> Vec<ParamShape> {
    graph
        .params()
        .iter()
        .enumerate()
        .map(|(index, w)| ParamShape {
            index,
            grades: w.grade_mask().grades(),
            dim: w.dim().to_string(),
            stored_blades: w.stored_blades(),
        })
        .collect()
}

/// Which parameter slots the trainer may touch: geometric-product weights
/// train, rotors stay fixed so the rotor certificate keeps holding.
fn trainable_slots(graph: &LossGraph) -> Vec<bool> {
    graph
        .layers()
        .iter()
        .filter_map(|layer| match layer {
            Layer::GeometricProduct { .. } => Some(true),
            Layer::Sandwich { .. } => Some(false),
            _ => None,
        })
        .collect()
}

/// SGD over the retained observation window. Every update is a fused
/// grade-restricted step, so the weight's stored blade set cannot change.
fn train_candidate(
    scn: &Scenario,
    base: &LossGraph,
    ring: &VecDeque<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RawMultivector>, HarnessError> {
    let fmt = scn.format()?;
    let eta = PositValue::encode(scn.rotation.eta, fmt);
    let eta_dim = base.loss_dim().inverse();
    let slots = trainable_slots(base);
    let mut graph = base.clone();
    let window: Vec<f64> = ring.iter().copied().collect();
    for t in 0..scn.rotation.train_steps {
        let x = scn.input_pattern(window[t % window.len()])?;
        let grad = graph.forward_gradient(&x, scn.rotation.gradient_samples, rng)?;
        for (i, trainable) in slots.iter().enumerate() {
            if !trainable {
                continue;
            }
            let stepped = grade_restricted_step(graph.params()[i], &grad.per_param[i], eta, eta_dim)?;
            graph.set_param(i, stepped)?;
        }
    }
    Ok(raw_params(&graph))
}

fn window_counts(edges: &[f64], ring: &VecDeque<f64>) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() - 1];
    for &x in ring {
        counts[bin_of(edges, x)] += 1;
    }
    counts
}

/// A depth-L pipeline of scalar products, used to show the memory accounting
/// scales the same way at every depth.
fn scalar_chain_graph(depth: usize, fmt: PositFormat) -> Result<LossGraph, HarnessError> {
    let sig = Signature::new(1, 0, 0)?;
    let mask = GradeMask::single(0);
    let dim = DimVec::dimensionless();
    let layers = (0..depth)
        .map(|_| Layer::GeometricProduct {
            weight: Multivector::scalar(sig, PositValue::encode(1.0, fmt), dim),
        })
        .collect();
    Ok(LossGraph::new(CayleyTable::new(sig), fmt, mask, dim, layers, Reduce::SquaredNorm)?)
}

fn memory_rows(scn: &Scenario, graph: &LossGraph) -> Result<Vec<MemoryRow>, HarnessError> {
    let fmt = scn.format()?;
    let mut rows = Vec::new();
    for depth in [2usize, 8, 32, 64] {
        let chain = scalar_chain_graph(depth, fmt)?;
        let prof = chain.memory_profile();
        rows.push(MemoryRow {
            label: format!("chain-{depth}"),
            params: chain.params().len(),
            inference_peak: prof.inference_peak,
            training_peak: prof.training_peak,
            auxiliary_overhead: prof.auxiliary_overhead,
        });
    }
    let prof = graph.memory_profile();
    rows.push(MemoryRow {
        label: "scenario".into(),
        params: graph.params().len(),
        inference_peak: prof.inference_peak,
        training_peak: prof.training_peak,
        auxiliary_overhead: prof.auxiliary_overhead,
    });
    Ok(rows)
}

/// Execute one scenario start to finish. Identical scenarios produce
/// byte-identical outcomes: the generator order is calibration, epsilon
/// bootstrap, then per step one draw plus whatever training consumes.
pub fn run_scenario(scn: &Scenario) -> Result<RunOutcome, HarnessError> {
    scn.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let (detector, epsilon, _) = scn.build_detector(&mut rng)?;
    let window = detector.config().window;
    let graph = scn.build_graph()?;
    let shapes_before = param_shapes(&graph);
    let memory = memory_rows(scn, &graph)?;

    let mut engine = RotationEngine::new(graph, detector, scn.signing(), scn.rotation.rotor_tol, 0)?;
    let mut accum = RunAccum::default();
    let genesis = engine.chain().head().expect("genesis record");
    accum.weights_by_hash.insert(genesis.weights_hash.clone(), raw_params(engine.graph()));

    let stream = StreamState::new(scn)?;
    let mut ring: VecDeque<f64> = VecDeque::with_capacity(window);
    let steps = scn.stream.steps;
    let stride = (steps / 1024).max(1);
    let tick_ms = scn.rotation.tick_ms;
    let mut kl_trajectory = Vec::new();
    let mut training_since: Option<u64> = None;

    for s in 0..steps {
        let outs = engine.handle(EngineEvent::Tick { now_ms: s * tick_ms })?;
        accum.absorb(s, &outs, &engine)?;

        let obs = stream.sample(s, &mut rng);
        if ring.len() == window {
            ring.pop_front();
        }
        ring.push_back(obs);

        let outs = engine.handle(EngineEvent::Observe { x: obs })?;
        if outs
            .iter()
            .any(|o| matches!(o, EngineOutput::TrainingStarted { .. }))
        {
            training_since = Some(s);
        }
        accum.absorb(s, &outs, &engine)?;

        // Submit once the window holds only post-trigger observations.
        if training_since.is_some_and(|t0| s >= t0 + window as u64) {
            training_since = None;
            let weights = train_candidate(scn, engine.graph(), &ring, &mut rng)?;
            let outs = engine.handle(EngineEvent::Candidate {
                weights,
                evidence_sources: vec![format!("observation window ending at step {s}")],
                user_feedback: Vec::new(),
                model_counts: window_counts(&scn.detector.edges, &ring),
            })?;
            accum.absorb(s, &outs, &engine)?;
        }

        let input = scn.input_pattern(obs)?.to_raw();
        let outs = engine.handle(EngineEvent::Request { id: s, input })?;
        accum.absorb(s, &outs, &engine)?;

        if s % stride == 0 {
            if let Some(kl) = engine.detector().current_kl() {
                kl_trajectory.push(KlPoint { step: s, kl });
            }
        }
    }
    // Drain any rotation still pending and answer its buffered requests.
    let outs = engine.handle(EngineEvent::Tick { now_ms: steps * tick_ms })?;
    accum.absorb(steps, &outs, &engine)?;

    let shapes_after = param_shapes(engine.graph());
    let stats = engine.stats();
    let records = engine.chain().records().to_vec();
    let final_version = engine.current_version().to_string();
    let final_loss_mean = accum
        .loss_by_version
        .get(&final_version)
        .map(|(n, total)| total / *n as f64);

    let report = RunReport {
        seed: scn.seed,
        steps,
        format: scn.format()?.descriptor(),
        algebra: scn.signature()?.to_string(),
        cayley_fingerprint: CayleyTable::new(scn.signature()?).fingerprint(),
        epsilon,
        served: stats.served,
        rotations: stats.rotations,
        refusals: stats.refusals,
        buffered_peak: stats.buffered_peak,
        responses_by_version: accum.responses_by_version,
        kl_trajectory,
        rotation_events: accum.rotation_events,
        refusal_events: accum.refusal_events,
        chain_versions: records.iter().map(|r| r.version_id.clone()).collect(),
        final_version,
        final_loss_mean,
        memory,
        sparsity: SparsitySection {
            stable: shapes_before == shapes_after,
            before: shapes_before,
            after: shapes_after,
        },
    };
    Ok(RunOutcome { report, records, weights: accum.weights_by_hash })
}
