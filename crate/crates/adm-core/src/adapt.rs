//! Streaming distribution-shift detection and structural prior distillation.
//!
//! A [`ShiftDetector`] keeps a sliding window of scalar observations, bins
//! them against a fixed histogram, and compares the smoothed window
//! distribution with the current model's predictive via KL divergence. The
//! rotation threshold epsilon is calibrated by bootstrap from the predictive
//! itself, so stationary noise almost never trips it. [`distill_prior`]
//! filters weighted structural hypotheses against hard grade-mask and
//! dimension constraints.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clifford::{GradeMask, Multivector, RawMultivector, Signature};
use crate::units::DimVec;

#[derive(Debug, Error, PartialEq)]
pub enum AdaptError {
    #[error("histogram needs at least two strictly increasing finite edges")]
    BadEdges,
    #[error("model histogram has {got} bins, expected {expected}")]
    BinCount { expected: usize, got: usize },
    #[error("{0}")]
    BadConfig(String),
    #[error("prior component {index} has non-positive or non-finite mass")]
    BadMass { index: usize },
    #[error("no prior component satisfies the structural constraints")]
    EmptyPrior,
}

/// Fixed-edge histogram. Out-of-range observations land in the nearest edge
/// bin, so mass escaping the calibrated support still moves the divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self, AdaptError> {
        if edges.len() < 2
            || edges.iter().any(|e| !e.is_finite())
            || edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(AdaptError::BadEdges);
        }
        let counts = vec![0; edges.len() - 1];
        Ok(Histogram { edges, counts })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let k = self.edges.partition_point(|&e| e <= x);
        k.saturating_sub(1).min(self.counts.len() - 1)
    }

    pub fn observe(&mut self, x: f64) {
        let k = self.bin_of(x);
        self.counts[k] += 1;
    }

    /// Additively smoothed probabilities: (c_i + alpha) / (N + alpha B).
    pub fn smoothed_probs(&self, alpha: f64) -> Vec<f64> {
        smoothed_probs(&self.counts, alpha)
    }
}

pub fn smoothed_probs(counts: &[u64], alpha: f64) -> Vec<f64> {
    let total = counts.iter().sum::<u64>() as f64 + alpha * counts.len() as f64;
    counts.iter().map(|&c| (c as f64 + alpha) / total).collect()
}

/// KL(p || q) in nats. Both slices must be strictly positive distributions of
/// equal length, which smoothing guarantees.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distribution lengths differ");
    p.iter().zip(q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Sliding window length in observations.
    pub window: usize,
    /// Rotation threshold in nats.
    pub epsilon: f64,
    /// Additive smoothing pseudo-count.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Verdict {
    Hold,
    Rotate { kl: f64 },
}

/// Sliding-window KL detector against a fixed model predictive.
#[derive(Debug, Clone)]
pub struct ShiftDetector {
    cfg: DetectorConfig,
    hist: Histogram,
    model_probs: Vec<f64>,
    buf: VecDeque<f64>,
}

impl ShiftDetector {
    pub fn new(
        edges: Vec<f64>,
        model_counts: &[u64],
        cfg: DetectorConfig,
    ) -> Result<Self, AdaptError> {
        if cfg.window == 0 {
            return Err(AdaptError::BadConfig("window must be positive".into()));
        }
        if !(cfg.alpha > 0.0) {
            return Err(AdaptError::BadConfig("alpha must be positive".into()));
        }
        let hist = Histogram::new(edges)?;
        if model_counts.len() != hist.bins() {
            return Err(AdaptError::BinCount { expected: hist.bins(), got: model_counts.len() });
        }
        let model_probs = smoothed_probs(model_counts, cfg.alpha);
        Ok(ShiftDetector { cfg, hist, model_probs, buf: VecDeque::new() })
    }

    pub fn config(&self) -> DetectorConfig {
        self.cfg
    }

    pub fn model_probs(&self) -> &[f64] {
        &self.model_probs
    }

    pub fn is_warm(&self) -> bool {
        self.buf.len() == self.cfg.window
    }

    /// KL of the current window against the model, once the window is full.
    pub fn current_kl(&self) -> Option<f64> {
        if !self.is_warm() {
            return None;
        }
        let mut counts = vec![0u64; self.hist.bins()];
        for &x in &self.buf {
            counts[self.hist.bin_of(x)] += 1;
        }
        Some(kl_divergence(&smoothed_probs(&counts, self.cfg.alpha), &self.model_probs))
    }

    /// Push one observation and compare the full window against epsilon.
    pub fn observe(&mut self, x: f64) -> Verdict {
        if self.buf.len() == self.cfg.window {
            self.buf.pop_front();
        }
        self.buf.push_back(x);
        match self.current_kl() {
            Some(kl) if kl > self.cfg.epsilon => Verdict::Rotate { kl },
            _ => Verdict::Hold,
        }
    }

    /// Adopt a rotated model's predictive and forget the window, so one drift
    /// triggers exactly one rotation.
    pub fn refit(&mut self, model_counts: &[u64]) -> Result<(), AdaptError> {
        if model_counts.len() != self.hist.bins() {
            return Err(AdaptError::BinCount { expected: self.hist.bins(), got: model_counts.len() });
        }
        self.model_probs = smoothed_probs(model_counts, self.cfg.alpha);
        self.buf.clear();
        Ok(())
    }
}

/// Draw one index from a categorical distribution given by `probs`.
fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Bootstrap the detector's null distribution: draw `n_boot` windows from the
/// model predictive itself, score each with the same smoothed KL the detector
/// uses, and return the 99.9th percentile doubled. The factor-two margin
/// covers the many overlapping windows a long stationary run checks.
pub fn calibrate_epsilon<R: Rng + ?Sized>(
    model_probs: &[f64],
    window: usize,
    alpha: f64,
    n_boot: usize,
    rng: &mut R,
) -> Result<f64, AdaptError> {
    if window == 0 || n_boot == 0 {
        return Err(AdaptError::BadConfig("window and n_boot must be positive".into()));
    }
    let mut kls = Vec::with_capacity(n_boot);
    let mut counts = vec![0u64; model_probs.len()];
    for _ in 0..n_boot {
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..window {
            counts[sample_categorical(model_probs, rng)] += 1;
        }
        kls.push(kl_divergence(&smoothed_probs(&counts, alpha), model_probs));
    }
    kls.sort_by(f64::total_cmp);
    let idx = ((0.999 * n_boot as f64).ceil() as usize).clamp(1, n_boot) - 1;
    Ok(kls[idx] * 2.0)
}

/// One weighted structural hypothesis for a model's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorComponent {
    pub weights: RawMultivector,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistilledPrior {
    /// Surviving components with masses renormalized to sum to one.
    pub components: Vec<PriorComponent>,
    pub kept: usize,
    pub dropped: usize,
    /// Fraction of candidates satisfying the constraints before filtering.
    pub satisfaction_before: f64,
    /// Always 1 after hard rejection.
    pub satisfaction_after: f64,
}

/// Hard-reject candidates whose weights fail to elaborate in `sig`, spill
/// outside `mask`, or carry the wrong dimension; renormalize the survivors.
pub fn distill_prior(
    candidates: &[PriorComponent],
    sig: Signature,
    mask: GradeMask,
    dim: DimVec,
) -> Result<DistilledPrior, AdaptError> {
    let mut components = Vec::new();
    for (index, c) in candidates.iter().enumerate() {
        if !(c.mass > 0.0 && c.mass.is_finite()) {
            return Err(AdaptError::BadMass { index });
        }
        let ok = match Multivector::from_raw(&c.weights) {
            Ok(mv) => {
                mv.signature() == sig && mv.grade_mask().is_subset(mask) && mv.dim() == dim
            }
            Err(_) => false,
        };
        if ok {
            components.push(c.clone());
        }
    }
    if components.is_empty() {
        return Err(AdaptError::EmptyPrior);
    }
    let total: f64 = components.iter().map(|c| c.mass).sum();
    for c in &mut components {
        c.mass /= total;
    }
    let kept = components.len();
    Ok(DistilledPrior {
        kept,
        dropped: candidates.len() - kept,
        satisfaction_before: kept as f64 / candidates.len() as f64,
        satisfaction_after: 1.0,
        components,
    })
}
