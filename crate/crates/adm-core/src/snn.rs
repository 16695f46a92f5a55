//! Event-driven spiking primitives: leaky integrate-and-fire dynamics with
//! exact inter-event decay, trace-based plasticity with optional quantized
//! weight storage, coincidence detection, and deterministic rate encoding.
//!
//! Time is in milliseconds throughout. Synaptic weights are drives in
//! mV ms^-1: every delivered event integrates the drive over its pulse width,
//! so a weight annotated with that dimension produces a potential jump in mV.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::PositFormat;
use crate::units::DimVec;

#[derive(Debug, Error, PartialEq)]
pub enum SnnError {
    #[error("event at {t_ms} ms precedes the clock at {last_ms} ms")]
    OutOfOrderEvent { t_ms: f64, last_ms: f64 },
    #[error("{0}")]
    BadParams(String),
    #[error("weight dimension {got} is not a potential per time")]
    WeightDimension { got: DimVec },
    #[error("intensity must be dimensionless, got {got}")]
    IntensityDimension { got: DimVec },
    #[error("intensity {u} outside [0, 1]")]
    IntensityRange { u: f64 },
    #[error("spike csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Auxiliary state per plastic synapse beyond the weight itself: the pre and
/// post eligibility traces.
pub const AUX_SCALARS_PER_SYNAPSE: usize = 2;

/// Forward-mode training state per trainable parameter: one tangent.
pub const TANGENTS_PER_PARAMETER: usize = 1;

/// The dimension every synaptic drive must carry.
pub fn drive_dim() -> DimVec {
    DimVec::parse("mV ms^-1").expect("literal parses")
}

/// A synaptic weight with its dimension annotation checked at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapticWeight {
    value: f64,
    dim: DimVec,
}

impl SynapticWeight {
    pub fn new(value: f64, dim: DimVec) -> Result<Self, SnnError> {
        if dim != drive_dim() {
            return Err(SnnError::WeightDimension { got: dim });
        }
        Ok(SynapticWeight { value, dim })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn dim(&self) -> DimVec {
        self.dim
    }

    /// Potential jump for one event of the given pulse width.
    pub fn increment_mv(&self, pulse_ms: f64) -> f64 {
        self.value * pulse_ms
    }
}

/// How membrane decay between events is integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// One multiplication by e^(-dt/tau), exact for any gap.
    Exact,
    /// Explicit first-order steps of the given size, for comparison runs.
    Euler { dt_ms: f64 },
}

#[derive(Debug, Clone)]
pub struct LifNeuron {
    tau_ms: f64,
    v_threshold_mv: f64,
    v_reset_mv: f64,
    decay: Decay,
    v_mv: f64,
    t_ms: f64,
}

impl LifNeuron {
    pub fn new(
        tau_ms: f64,
        v_threshold_mv: f64,
        v_reset_mv: f64,
        decay: Decay,
    ) -> Result<Self, SnnError> {
        if !(tau_ms > 0.0) {
            return Err(SnnError::BadParams(format!("tau {tau_ms} must be positive")));
        }
        if let Decay::Euler { dt_ms } = decay {
            if !(dt_ms > 0.0) {
                return Err(SnnError::BadParams(format!("euler step {dt_ms} must be positive")));
            }
        }
        Ok(LifNeuron { tau_ms, v_threshold_mv, v_reset_mv, decay, v_mv: v_reset_mv, t_ms: 0.0 })
    }

    pub fn potential_mv(&self) -> f64 {
        self.v_mv
    }

    pub fn clock_ms(&self) -> f64 {
        self.t_ms
    }

    /// Advance the clock with no input.
    pub fn coast(&mut self, t_ms: f64) -> Result<(), SnnError> {
        if t_ms < self.t_ms {
            return Err(SnnError::OutOfOrderEvent { t_ms, last_ms: self.t_ms });
        }
        let gap = t_ms - self.t_ms;
        self.v_mv = match self.decay {
            Decay::Exact => self.v_mv * (-gap / self.tau_ms).exp(),
            Decay::Euler { dt_ms } => {
                let mut v = self.v_mv;
                let mut left = gap;
                while left > 0.0 {
                    let step = left.min(dt_ms);
                    v += -v / self.tau_ms * step;
                    left -= step;
                }
                v
            }
        };
        self.t_ms = t_ms;
        Ok(())
    }

    /// Deliver one weighted pulse; returns true when the neuron fires (and
    /// resets).
    pub fn inject(
        &mut self,
        t_ms: f64,
        weight: SynapticWeight,
        pulse_ms: f64,
    ) -> Result<bool, SnnError> {
        self.coast(t_ms)?;
        self.v_mv += weight.increment_mv(pulse_ms);
        if self.v_mv >= self.v_threshold_mv {
            self.v_mv = self.v_reset_mv;
            return Ok(true);
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdpParams {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
}

/// One plastic synapse with pre/post eligibility traces.
///
/// Events must arrive in nondecreasing time order; both traces decay to the
/// event time first, then the weight and the matching trace update. A
/// pre-then-post pair at the same timestamp therefore potentiates by exactly
/// `a_plus`. With `quantize` set, the weight snaps to the nearest value of
/// that scalar format after every update; with `None` it stays in f64 as a
/// shadow reference.
#[derive(Debug, Clone)]
pub struct StdpSynapse {
    params: StdpParams,
    w: f64,
    x_pre: f64,
    y_post: f64,
    t_ms: f64,
    quantize: Option<PositFormat>,
}

impl StdpSynapse {
    pub fn new(params: StdpParams, w0: f64, quantize: Option<PositFormat>) -> Result<Self, SnnError> {
        if !(params.tau_plus_ms > 0.0 && params.tau_minus_ms > 0.0) {
            return Err(SnnError::BadParams("trace time constants must be positive".into()));
        }
        let mut s = StdpSynapse { params, w: w0, x_pre: 0.0, y_post: 0.0, t_ms: 0.0, quantize };
        s.requantize();
        Ok(s)
    }

    pub fn weight(&self) -> f64 {
        self.w
    }

    pub fn traces(&self) -> (f64, f64) {
        (self.x_pre, self.y_post)
    }

    fn decay_to(&mut self, t_ms: f64) -> Result<(), SnnError> {
        if t_ms < self.t_ms {
            return Err(SnnError::OutOfOrderEvent { t_ms, last_ms: self.t_ms });
        }
        let gap = t_ms - self.t_ms;
        self.x_pre *= (-gap / self.params.tau_plus_ms).exp();
        self.y_post *= (-gap / self.params.tau_minus_ms).exp();
        self.t_ms = t_ms;
        Ok(())
    }

    fn requantize(&mut self) {
        if let Some(fmt) = self.quantize {
            self.w = crate::arith::PositValue::encode(self.w, fmt).decode();
        }
    }

    /// Presynaptic spike: depress by the post trace, then bump the pre trace.
    pub fn on_pre(&mut self, t_ms: f64) -> Result<f64, SnnError> {
        self.decay_to(t_ms)?;
        self.w -= self.params.a_minus * self.y_post;
        self.requantize();
        self.x_pre += 1.0;
        Ok(self.w)
    }

    /// Postsynaptic spike: potentiate by the pre trace, then bump the post trace.
    pub fn on_post(&mut self, t_ms: f64) -> Result<f64, SnnError> {
        self.decay_to(t_ms)?;
        self.w += self.params.a_plus * self.x_pre;
        self.requantize();
        self.y_post += 1.0;
        Ok(self.w)
    }
}

/// Weight change a single isolated pre/post pair produces, with
/// dt = t_post - t_pre: potentiation a_plus e^(-dt/tau_plus) for dt >= 0,
/// depression -a_minus e^(dt/tau_minus) for dt < 0.
pub fn stdp_pair_delta(params: &StdpParams, dt_ms: f64) -> f64 {
    if dt_ms >= 0.0 {
        params.a_plus * (-dt_ms / params.tau_plus_ms).exp()
    } else {
        -params.a_minus * (dt_ms / params.tau_minus_ms).exp()
    }
}

/// True when some time window of width at most `window_ms` contains spikes
/// from at least `k_required` distinct sources. Repeated spikes from one
/// source never count twice.
pub fn coincidence_fire(events: &[(u32, f64)], k_required: usize, window_ms: f64) -> bool {
    if k_required == 0 {
        return true;
    }
    let mut sorted: Vec<(u32, f64)> = events.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut counts: HashMap<u32, usize> = HashMap::new();
    let mut distinct = 0usize;
    let mut lo = 0usize;
    for hi in 0..sorted.len() {
        let c = counts.entry(sorted[hi].0).or_insert(0);
        *c += 1;
        if *c == 1 {
            distinct += 1;
        }
        while sorted[hi].1 - sorted[lo].1 > window_ms {
            let c = counts.get_mut(&sorted[lo].0).expect("source in window");
            *c -= 1;
            if *c == 0 {
                distinct -= 1;
            }
            lo += 1;
        }
        if distinct >= k_required {
            return true;
        }
    }
    false
}

/// Deterministic rate code: a dimensionless intensity u = x * scale in [0, 1]
/// becomes round(u * max_rate_per_ms * window_ms) spikes, centered evenly in
/// the window.
pub fn rate_encode(
    x: f64,
    x_dim: DimVec,
    scale: f64,
    scale_dim: DimVec,
    max_rate_per_ms: f64,
    window_ms: f64,
) -> Result<Vec<f64>, SnnError> {
    let u_dim = x_dim * scale_dim;
    if !u_dim.is_dimensionless() {
        return Err(SnnError::IntensityDimension { got: u_dim });
    }
    if !(max_rate_per_ms > 0.0 && window_ms > 0.0) {
        return Err(SnnError::BadParams("rate and window must be positive".into()));
    }
    let u = x * scale;
    if !(0.0..=1.0).contains(&u) {
        return Err(SnnError::IntensityRange { u });
    }
    let n = (u * max_rate_per_ms * window_ms).round() as usize;
    Ok((0..n).map(|i| (i as f64 + 0.5) * window_ms / n as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub neuron_id: u32,
    pub t_ms: f64,
}

pub fn spikes_to_csv(spikes: &[Spike]) -> String {
    let mut out = String::from("neuron_id,t_ms\n");
    for s in spikes {
        out.push_str(&format!("{},{}\n", s.neuron_id, s.t_ms));
    }
    out
}

pub fn spikes_from_csv(text: &str) -> Result<Vec<Spike>, SnnError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "neuron_id,t_ms")) => {}
        _ => return Err(SnnError::Csv { line: 1, reason: "missing header".into() }),
    }
    let mut spikes = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| SnnError::Csv { line: i + 1, reason: reason.into() };
        let (id, t) = line.split_once(',').ok_or_else(|| err("expected two fields"))?;
        spikes.push(Spike {
            neuron_id: id.parse().map_err(|_| err("bad neuron id"))?,
            t_ms: t.parse().map_err(|_| err("bad time"))?,
        });
    }
    Ok(spikes)
}
