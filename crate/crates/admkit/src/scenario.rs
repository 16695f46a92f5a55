//! Scenario files: one TOML document that pins everything a run needs — the
//! scalar format, the model pipeline, the observation stream, the detector,
//! and the rotation policy — plus builders that turn the parsed file into
//! live objects. A scenario plus its seed determines a run completely.

use rand::Rng;
use serde::{Deserialize, Serialize};

use adm_core::adapt::{calibrate_epsilon, smoothed_probs, DetectorConfig, ShiftDetector};
use adm_core::arith::{PositFormat, PositValue};
use adm_core::autodiff::{Layer, LossGraph, NonlinKind, Reduce};
use adm_core::clifford::{CayleyTable, GradeMask, Multivector, Signature};
use adm_core::rotation::Signing;
use adm_core::snn::{rate_encode, Decay, LifNeuron, SynapticWeight};
use adm_core::units::DimVec;

use crate::HarnessError;

fn default_dim() -> String {
    "1".into()
}

fn default_alpha() -> f64 {
    1.0
}

fn default_n_boot() -> usize {
    2000
}

fn default_calibration_samples() -> usize {
    4096
}

fn default_rotor_tol() -> f64 {
    1e-4
}

fn default_train_steps() -> usize {
    32
}

// Stable for squared losses with inputs up to |x|^2 ~ 1e3.
fn default_eta() -> f64 {
    0.001
}

fn default_gradient_samples() -> usize {
    64
}

fn default_tick_ms() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub format: FormatSpec,
    pub model: ModelSpec,
    pub stream: StreamSpec,
    pub detector: DetectorSpec,
    pub rotation: RotationSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatSpec {
    pub nbits: u32,
    pub es: u32,
    pub r_max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureSpec {
    pub p: u32,
    pub q: u32,
    pub r: u32,
}

/// One stored coefficient: a blade index (bitmask over generators) and its
/// initial value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffSpec {
    pub blade: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub grades: Vec<u32>,
    #[serde(default = "default_dim")]
    pub dim: String,
    /// The request input is this pattern scaled by the current observation.
    pub pattern: Vec<CoeffSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// x -> W x with a trainable weight.
    GeometricProduct {
        grades: Vec<u32>,
        #[serde(default = "default_dim")]
        dim: String,
        coeffs: Vec<CoeffSpec>,
    },
    /// x -> R x R~ with a fixed unit rotor in the given bivector plane.
    Sandwich { plane: usize, angle_rad: f64 },
    GradeProject { keep: Vec<u32> },
    Nonlinearity { function: NonlinSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinSpec {
    Identity,
    Tanh,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReduceSpec {
    SquaredNorm,
    SquaredError {
        grades: Vec<u32>,
        #[serde(default = "default_dim")]
        dim: String,
        coeffs: Vec<CoeffSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub signature: SignatureSpec,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
    pub reduce: ReduceSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Draw from the base distribution for the whole run.
    Stationary,
    /// Switch to the drift distribution at `drift_at`.
    Drift,
    /// Same regimes, but each draw modulates a spike train through one
    /// leaky neuron; the observation is the output spike count.
    Spike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub steps: u64,
    /// Unnormalized bin masses of the base regime.
    pub base_weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderSpec>,
}

fn default_window_ms() -> f64 {
    10.0
}

fn default_rate_per_ms() -> f64 {
    1.0
}

fn default_tau_ms() -> f64 {
    20.0
}

fn default_threshold_mv() -> f64 {
    1.0
}

fn default_weight_mv_per_ms() -> f64 {
    0.5
}

fn default_pulse_ms() -> f64 {
    1.0
}

/// Rate-code-and-integrate front end for the spike stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    #[serde(default = "default_window_ms")]
    pub window_ms: f64,
    #[serde(default = "default_rate_per_ms")]
    pub rate_per_ms: f64,
    #[serde(default = "default_tau_ms")]
    pub tau_ms: f64,
    #[serde(default = "default_threshold_mv")]
    pub threshold_mv: f64,
    #[serde(default)]
    pub reset_mv: f64,
    #[serde(default = "default_weight_mv_per_ms")]
    pub weight_mv_per_ms: f64,
    #[serde(default = "default_pulse_ms")]
    pub pulse_ms: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            window_ms: default_window_ms(),
            rate_per_ms: default_rate_per_ms(),
            tau_ms: default_tau_ms(),
            threshold_mv: default_threshold_mv(),
            reset_mv: 0.0,
            weight_mv_per_ms: default_weight_mv_per_ms(),
            pulse_ms: default_pulse_ms(),
        }
    }
}

/// Either a fixed threshold in nats or `"auto"` for the bootstrap
/// calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Value(f64),
    Auto(AutoWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoWord {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub edges: Vec<f64>,
    pub window: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub epsilon: EpsilonSpec,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    /// Draws used to fit the model predictive to the base regime.
    #[serde(default = "default_calibration_samples")]
    pub calibration_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigningSpec {
    Null,
    Ed25519,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSpec {
    pub signing: SigningSpec,
    #[serde(default)]
    pub signing_seed: u64,
    #[serde(default = "default_rotor_tol")]
    pub rotor_tol: f64,
    #[serde(default = "default_train_steps")]
    pub train_steps: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_gradient_samples")]
    pub gradient_samples: usize,
    /// Logical milliseconds per harness step.
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let scn: Scenario = toml::from_str(text)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string_pretty(self)
            .map_err(|e| HarnessError::invalid("serialize", e.to_string()))
    }

    pub fn format(&self) -> Result<PositFormat, HarnessError> {
        Ok(PositFormat::new(self.format.nbits, self.format.es, self.format.r_max)?)
    }

    pub fn signature(&self) -> Result<Signature, HarnessError> {
        Ok(Signature::new(
            self.model.signature.p,
            self.model.signature.q,
            self.model.signature.r,
        )?)
    }

    pub fn signing(&self) -> Signing {
        match self.rotation.signing {
            SigningSpec::Null => Signing::Null,
            SigningSpec::Ed25519 => Signing::ed25519_from_seed(spread_seed(self.rotation.signing_seed)),
        }
    }

    /// Everything that can be rejected without touching the core builders:
    /// cross-field requirements and value ranges, each named by location.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bins = self.detector.edges.len().saturating_sub(1);
        if bins == 0 {
            return Err(HarnessError::invalid("detector.edges", "need at least two edges"));
        }
        if self.stream.steps == 0 {
            return Err(HarnessError::invalid("stream.steps", "must be positive"));
        }
        check_weights("stream.base_weights", &self.stream.base_weights)?;
        match self.stream.kind {
            StreamKind::Stationary => {
                if self.stream.drift_weights.is_some() || self.stream.drift_at.is_some() {
                    return Err(HarnessError::invalid(
                        "stream",
                        "stationary streams take no drift fields",
                    ));
                }
            }
            StreamKind::Drift | StreamKind::Spike => {
                if let Some(w) = &self.stream.drift_weights {
                    check_weights("stream.drift_weights", w)?;
                    if w.len() != self.stream.base_weights.len() {
                        return Err(HarnessError::invalid(
                            "stream.drift_weights",
                            "length must match base_weights",
                        ));
                    }
                    if self.stream.drift_at.is_none() {
                        return Err(HarnessError::invalid("stream.drift_at", "required with drift_weights"));
                    }
                } else if matches!(self.stream.kind, StreamKind::Drift) {
                    return Err(HarnessError::invalid("stream.drift_weights", "required for drift streams"));
                }
            }
        }
        if matches!(self.stream.kind, StreamKind::Stationary | StreamKind::Drift)
            && self.stream.base_weights.len() != bins
        {
            return Err(HarnessError::invalid(
                "stream.base_weights",
                format!("need one weight per detector bin ({bins})"),
            ));
        }
        if self.stream.encoder.is_some() && !matches!(self.stream.kind, StreamKind::Spike) {
            return Err(HarnessError::invalid("stream.encoder", "only spike streams take an encoder"));
        }
        if let EpsilonSpec::Value(e) = self.detector.epsilon {
            if !(e > 0.0) {
                return Err(HarnessError::invalid("detector.epsilon", "must be positive"));
            }
        }
        if !(self.rotation.eta > 0.0) {
            return Err(HarnessError::invalid("rotation.eta", "must be positive"));
        }
        if self.rotation.train_steps == 0 || self.rotation.gradient_samples == 0 {
            return Err(HarnessError::invalid(
                "rotation",
                "train_steps and gradient_samples must be positive",
            ));
        }
        // Building the graph performs the structural checks (dim chain,
        // grade masks, rotor norm); do it once here so errors surface early.
        self.build_graph()?;
        self.input_pattern(1.0)?;
        Ok(())
    }

    /// Compile the model section into a typed loss pipeline with its initial
    /// weights.
    pub fn build_graph(&self) -> Result<LossGraph, HarnessError> {
        let sig = self.signature()?;
        let fmt = self.format()?;
        let table = CayleyTable::new(sig);
        let input_dim = parse_dim("model.input.dim", &self.model.input.dim)?;
        let input_mask = GradeMask::from_grades(&self.model.input.grades);
        let mut layers = Vec::with_capacity(self.model.layers.len());
        for (i, spec) in self.model.layers.iter().enumerate() {
            let at = format!("model.layers[{i}]");
            layers.push(match spec {
                LayerSpec::GeometricProduct { grades, dim, coeffs } => {
                    let weight = build_multivector(
                        &at,
                        sig,
                        GradeMask::from_grades(grades),
                        parse_dim(&at, dim)?,
                        fmt,
                        coeffs,
                    )?;
                    Layer::GeometricProduct { weight }
                }
                LayerSpec::Sandwich { plane, angle_rad } => {
                    Layer::Sandwich { rotor: build_rotor(&at, sig, fmt, *plane, *angle_rad)? }
                }
                LayerSpec::GradeProject { keep } => {
                    Layer::GradeProject { keep: GradeMask::from_grades(keep) }
                }
                LayerSpec::Nonlinearity { function } => Layer::Nonlinearity {
                    kind: match function {
                        NonlinSpec::Identity => NonlinKind::Identity,
                        NonlinSpec::Tanh => NonlinKind::Tanh,
                        NonlinSpec::Softplus => NonlinKind::Softplus,
                    },
                },
            });
        }
        let reduce = match &self.model.reduce {
            ReduceSpec::SquaredNorm => Reduce::SquaredNorm,
            ReduceSpec::SquaredError { grades, dim, coeffs } => Reduce::SquaredError {
                target: build_multivector(
                    "model.reduce",
                    sig,
                    GradeMask::from_grades(grades),
                    parse_dim("model.reduce.dim", dim)?,
                    fmt,
                    coeffs,
                )?,
            },
        };
        Ok(LossGraph::new(table, fmt, input_mask, input_dim, layers, reduce)?)
    }

    /// The request input for one observation: the declared pattern scaled by
    /// the observed value.
    pub fn input_pattern(&self, obs: f64) -> Result<Multivector, HarnessError> {
        let sig = self.signature()?;
        let fmt = self.format()?;
        let dim = parse_dim("model.input.dim", &self.model.input.dim)?;
        let mask = GradeMask::from_grades(&self.model.input.grades);
        let scaled: Vec<CoeffSpec> = self
            .model
            .input
            .pattern
            .iter()
            .map(|c| CoeffSpec { blade: c.blade, value: c.value * obs })
            .collect();
        build_multivector("model.input.pattern", sig, mask, dim, fmt, &scaled)
    }

    /// Fit the model predictive to the base regime, then fix the threshold:
    /// either the declared value or the stationary bootstrap percentile.
    /// Consumes the generator in a fixed order so runs stay reproducible.
    pub fn build_detector<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(ShiftDetector, f64, Vec<u64>), HarnessError> {
        let stream = StreamState::new(self)?;
        let bins = self.detector.edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for _ in 0..self.detector.calibration_samples {
            let x = stream.sample_base(rng);
            counts[bin_of(&self.detector.edges, x)] += 1;
        }
        let epsilon = match self.detector.epsilon {
            EpsilonSpec::Value(e) => e,
            EpsilonSpec::Auto(_) => calibrate_epsilon(
                &smoothed_probs(&counts, self.detector.alpha),
                self.detector.window,
                self.detector.alpha,
                self.detector.n_boot,
                rng,
            )?,
        };
        let cfg = DetectorConfig { window: self.detector.window, epsilon, alpha: self.detector.alpha };
        let detector = ShiftDetector::new(self.detector.edges.clone(), &counts, cfg)?;
        Ok((detector, epsilon, counts))
    }
}

/// Ed25519 needs 32 seed bytes; tile the scenario's u64 across them.
pub fn spread_seed(seed: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, chunk) in out.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&(seed.wrapping_add(i as u64)).to_le_bytes());
    }
    out
}

fn check_weights(location: &str, w: &[f64]) -> Result<(), HarnessError> {
    if w.is_empty() {
        return Err(HarnessError::invalid(location, "must not be empty"));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(HarnessError::invalid(location, "weights must be finite and non-negative"));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(HarnessError::invalid(location, "total mass must be positive"));
    }
    Ok(())
}

fn parse_dim(location: &str, text: &str) -> Result<DimVec, HarnessError> {
    DimVec::parse(text).map_err(|e| HarnessError::invalid(location, e.to_string()))
}

fn build_multivector(
    location: &str,
    sig: Signature,
    mask: GradeMask,
    dim: DimVec,
    fmt: PositFormat,
    coeffs: &[CoeffSpec],
) -> Result<Multivector, HarnessError> {
    let mut mv = Multivector::zero(sig, mask, dim, fmt);
    for c in coeffs {
        if c.blade >= sig.blade_count() {
            return Err(HarnessError::invalid(
                location,
                format!("blade {} is out of range for {sig}", c.blade),
            ));
        }
        mv.set(c.blade, PositValue::encode(c.value, fmt))
            .map_err(|e| HarnessError::invalid(location, e.to_string()))?;
    }
    Ok(mv)
}

/// Unit rotor cos(a/2) - sin(a/2) B for a bivector blade B; rotates vectors
/// by `angle_rad` in that plane.
fn build_rotor(
    location: &str,
    sig: Signature,
    fmt: PositFormat,
    plane: usize,
    angle_rad: f64,
) -> Result<Multivector, HarnessError> {
    if plane >= sig.blade_count() || plane.count_ones() != 2 {
        return Err(HarnessError::invalid(
            location,
            format!("plane {plane} is not a bivector blade of {sig}"),
        ));
    }
    let half = 0.5 * angle_rad;
    build_multivector(
        location,
        sig,
        GradeMask::from_grades(&[0, 2]),
        DimVec::dimensionless(),
        fmt,
        &[
            CoeffSpec { blade: 0, value: half.cos() },
            CoeffSpec { blade: plane, value: -half.sin() },
        ],
    )
}

pub(crate) fn bin_of(edges: &[f64], x: f64) -> usize {
    let i = edges.partition_point(|&e| e <= x);
    i.saturating_sub(1).min(edges.len() - 2)
}

/// The sampling side of a scenario: categorical bins over the detector
/// edges, with the optional spike-train transform applied per draw.
pub struct StreamState {
    kind: StreamKind,
    edges: Vec<f64>,
    base_probs: Vec<f64>,
    drift_probs: Option<Vec<f64>>,
    drift_at: Option<u64>,
    encoder: EncoderSpec,
}

impl StreamState {
    pub fn new(scn: &Scenario) -> Result<Self, HarnessError> {
        Ok(StreamState {
            kind: scn.stream.kind,
            edges: scn.detector.edges.clone(),
            base_probs: normalize(&scn.stream.base_weights),
            drift_probs: scn.stream.drift_weights.as_deref().map(normalize),
            drift_at: scn.stream.drift_at,
            encoder: scn.stream.encoder.unwrap_or_default(),
        })
    }

    /// One draw from the base regime, regardless of step.
    pub fn sample_base<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.emit(&self.base_probs, rng)
    }

    /// One draw for the given step, honoring the drift point.
    pub fn sample<R: Rng + ?Sized>(&self, step: u64, rng: &mut R) -> f64 {
        match (&self.drift_probs, self.drift_at) {
            (Some(p), Some(at)) if step >= at => self.emit(p, rng),
            _ => self.emit(&self.base_probs, rng),
        }
    }

    fn emit<R: Rng + ?Sized>(&self, probs: &[f64], rng: &mut R) -> f64 {
        let bin = categorical(probs, rng);
        let frac: f64 = rng.gen();
        match self.kind {
            StreamKind::Stationary | StreamKind::Drift => {
                let lo = self.edges[bin];
                let hi = self.edges[bin + 1];
                lo + frac * (hi - lo)
            }
            StreamKind::Spike => {
                let u = (bin as f64 + frac) / probs.len() as f64;
                self.spike_count(u)
            }
        }
    }

    /// Deterministic intensity-to-count transform: rate-code u, integrate
    /// through one leaky neuron, count output spikes.
    fn spike_count(&self, u: f64) -> f64 {
        let enc = &self.encoder;
        let train = rate_encode(
            u,
            DimVec::dimensionless(),
            1.0,
            DimVec::dimensionless(),
            enc.rate_per_ms,
            enc.window_ms,
        )
        .expect("dimensionless unit-range intensity encodes");
        let mut neuron = LifNeuron::new(enc.tau_ms, enc.threshold_mv, enc.reset_mv, Decay::Exact)
            .expect("validated encoder parameters");
        let weight = SynapticWeight::new(enc.weight_mv_per_ms, adm_core::snn::drive_dim())
            .expect("drive dimension is fixed");
        let mut fired = 0u64;
        for t in train {
            if neuron.inject(t, weight, enc.pulse_ms).expect("times are sorted") {
                fired += 1;
            }
        }
        fired as f64
    }
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
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
