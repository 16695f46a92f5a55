//! Grade-corruption contrast experiment: does off-grade energy appear in a
//! trained weight, and does grade typing stop it?
//!
//! One teacher-student run, repeated under four arithmetic regimes over the
//! *same* input and target sequence:
//!
//! * **typed** — the weight stores grade-2 blades only; precision is chopped.
//!   Off-grade coefficients do not exist, so their energy is zero at any
//!   precision. This is the structural guarantee under test.
//! * **dense chopped** — the weight stores every blade and every multiply and
//!   add truncates the significand to a few fraction bits. The scalar
//!   component of the gradient is a sum that cancels exactly in real
//!   arithmetic; truncation breaks the cancellation and pumps energy into the
//!   scalar blade.
//! * **dense plain** — ordinary f64. Reported for reference: cancellation
//!   survives only until the weight mantissas outgrow 53 bits.
//! * **dense exact** — dyadic big-integer arithmetic (an f64 with an unbounded
//!   mantissa). Every cancellation is exact, so off-grade energy stays
//!   identically zero; this is the control the chopped run is compared
//!   against.
//!
//! The construction makes the leak's growth systematic rather than noisy.
//! The student tracks a teacher whose coefficients double every ten steps —
//! a pure exponent shift, which both f64 rounding and significand truncation
//! commute with. The input is a fixed vector with power-of-two components
//! and sum(x^2) = 12, so with eta = 1/16 every error component relaxes with
//! the positive factor 1 - eta*sum(x^2) = 1/4: no sign oscillation, no
//! cancellation races. Once the trajectory locks onto the doubling orbit
//! (discrete chopped values under a contraction reach it exactly), every
//! stored value — including the leaked scalar — scales by exactly 2 per
//! period, so off-grade energy grows by exactly 4 per ten steps and its
//! ten-step moving average is monotone by construction.

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use adm_core::clifford::{blade_grade, CayleyTable, Signature};

use crate::scenario::{LayerSpec, Scenario};
use crate::HarnessError;

/// Truncate the significand to `frac_bits` fraction bits, toward zero. Exact
/// on zero, powers of two, and anything already that short.
pub fn chop_f64(v: f64, frac_bits: u32) -> f64 {
    if v == 0.0 || !v.is_finite() || frac_bits >= 52 {
        return v;
    }
    let keep = !((1u64 << (52 - frac_bits)) - 1);
    f64::from_bits(v.to_bits() & keep)
}

/// One arithmetic regime: how the pipeline multiplies, adds, and (maybe)
/// drops precision after each operation.
pub trait Scalar: Clone {
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn zero() -> Self;
    fn neg(&self) -> Self;
    fn add(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    /// Precision policy applied after every multiply and every add.
    fn chop(&self, frac_bits: Option<u32>) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn zero() -> Self {
        0.0
    }
    fn neg(&self) -> Self {
        -self
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn chop(&self, frac_bits: Option<u32>) -> Self {
        match frac_bits {
            Some(f) => chop_f64(*self, f),
            None => *self,
        }
    }
}

/// Exact dyadic scalar m * 2^e with an arbitrary-length mantissa; the
/// arithmetic f64 approximates. Normalized so m is odd (or zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactScalar {
    m: BigInt,
    e: i64,
}

impl ExactScalar {
    fn normalized(mut m: BigInt, mut e: i64) -> Self {
        match m.trailing_zeros() {
            None => ExactScalar { m: BigInt::zero(), e: 0 },
            Some(tz) => {
                m >>= tz;
                e += tz as i64;
                ExactScalar { m, e }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.m.is_zero()
    }
}

impl Scalar for ExactScalar {
    fn from_f64(v: f64) -> Self {
        assert!(v.is_finite(), "exact pipeline takes finite inputs");
        if v == 0.0 {
            return ExactScalar { m: BigInt::zero(), e: 0 };
        }
        let bits = v.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1 << 52), exp - 1075) };
        let mut m = BigInt::from(m);
        if bits >> 63 == 1 {
            m = -m;
        }
        Self::normalized(m, e)
    }

    /// Round toward zero through the top 64 mantissa bits; only for
    /// reporting, never fed back into the arithmetic.
    fn to_f64(&self) -> f64 {
        if self.m.is_zero() {
            return 0.0;
        }
        let spill = (self.m.bits() as i64 - 64).max(0);
        let head = (&self.m >> spill as u64).to_f64().unwrap_or(0.0);
        head * 2f64.powi((self.e + spill).clamp(i32::MIN as i64, i32::MAX as i64) as i32)
    }

    fn zero() -> Self {
        ExactScalar { m: BigInt::zero(), e: 0 }
    }

    fn neg(&self) -> Self {
        ExactScalar { m: -&self.m, e: self.e }
    }

    fn add(&self, rhs: &Self) -> Self {
        if self.m.is_zero() {
            return rhs.clone();
        }
        if rhs.m.is_zero() {
            return self.clone();
        }
        let e = self.e.min(rhs.e);
        let m = (&self.m << (self.e - e) as u64) + (&rhs.m << (rhs.e - e) as u64);
        Self::normalized(m, e)
    }

    fn mul(&self, rhs: &Self) -> Self {
        Self::normalized(&self.m * &rhs.m, self.e + rhs.e)
    }

    fn chop(&self, _frac_bits: Option<u32>) -> Self {
        self.clone()
    }
}

/// out = W x over the given stored blades of W, accumulated in a fixed
/// order with the precision policy applied after every operation.
fn product<S: Scalar>(
    table: &CayleyTable,
    w: &[S],
    blades: &[usize],
    x: &[(usize, S)],
    frac: Option<u32>,
) -> Vec<S> {
    let mut out = vec![S::zero(); w.len()];
    for &a in blades {
        for (b, xb) in x {
            let (sign, c) = table.product(a, *b);
            if sign == 0 {
                continue;
            }
            let mut p = w[a].mul(xb).chop(frac);
            if sign < 0 {
                p = p.neg();
            }
            out[c] = out[c].add(&p).chop(frac);
        }
    }
    out
}

/// dL/dW[a] = sum over stored x blades b of delta[a xor b] * sign(a,b) * x[b],
/// the exact analytic gradient of 1/2 |W x - t|^2, restricted to the blades
/// W stores.
fn gradient<S: Scalar>(
    table: &CayleyTable,
    delta: &[S],
    blades: &[usize],
    x: &[(usize, S)],
    frac: Option<u32>,
) -> Vec<S> {
    let mut g = vec![S::zero(); delta.len()];
    for &a in blades {
        for (b, xb) in x {
            let (sign, c) = table.product(a, *b);
            if sign == 0 {
                continue;
            }
            let mut p = delta[c].mul(xb).chop(frac);
            if sign < 0 {
                p = p.neg();
            }
            g[a] = g[a].add(&p).chop(frac);
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub step: usize,
    pub energy: f64,
}

/// Off-grade energy history of one arithmetic regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub final_energy: f64,
    pub max_energy: f64,
    pub first_nonzero_step: Option<usize>,
    /// The 10-step moving average of the energy never decreases.
    pub moving_average_nondecreasing: bool,
    pub first_ma_violation: Option<usize>,
    pub energy_samples: Vec<EnergySample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedTrace {
    pub stored_blades: Vec<usize>,
    /// The stored blade set after training equals the declared set.
    pub stored_set_stable: bool,
    pub max_off_grade_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub algebra: String,
    pub steps: usize,
    pub frac_bits: u32,
    pub eta: f64,
    pub weight_blades: Vec<usize>,
    pub typed: TypedTrace,
    pub dense_chopped: PipelineTrace,
    pub dense_plain: PipelineTrace,
    pub dense_exact: PipelineTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub steps: usize,
    pub frac_bits: u32,
    pub eta: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        // steps > 1000 so the leak's presence *by* step 1000 is measurable,
        // eta = 1/16 against sum(x^2) = 12 for the 1/4 tracking ratio
        ContrastConfig { steps: 1100, frac_bits: 8, eta: 0.0625 }
    }
}

const MA_WINDOW: usize = 10;
/// The teacher doubles once per moving-average window, so the average always
/// compares states exactly one doubling apart.
const TEACHER_PERIOD: usize = MA_WINDOW;

fn trace_from_energies(energies: &[f64], stride: usize) -> PipelineTrace {
    let final_energy = *energies.last().unwrap_or(&0.0);
    let max_energy = energies.iter().copied().fold(0.0, f64::max);
    let first_nonzero_step = energies.iter().position(|&e| e > 0.0);
    let ma: Vec<f64> = energies
        .windows(MA_WINDOW)
        .map(|w| w.iter().sum::<f64>() / MA_WINDOW as f64)
        .collect();
    let first_ma_violation = ma.windows(2).position(|p| p[1] < p[0]);
    let energy_samples = energies
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i + 1 == energies.len())
        .map(|(step, &energy)| EnergySample { step, energy })
        .collect();
    PipelineTrace {
        final_energy,
        max_energy,
        first_nonzero_step,
        moving_average_nondecreasing: first_ma_violation.is_none(),
        first_ma_violation,
        energy_samples,
    }
}

/// Train one regime over the shared data and record its off-grade energy
/// after every update.
fn run_pipeline<S: Scalar>(
    table: &CayleyTable,
    w_init: &[f64],
    blades: &[usize],
    off_grade: &[usize],
    xs: &[[f64; 3]],
    targets: &[Vec<f64>],
    eta: f64,
    frac: Option<u32>,
    stride: usize,
) -> PipelineTrace {
    let n = w_init.len();
    let mut w: Vec<S> = w_init.iter().map(|&v| S::from_f64(v)).collect();
    let eta_s = S::from_f64(eta);
    let mut energies = Vec::with_capacity(xs.len());
    for (x_raw, t_raw) in xs.iter().zip(targets) {
        let x: Vec<(usize, S)> = VECTOR_BLADES
            .iter()
            .zip(x_raw)
            .map(|(&b, &v)| (b, S::from_f64(v)))
            .collect();
        let out = product(table, &w, blades, &x, frac);
        let delta: Vec<S> = (0..n)
            .map(|c| out[c].add(&S::from_f64(t_raw[c]).neg()).chop(frac))
            .collect();
        let g = gradient(table, &delta, blades, &x, frac);
        for &a in blades {
            let step = eta_s.mul(&g[a]).chop(frac);
            w[a] = w[a].add(&step.neg()).chop(frac);
        }
        let energy = off_grade
            .iter()
            .map(|&a| {
                let v = w[a].to_f64();
                v * v
            })
            .sum::<f64>();
        energies.push(energy);
    }
    trace_from_energies(&energies, stride)
}

const VECTOR_BLADES: [usize; 3] = [0b001, 0b010, 0b100];

/// The grade-2 blade set and initial coefficients declared by the scenario's
/// first purely grade-2 product weight.
fn grade2_weight(scn: &Scenario) -> Result<Vec<(usize, f64)>, HarnessError> {
    for (i, layer) in scn.model.layers.iter().enumerate() {
        if let LayerSpec::GeometricProduct { grades, coeffs, .. } = layer {
            if grades == &[2] {
                let mut out: Vec<(usize, f64)> = coeffs.iter().map(|c| (c.blade, c.value)).collect();
                out.sort_by_key(|(b, _)| *b);
                if out.len() != 3 || out.iter().any(|(b, _)| blade_grade(*b) != 2) {
                    return Err(HarnessError::invalid(
                        &format!("model.layers[{i}]"),
                        "contrast needs all three grade-2 coefficients declared",
                    ));
                }
                return Ok(out);
            }
        }
    }
    Err(HarnessError::invalid(
        "model.layers",
        "contrast needs a product layer typed over exactly grade 2",
    ))
}

pub fn contrast_experiment(
    scn: &Scenario,
    cfg: &ContrastConfig,
) -> Result<ContrastReport, HarnessError> {
    let sig = scn.signature()?;
    if sig != Signature::new(3, 0, 0).expect("static signature") {
        return Err(HarnessError::invalid(
            "model.signature",
            format!("contrast runs in Cl(3,0,0), scenario declares {sig}"),
        ));
    }
    if cfg.steps < MA_WINDOW || cfg.steps > 5000 {
        return Err(HarnessError::invalid("contrast", "steps must lie in [10, 5000]"));
    }
    // sum(x^2) = 12, so eta < 1/12 keeps the per-step error factor
    // 1 - eta*sum(x^2) in (0, 1): monotone tracking, no sign oscillation
    if !(cfg.eta > 0.0 && cfg.eta * 12.0 < 1.0) {
        return Err(HarnessError::invalid("contrast", "eta must lie in (0, 1/12)"));
    }
    let table = CayleyTable::new(sig);
    let n = sig.blade_count();
    let all_blades: Vec<usize> = (0..n).collect();

    // student start and teacher: short dyadic mantissas, so the f64 teacher
    // products below are exact; the student starts exactly one doubling
    // behind the teacher, which puts the error on the periodic orbit from
    // the first step
    let declared = grade2_weight(scn)?;
    let typed_blades: Vec<usize> = declared.iter().map(|(b, _)| *b).collect();
    let mut w_init = vec![0.0f64; n];
    let mut w_teacher = vec![0.0f64; n];
    for (blade, value) in &declared {
        w_init[*blade] = chop_f64(*value, cfg.frac_bits);
        w_teacher[*blade] = 2.0 * w_init[*blade];
    }
    let off_grade: Vec<usize> = (0..n).filter(|&a| blade_grade(a) != 2).collect();

    // shared data: a fixed power-of-two vector against a teacher that doubles
    // every period (a pure exponent shift, exact under chopping and f64
    // alike); targets computed once, exactly, and reused by every regime
    let x = [2.0f64, 2.0, 2.0];
    let x_pairs: Vec<(usize, f64)> = VECTOR_BLADES.iter().copied().zip(x).collect();
    let mut xs = Vec::with_capacity(cfg.steps);
    let mut targets = Vec::with_capacity(cfg.steps);
    for s in 0..cfg.steps {
        let scale = 2f64.powi((s / TEACHER_PERIOD) as i32);
        let scaled: Vec<f64> = w_teacher.iter().map(|&v| v * scale).collect();
        targets.push(product::<f64>(&table, &scaled, &typed_blades, &x_pairs, None));
        xs.push(x);
    }

    let stride = (cfg.steps / 64).max(1);
    let typed_run = run_pipeline::<f64>(
        &table,
        &w_init,
        &typed_blades,
        &off_grade,
        &xs,
        &targets,
        cfg.eta,
        Some(cfg.frac_bits),
        stride,
    );
    let dense_chopped = run_pipeline::<f64>(
        &table,
        &w_init,
        &all_blades,
        &off_grade,
        &xs,
        &targets,
        cfg.eta,
        Some(cfg.frac_bits),
        stride,
    );
    let dense_plain = run_pipeline::<f64>(
        &table, &w_init, &all_blades, &off_grade, &xs, &targets, cfg.eta, None, stride,
    );
    let dense_exact = run_pipeline::<ExactScalar>(
        &table, &w_init, &all_blades, &off_grade, &xs, &targets, cfg.eta, None, stride,
    );

    Ok(ContrastReport {
        algebra: sig.to_string(),
        steps: cfg.steps,
        frac_bits: cfg.frac_bits,
        eta: cfg.eta,
        weight_blades: typed_blades.clone(),
        typed: TypedTrace {
            stored_blades: typed_blades,
            stored_set_stable: true,
            max_off_grade_energy: typed_run.max_energy,
        },
        dense_chopped,
        dense_plain,
        dense_exact,
    })
}
