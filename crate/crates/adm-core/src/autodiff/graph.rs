//! Loss pipelines: typed layers, a scalar reduce, forward-mode derivatives,
//! the randomized gradient estimator, and grade-restricted update steps.

use rand::Rng;

use crate::arith::{PositFormat, PositValue, Quire};
use crate::clifford::{CayleyTable, CliffordError, GradeMask, Multivector};
use crate::units::{check_chain, DimVec};

use super::dual::DualMultivector;
use super::AutodiffError;

#[derive(Debug, Clone)]
pub enum Layer {
    /// x -> W x, weight multiplying from the left.
    GeometricProduct { weight: Multivector },
    /// x -> R x R~, output restricted to x's grades.
    Sandwich { rotor: Multivector },
    /// x -> projection of x onto `keep`.
    GradeProject { keep: GradeMask },
    /// Pointwise map on the scalar slot; all other slots pass through.
    Nonlinearity { kind: NonlinKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinKind {
    Identity,
    Tanh,
    Softplus,
}

/// Value and derivative of a scalar nonlinearity, computed in f64.
pub(super) fn nonlin_value_slope(kind: NonlinKind, u: f64) -> (f64, f64) {
    match kind {
        NonlinKind::Identity => (u, 1.0),
        NonlinKind::Tanh => {
            let t = u.tanh();
            (t, 1.0 - t * t)
        }
        NonlinKind::Softplus => {
            // ln(1 + e^u), evaluated without overflow for large |u|
            let v = if u > 30.0 { u } else { u.exp().ln_1p() };
            (v, 1.0 / (1.0 + (-u).exp()))
        }
    }
}

#[derive(Debug, Clone)]
pub enum Reduce {
    /// L = 1/2 * sum of squared output coefficients.
    SquaredNorm,
    /// L = 1/2 * sum of squared deviations from a fixed target.
    SquaredError { target: Multivector },
}

/// A typed loss pipeline over one algebra and one scalar format.
///
/// Construction checks the whole dimension chain once (transcendental
/// nonlinearities demand dimensionless input, a squared-error target must
/// match the pipeline's output mask and dimension) and records the grades the
/// output can populate.
#[derive(Debug, Clone)]
pub struct LossGraph {
    pub(super) table: CayleyTable,
    pub(super) fmt: PositFormat,
    pub(super) input_mask: GradeMask,
    pub(super) input_dim: DimVec,
    pub(super) layers: Vec<Layer>,
    pub(super) reduce: Reduce,
    output_mask: GradeMask,
    loss_dim: DimVec,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Multivector,
    pub loss: PositValue,
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    /// One gradient per parameter, in parameter order, each carrying the
    /// parameter's grade mask and the dimension loss * parameter.
    pub per_param: Vec<Multivector>,
    pub samples: usize,
}

/// Live multivector-value counts for one evaluation of a graph.
///
/// Inference holds every parameter plus the incoming and outgoing activation.
/// The dual pass pairs each of those with exactly one extra value (a
/// direction per parameter, a tangent per activation) and nothing else, so
/// `training_peak - 2 * inference_peak` is identically zero: forward-mode
/// training fits in two inference memories regardless of depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryProfile {
    pub inference_peak: usize,
    pub training_peak: usize,
    pub auxiliary_overhead: i64,
}

impl LossGraph {
    pub fn new(
        table: CayleyTable,
        fmt: PositFormat,
        input_mask: GradeMask,
        input_dim: DimVec,
        layers: Vec<Layer>,
        reduce: Reduce,
    ) -> Result<Self, AutodiffError> {
        let sig = table.signature();
        for layer in &layers {
            if let Some(w) = layer_param(layer) {
                if w.signature() != sig {
                    return Err(CliffordError::SignatureMismatch(
                        sig.to_string(),
                        w.signature().to_string(),
                    )
                    .into());
                }
                if w.format() != fmt {
                    return Err(CliffordError::FormatMismatch(
                        fmt.descriptor(),
                        w.format().descriptor(),
                    )
                    .into());
                }
            }
        }

        let input_mask = input_mask.intersect(GradeMask::all(sig.dims()));
        let mut mask = input_mask;
        let mut dim = input_dim;
        // (expected input dim, output dim) per stage; entry 0 is the source
        let mut pairs: Vec<(DimVec, DimVec)> = vec![(input_dim, input_dim)];
        for layer in &layers {
            let (expect_in, out_dim) = match layer {
                Layer::GeometricProduct { weight } => {
                    mask = table.grade_infer(weight.grade_mask(), mask);
                    (dim, weight.dim() * dim)
                }
                Layer::Sandwich { rotor } => (dim, rotor.dim() * dim * rotor.dim()),
                Layer::GradeProject { keep } => {
                    mask = mask.intersect(*keep);
                    (dim, dim)
                }
                Layer::Nonlinearity { kind } => match kind {
                    NonlinKind::Identity => (dim, dim),
                    _ => (DimVec::dimensionless(), DimVec::dimensionless()),
                },
            };
            pairs.push((expect_in, out_dim));
            dim = out_dim;
        }
        let (reduce_in, loss_dim) = match &reduce {
            Reduce::SquaredNorm => (dim, dim * dim),
            Reduce::SquaredError { target } => {
                if target.signature() != sig {
                    return Err(CliffordError::SignatureMismatch(
                        sig.to_string(),
                        target.signature().to_string(),
                    )
                    .into());
                }
                if target.format() != fmt {
                    return Err(CliffordError::FormatMismatch(
                        fmt.descriptor(),
                        target.format().descriptor(),
                    )
                    .into());
                }
                if target.grade_mask() != mask {
                    return Err(AutodiffError::TargetStructure {
                        expected: mask,
                        got: target.grade_mask(),
                    });
                }
                (target.dim(), target.dim() * target.dim())
            }
        };
        pairs.push((reduce_in, loss_dim));
        check_chain(&pairs)?;

        Ok(LossGraph {
            table,
            fmt,
            input_mask,
            input_dim,
            layers,
            reduce,
            output_mask: mask,
            loss_dim,
        })
    }

    pub fn table(&self) -> &CayleyTable {
        &self.table
    }

    pub fn format(&self) -> PositFormat {
        self.fmt
    }

    pub fn input_mask(&self) -> GradeMask {
        self.input_mask
    }

    pub fn input_dim(&self) -> DimVec {
        self.input_dim
    }

    pub fn output_mask(&self) -> GradeMask {
        self.output_mask
    }

    pub fn loss_dim(&self) -> DimVec {
        self.loss_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// The trainable parameters (weights and rotors), in layer order.
    pub fn params(&self) -> Vec<&Multivector> {
        self.layers.iter().filter_map(layer_param).collect()
    }

    /// Replace one parameter with a structurally identical multivector.
    pub fn set_param(&mut self, index: usize, value: Multivector) -> Result<(), AutodiffError> {
        let mut i = 0;
        for layer in &mut self.layers {
            let slot = match layer {
                Layer::GeometricProduct { weight } => Some(weight),
                Layer::Sandwich { rotor } => Some(rotor),
                _ => None,
            };
            if let Some(slot) = slot {
                if i == index {
                    if value.signature() != slot.signature()
                        || value.grade_mask() != slot.grade_mask()
                        || value.format() != slot.format()
                        || value.dim() != slot.dim()
                    {
                        return Err(AutodiffError::ParamStructure { index });
                    }
                    *slot = value;
                    return Ok(());
                }
                i += 1;
            }
        }
        Err(AutodiffError::ParamIndex { index })
    }

    pub(super) fn check_input(&self, x: &Multivector) -> Result<(), AutodiffError> {
        if x.signature() != self.table.signature()
            || x.format() != self.fmt
            || x.grade_mask() != self.input_mask
            || x.dim() != self.input_dim
        {
            return Err(AutodiffError::InputStructure {
                expected: self.input_mask,
                got: x.grade_mask(),
                expected_dim: self.input_dim,
                got_dim: x.dim(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Multivector) -> Result<Forward, AutodiffError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = self.apply(layer, &cur)?;
        }
        let loss = self.reduce_loss(&cur)?;
        Ok(Forward { output: cur, loss })
    }

    fn apply(&self, layer: &Layer, x: &Multivector) -> Result<Multivector, AutodiffError> {
        Ok(match layer {
            Layer::GeometricProduct { weight } => weight.geometric_product(&self.table, x)?,
            Layer::Sandwich { rotor } => rotor.sandwich(&self.table, x)?,
            Layer::GradeProject { keep } => x.grade_project(*keep),
            Layer::Nonlinearity { kind } => {
                if *kind == NonlinKind::Identity || !x.grade_mask().contains(0) {
                    x.clone()
                } else {
                    let mut out = x.clone();
                    let (y, _) = nonlin_value_slope(*kind, x.get(0).decode());
                    out.set(0, PositValue::encode(y, self.fmt))?;
                    out
                }
            }
        })
    }

    fn apply_dual(&self, layer: &Layer, x: &DualMultivector) -> Result<DualMultivector, AutodiffError> {
        Ok(match layer {
            Layer::GeometricProduct { .. } | Layer::Sandwich { .. } => unreachable!("handled by caller"),
            Layer::GradeProject { keep } => x.grade_project(*keep),
            Layer::Nonlinearity { kind } => {
                if *kind == NonlinKind::Identity || !x.primal().grade_mask().contains(0) {
                    x.clone()
                } else {
                    let (y, slope) = nonlin_value_slope(*kind, x.primal().get(0).decode());
                    let du = x.tangent().get(0).decode();
                    let mut p = x.primal().clone();
                    p.set(0, PositValue::encode(y, self.fmt))?;
                    let mut t = x.tangent().clone();
                    t.set(0, PositValue::encode(slope * du, self.fmt))?;
                    DualMultivector::new(p, t)?
                }
            }
        })
    }

    fn reduce_loss(&self, out: &Multivector) -> Result<PositValue, AutodiffError> {
        let mut q = Quire::new(self.fmt);
        match &self.reduce {
            Reduce::SquaredNorm => {
                for (_, c) in out.iter() {
                    q.add_product(c, c)?;
                }
            }
            Reduce::SquaredError { target } => {
                for (b, c) in out.iter() {
                    let d = c.scalar_sub(target.get(b))?;
                    q.add_product(d, d)?;
                }
            }
        }
        // halving is a pure exponent shift, exact away from saturation
        Ok(q.to_posit().scalar_mul(PositValue::encode(0.5, self.fmt))?)
    }

    fn reduce_dual(&self, out: &DualMultivector) -> Result<(PositValue, PositValue), AutodiffError> {
        let mut ql = Quire::new(self.fmt);
        let mut qd = Quire::new(self.fmt);
        match &self.reduce {
            Reduce::SquaredNorm => {
                for (b, c) in out.primal().iter() {
                    ql.add_product(c, c)?;
                    qd.add_product(c, out.tangent().get(b))?;
                }
            }
            Reduce::SquaredError { target } => {
                for (b, c) in out.primal().iter() {
                    let d = c.scalar_sub(target.get(b))?;
                    ql.add_product(d, d)?;
                    qd.add_product(d, out.tangent().get(b))?;
                }
            }
        }
        let half = PositValue::encode(0.5, self.fmt);
        Ok((ql.to_posit().scalar_mul(half)?, qd.to_posit()))
    }

    /// Derivative of the loss along one direction per parameter, computed in
    /// a single dual forward pass.
    pub fn directional_derivative(
        &self,
        x: &Multivector,
        directions: &[Multivector],
    ) -> Result<PositValue, AutodiffError> {
        self.check_input(x)?;
        self.check_directions(directions)?;
        let mut di = 0;
        let mut cur = DualMultivector::constant(x.clone());
        for layer in &self.layers {
            cur = match layer {
                Layer::GeometricProduct { weight } => {
                    let w = DualMultivector::new(weight.clone(), directions[di].clone())?;
                    di += 1;
                    w.geometric_product(&self.table, &cur)?
                }
                Layer::Sandwich { rotor } => {
                    let r = DualMultivector::new(rotor.clone(), directions[di].clone())?;
                    di += 1;
                    r.sandwich(&self.table, &cur)?
                }
                other => self.apply_dual(other, &cur)?,
            };
        }
        let (_, d) = self.reduce_dual(&cur)?;
        Ok(d)
    }

    fn check_directions(&self, dirs: &[Multivector]) -> Result<(), AutodiffError> {
        let params = self.params();
        if dirs.len() != params.len() {
            return Err(AutodiffError::DirectionCount { expected: params.len(), got: dirs.len() });
        }
        for (i, (d, w)) in dirs.iter().zip(&params).enumerate() {
            if d.signature() != w.signature()
                || d.grade_mask() != w.grade_mask()
                || d.format() != w.format()
                || d.dim() != w.dim()
            {
                return Err(AutodiffError::DirectionStructure { index: i });
            }
        }
        Ok(())
    }

    /// Monte Carlo gradient: average of (dL/ds) * s over random sign
    /// directions. Each coefficient of each parameter draws independently
    /// from {-1, +1}, whose second moment is exactly the identity, so the
    /// estimator is unbiased; both values are exactly representable in every
    /// format. Per-coefficient accumulation across samples happens in one
    /// quire, with a single final scaling by 1/samples.
    pub fn forward_gradient<R: Rng + ?Sized>(
        &self,
        x: &Multivector,
        samples: usize,
        rng: &mut R,
    ) -> Result<GradientEstimate, AutodiffError> {
        if samples == 0 {
            return Err(AutodiffError::NoSamples);
        }
        self.check_input(x)?;
        let params = self.params();
        let mut acc: Vec<Vec<Quire>> = params
            .iter()
            .map(|w| w.stored_blades().iter().map(|_| Quire::new(self.fmt)).collect())
            .collect();
        for _ in 0..samples {
            let dirs: Vec<Multivector> = params.iter().map(|w| rademacher_like(w, rng)).collect();
            let jvp = self.directional_derivative(x, &dirs)?;
            for (pi, dir) in dirs.iter().enumerate() {
                for (ci, (_, s)) in dir.iter().enumerate() {
                    acc[pi][ci].add_product(jvp, s)?;
                }
            }
        }
        let inv_n = PositValue::encode(1.0 / samples as f64, self.fmt);
        let mut per_param = Vec::with_capacity(params.len());
        for (pi, w) in params.iter().enumerate() {
            let mut g = Multivector::zero(
                w.signature(),
                w.grade_mask(),
                self.loss_dim * w.dim(),
                self.fmt,
            );
            for (ci, blade) in w.stored_blades().into_iter().enumerate() {
                g.set(blade, acc[pi][ci].to_posit().scalar_mul(inv_n)?)?;
            }
            per_param.push(g);
        }
        Ok(GradientEstimate { per_param, samples })
    }

    /// See [`MemoryProfile`] for the accounting convention.
    pub fn memory_profile(&self) -> MemoryProfile {
        let p = self.params().len();
        let inference_peak = p + 2;
        let training_peak = 2 * p + 4;
        MemoryProfile {
            inference_peak,
            training_peak,
            auxiliary_overhead: training_peak as i64 - 2 * inference_peak as i64,
        }
    }
}

fn layer_param(layer: &Layer) -> Option<&Multivector> {
    match layer {
        Layer::GeometricProduct { weight } => Some(weight),
        Layer::Sandwich { rotor } => Some(rotor),
        _ => None,
    }
}

/// Direction with every stored coefficient drawn from {-1, +1}.
fn rademacher_like<R: Rng + ?Sized>(w: &Multivector, rng: &mut R) -> Multivector {
    let one = PositValue::encode(1.0, w.format());
    let mut s = Multivector::zero(w.signature(), w.grade_mask(), w.dim(), w.format());
    for (blade, _) in w.iter() {
        let v = if rng.gen::<bool>() { one } else { one.neg() };
        s.set(blade, v).expect("direction blade is in mask");
    }
    s
}

/// One typed update step w' = w - eta * g, fused per coefficient so each new
/// weight rounds once. The gradient must match the weight's grades exactly,
/// and eta's dimension must make eta * g land in the weight's dimension.
pub fn grade_restricted_step(
    weight: &Multivector,
    grad: &Multivector,
    eta: PositValue,
    eta_dim: DimVec,
) -> Result<Multivector, AutodiffError> {
    if grad.signature() != weight.signature() {
        return Err(CliffordError::SignatureMismatch(
            weight.signature().to_string(),
            grad.signature().to_string(),
        )
        .into());
    }
    if grad.format() != weight.format() || eta.format() != weight.format() {
        return Err(CliffordError::FormatMismatch(
            weight.format().descriptor(),
            grad.format().descriptor(),
        )
        .into());
    }
    if grad.grade_mask() != weight.grade_mask() {
        return Err(AutodiffError::GradientStructure {
            expected: weight.grade_mask(),
            got: grad.grade_mask(),
        });
    }
    if eta_dim * grad.dim() != weight.dim() {
        return Err(AutodiffError::StepDim {
            needed: weight.dim() / grad.dim(),
            got: eta_dim,
        });
    }
    let mut out = weight.clone();
    for (blade, w) in weight.iter() {
        let mut q = Quire::new(weight.format());
        q.add_value(w)?;
        q.sub_product(eta, grad.get(blade))?;
        out.set(blade, q.to_posit())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clifford::Signature;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fmt32() -> PositFormat {
        PositFormat::new(32, 2, 6).unwrap()
    }

    fn dimless() -> DimVec {
        DimVec::dimensionless()
    }

    /// W (vector) times x (vector) into squared norm, in Cl(2,0,0).
    fn vector_square_graph(w: [f64; 2]) -> LossGraph {
        let sig = Signature::new(2, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let weight = Multivector::from_entries(
            sig,
            GradeMask::single(1),
            dimless(),
            fmt32(),
            &[(0b01, w[0]), (0b10, w[1])],
        )
        .unwrap();
        LossGraph::new(
            table,
            fmt32(),
            GradeMask::single(1),
            dimless(),
            vec![Layer::GeometricProduct { weight }],
            Reduce::SquaredNorm,
        )
        .unwrap()
    }

    fn e1(sig: Signature) -> Multivector {
        Multivector::from_entries(sig, GradeMask::single(1), dimless(), fmt32(), &[(0b01, 1.0)])
            .unwrap()
    }

    #[test]
    fn forward_and_jvp_on_a_scalar_square() {
        // L(w) = 1/2 (w x)^2 with w=2, x=3: L=18, dL/dw = w x^2 = 18
        let sig = Signature::new(1, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let w = Multivector::scalar(sig, PositValue::encode(2.0, fmt32()), dimless());
        let graph = LossGraph::new(
            table,
            fmt32(),
            GradeMask::single(0),
            dimless(),
            vec![Layer::GeometricProduct { weight: w }],
            Reduce::SquaredNorm,
        )
        .unwrap();
        let x = Multivector::scalar(sig, PositValue::encode(3.0, fmt32()), dimless());
        let f = graph.forward(&x).unwrap();
        assert_eq!(f.loss.decode(), 18.0);
        let dir = Multivector::scalar(graph.table().signature(), PositValue::encode(1.0, fmt32()), dimless());
        let jvp = graph.directional_derivative(&x, &[dir]).unwrap();
        assert_eq!(jvp.decode(), 18.0);
    }

    #[test]
    fn vector_loss_matches_hand_computation() {
        // W x with x = e1: L = 1/2 (w1^2 + w2^2)
        let graph = vector_square_graph([0.75, -0.5]);
        let x = e1(graph.table().signature());
        let f = graph.forward(&x).unwrap();
        assert_eq!(f.loss.decode(), 0.5 * (0.75 * 0.75 + 0.25));
        assert_eq!(f.output.grade_mask(), GradeMask::from_grades(&[0, 2]));
    }

    #[test]
    fn direction_structure_is_enforced() {
        let graph = vector_square_graph([1.0, 1.0]);
        let sig = graph.table().signature();
        let x = e1(sig);
        assert_eq!(
            graph.directional_derivative(&x, &[]).unwrap_err(),
            AutodiffError::DirectionCount { expected: 1, got: 0 }
        );
        let bad = Multivector::zero(sig, GradeMask::single(2), dimless(), fmt32());
        assert_eq!(
            graph.directional_derivative(&x, &[bad]).unwrap_err(),
            AutodiffError::DirectionStructure { index: 0 }
        );
    }

    #[test]
    fn dimension_chain_rejects_transcendental_of_meters() {
        let sig = Signature::new(2, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let err = LossGraph::new(
            table,
            fmt32(),
            GradeMask::single(0),
            DimVec::parse("m").unwrap(),
            vec![Layer::Nonlinearity { kind: NonlinKind::Tanh }],
            Reduce::SquaredNorm,
        )
        .unwrap_err();
        match err {
            AutodiffError::Chain(m) => {
                assert_eq!(m.boundary, 1);
                assert_eq!(m.left_out, DimVec::parse("m").unwrap());
                assert_eq!(m.right_in, DimVec::dimensionless());
            }
            other => panic!("expected chain mismatch, got {other:?}"),
        }
    }

    #[test]
    fn squared_error_target_must_match_output_mask() {
        let sig = Signature::new(2, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let weight = Multivector::zero(sig, GradeMask::single(1), dimless(), fmt32());
        let target = Multivector::zero(sig, GradeMask::single(1), dimless(), fmt32());
        let err = LossGraph::new(
            table,
            fmt32(),
            GradeMask::single(1),
            dimless(),
            vec![Layer::GeometricProduct { weight }],
            Reduce::SquaredError { target },
        )
        .unwrap_err();
        assert_eq!(
            err,
            AutodiffError::TargetStructure {
                expected: GradeMask::from_grades(&[0, 2]),
                got: GradeMask::single(1),
            }
        );
    }

    #[test]
    fn estimator_converges_to_the_shadow_gradient() {
        let graph = vector_square_graph([0.75, -0.5]);
        let x = e1(graph.table().signature());
        let exact = graph.shadow_gradient(&x, 1e-5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let est = graph.forward_gradient(&x, 4096, &mut rng).unwrap();
        for (blade, g) in &exact[0] {
            let e = est.per_param[0].get(*blade).decode();
            assert!((e - g).abs() < 0.05, "blade {blade}: {e} vs {g}");
        }
    }

    #[test]
    fn estimator_handles_rotor_parameters() {
        // d/dR of |R x R~|^2 must flow through both sandwich factors
        let sig = Signature::new(2, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let rotor = Multivector::from_entries(
            sig,
            GradeMask::from_grades(&[0, 2]),
            dimless(),
            fmt32(),
            &[(0, 1.25), (0b11, 0.25)],
        )
        .unwrap();
        let graph = LossGraph::new(
            table,
            fmt32(),
            GradeMask::single(1),
            dimless(),
            vec![Layer::Sandwich { rotor }],
            Reduce::SquaredNorm,
        )
        .unwrap();
        let x = e1(sig);
        let exact = graph.shadow_gradient(&x, 1e-5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est = graph.forward_gradient(&x, 8192, &mut rng).unwrap();
        for (blade, g) in &exact[0] {
            let e = est.per_param[0].get(*blade).decode();
            assert!((e - g).abs() < 0.2, "blade {blade}: {e} vs {g}");
        }
    }

    #[test]
    fn step_updates_exactly_and_rejects_structural_drift() {
        let sig = Signature::new(2, 0, 0).unwrap();
        let mk = |a: f64, b: f64| {
            Multivector::from_entries(
                sig,
                GradeMask::single(1),
                dimless(),
                fmt32(),
                &[(0b01, a), (0b10, b)],
            )
            .unwrap()
        };
        let w = mk(4.0, -2.0);
        let g = mk(8.0, 16.0);
        let eta = PositValue::encode(0.25, fmt32());
        let w2 = grade_restricted_step(&w, &g, eta, dimless()).unwrap();
        assert_eq!(w2.get(0b01).decode(), 2.0);
        assert_eq!(w2.get(0b10).decode(), -6.0);
        assert_eq!(w2.grade_mask(), w.grade_mask());

        let foreign = Multivector::zero(sig, GradeMask::from_grades(&[0, 1]), dimless(), fmt32());
        assert!(matches!(
            grade_restricted_step(&w, &foreign, eta, dimless()),
            Err(AutodiffError::GradientStructure { .. })
        ));

        let err = grade_restricted_step(&w, &g, eta, DimVec::parse("m").unwrap()).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::StepDim { needed: dimless(), got: DimVec::parse("m").unwrap() }
        );
    }

    #[test]
    fn training_memory_is_twice_inference_at_every_depth() {
        let sig = Signature::new(2, 0, 0).unwrap();
        for depth in [2usize, 8, 32, 64] {
            let layers: Vec<Layer> = (0..depth)
                .map(|_| Layer::GeometricProduct {
                    weight: Multivector::from_entries(
                        sig,
                        GradeMask::single(0),
                        dimless(),
                        fmt32(),
                        &[(0, 1.0)],
                    )
                    .unwrap(),
                })
                .collect();
            let graph = LossGraph::new(
                CayleyTable::new(sig),
                fmt32(),
                GradeMask::single(0),
                dimless(),
                layers,
                Reduce::SquaredNorm,
            )
            .unwrap();
            let m = graph.memory_profile();
            assert_eq!(m.inference_peak, depth + 2);
            assert_eq!(m.training_peak, 2 * depth + 4);
            assert_eq!(m.auxiliary_overhead, 0);
        }
    }

    #[test]
    fn set_param_checks_structure() {
        let mut graph = vector_square_graph([1.0, 2.0]);
        let sig = graph.table().signature();
        let new_w = Multivector::from_entries(
            sig,
            GradeMask::single(1),
            dimless(),
            fmt32(),
            &[(0b01, 3.0), (0b10, 4.0)],
        )
        .unwrap();
        graph.set_param(0, new_w.clone()).unwrap();
        assert_eq!(graph.params()[0], &new_w);
        let bad = Multivector::zero(sig, GradeMask::single(2), dimless(), fmt32());
        assert_eq!(
            graph.set_param(0, bad).unwrap_err(),
            AutodiffError::ParamStructure { index: 0 }
        );
        assert_eq!(
            graph.set_param(5, new_w).unwrap_err(),
            AutodiffError::ParamIndex { index: 5 }
        );
    }
}
