//! Plain-f64 mirror of a loss pipeline: the same masks, restrictions, and
//! layer semantics with double-precision coefficients. Used as an oracle for
//! derivative tests and as the reference when judging estimator convergence.

use std::collections::BTreeMap;

use crate::clifford::{blade_grade, CayleyTable, GradeMask, Multivector};

use super::graph::{nonlin_value_slope, Layer, LossGraph, NonlinKind, Reduce};
use super::AutodiffError;

#[derive(Debug, Clone)]
struct ShadowMv {
    mask: GradeMask,
    coeffs: BTreeMap<usize, f64>,
}

impl ShadowMv {
    fn from_mv(mv: &Multivector) -> Self {
        ShadowMv {
            mask: mv.grade_mask(),
            coeffs: mv.iter().map(|(b, v)| (b, v.decode())).collect(),
        }
    }

    /// Same template as `mv` with replacement coefficients in stored-blade order.
    fn from_parts(mv: &Multivector, coeffs: &[f64]) -> Self {
        ShadowMv {
            mask: mv.grade_mask(),
            coeffs: mv.stored_blades().into_iter().zip(coeffs.iter().copied()).collect(),
        }
    }

    fn product_masked(&self, table: &CayleyTable, rhs: &Self, out_mask: GradeMask) -> Self {
        let size = table.signature().blade_count();
        let mut coeffs = BTreeMap::new();
        for c in 0..size {
            if !out_mask.contains(blade_grade(c)) {
                continue;
            }
            let mut acc = 0.0f64;
            for (&a, &xa) in &self.coeffs {
                let b = a ^ c;
                let Some(&yb) = rhs.coeffs.get(&b) else { continue };
                let (sign, _) = table.product(a, b);
                if sign != 0 {
                    acc += sign as f64 * xa * yb;
                }
            }
            coeffs.insert(c, acc);
        }
        ShadowMv { mask: out_mask, coeffs }
    }

    fn reverse(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(&b, &v)| {
                let g = blade_grade(b) % 4;
                (b, if g == 2 || g == 3 { -v } else { v })
            })
            .collect();
        ShadowMv { mask: self.mask, coeffs }
    }

    fn project(&self, keep: GradeMask) -> Self {
        let mask = self.mask.intersect(keep);
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(&b, _)| mask.contains(blade_grade(b)))
            .map(|(&b, &v)| (b, v))
            .collect();
        ShadowMv { mask, coeffs }
    }

    fn nonlin(&self, kind: NonlinKind) -> Self {
        if kind == NonlinKind::Identity || !self.mask.contains(0) {
            return self.clone();
        }
        let mut out = self.clone();
        let u = out.coeffs.get(&0).copied().unwrap_or(0.0);
        out.coeffs.insert(0, nonlin_value_slope(kind, u).0);
        out
    }
}

impl LossGraph {
    fn shadow_weights(&self) -> Vec<Vec<f64>> {
        self.params()
            .iter()
            .map(|w| w.iter().map(|(_, v)| v.decode()).collect())
            .collect()
    }

    fn shadow_eval(&self, x0: &ShadowMv, weights: &[Vec<f64>]) -> f64 {
        let table = &self.table;
        let mut cur = x0.clone();
        let mut pi = 0;
        for layer in &self.layers {
            cur = match layer {
                Layer::GeometricProduct { weight } => {
                    let w = ShadowMv::from_parts(weight, &weights[pi]);
                    pi += 1;
                    let out_mask = table.grade_infer(w.mask, cur.mask);
                    w.product_masked(table, &cur, out_mask)
                }
                Layer::Sandwich { rotor } => {
                    let r = ShadowMv::from_parts(rotor, &weights[pi]);
                    pi += 1;
                    let t = r.product_masked(table, &cur, table.grade_infer(r.mask, cur.mask));
                    t.product_masked(table, &r.reverse(), cur.mask)
                }
                Layer::GradeProject { keep } => cur.project(*keep),
                Layer::Nonlinearity { kind } => cur.nonlin(*kind),
            };
        }
        match &self.reduce {
            Reduce::SquaredNorm => 0.5 * cur.coeffs.values().map(|c| c * c).sum::<f64>(),
            Reduce::SquaredError { target } => {
                0.5 * cur
                    .coeffs
                    .iter()
                    .map(|(&b, &c)| {
                        let t = target.get(b).decode();
                        (c - t) * (c - t)
                    })
                    .sum::<f64>()
            }
        }
    }

    /// Loss of the f64 mirror at the current weights.
    pub fn shadow_loss(&self, x: &Multivector) -> Result<f64, AutodiffError> {
        self.check_input(x)?;
        Ok(self.shadow_eval(&ShadowMv::from_mv(x), &self.shadow_weights()))
    }

    /// Central-difference gradient of the shadow loss in every stored weight
    /// coefficient: one (blade, dL/dw) list per parameter.
    pub fn shadow_gradient(
        &self,
        x: &Multivector,
        h: f64,
    ) -> Result<Vec<Vec<(usize, f64)>>, AutodiffError> {
        self.check_input(x)?;
        let base = self.shadow_weights();
        let x0 = ShadowMv::from_mv(x);
        let mut out = Vec::new();
        for (pi, w) in self.params().iter().enumerate() {
            let mut g = Vec::new();
            for (ci, blade) in w.stored_blades().into_iter().enumerate() {
                let mut plus = base.clone();
                plus[pi][ci] += h;
                let mut minus = base.clone();
                minus[pi][ci] -= h;
                let d = (self.shadow_eval(&x0, &plus) - self.shadow_eval(&x0, &minus)) / (2.0 * h);
                g.push((blade, d));
            }
            out.push(g);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{PositFormat, PositValue};
    use crate::clifford::Signature;
    use crate::units::DimVec;

    fn fmt32() -> PositFormat {
        PositFormat::new(32, 2, 6).unwrap()
    }

    fn graph_with_nonlin(kind: NonlinKind) -> (LossGraph, Multivector) {
        let sig = Signature::new(2, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let weight = Multivector::from_entries(
            sig,
            GradeMask::single(1),
            DimVec::dimensionless(),
            fmt32(),
            &[(0b01, 0.5), (0b10, -0.25)],
        )
        .unwrap();
        let graph = LossGraph::new(
            table,
            fmt32(),
            GradeMask::single(1),
            DimVec::dimensionless(),
            vec![
                Layer::GeometricProduct { weight },
                Layer::GradeProject { keep: GradeMask::single(0) },
                Layer::Nonlinearity { kind },
            ],
            Reduce::SquaredNorm,
        )
        .unwrap();
        let x = Multivector::from_entries(
            sig,
            GradeMask::single(1),
            DimVec::dimensionless(),
            fmt32(),
            &[(0b01, 0.75), (0b10, 0.5)],
        )
        .unwrap();
        (graph, x)
    }

    #[test]
    fn shadow_loss_tracks_typed_loss() {
        for kind in [NonlinKind::Identity, NonlinKind::Tanh, NonlinKind::Softplus] {
            let (graph, x) = graph_with_nonlin(kind);
            let typed = graph.forward(&x).unwrap().loss.decode();
            let shadow = graph.shadow_loss(&x).unwrap();
            assert!((typed - shadow).abs() < 1e-6, "{kind:?}: {typed} vs {shadow}");
        }
    }

    #[test]
    fn dual_derivative_matches_finite_differences() {
        for kind in [NonlinKind::Identity, NonlinKind::Tanh, NonlinKind::Softplus] {
            let (graph, x) = graph_with_nonlin(kind);
            let fd = graph.shadow_gradient(&x, 1e-6).unwrap();
            // probe each coordinate with a unit direction
            let w = graph.params()[0].clone();
            for &(blade, g) in &fd[0] {
                let mut dir = Multivector::zero(w.signature(), w.grade_mask(), w.dim(), w.format());
                dir.set(blade, PositValue::encode(1.0, fmt32())).unwrap();
                let jvp = graph.directional_derivative(&x, &[dir]).unwrap().decode();
                assert!((jvp - g).abs() < 1e-4, "{kind:?} blade {blade}: {jvp} vs {g}");
            }
        }
    }
}
