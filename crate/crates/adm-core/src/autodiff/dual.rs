//! (primal, tangent) pairs propagated through geometric products.

use crate::arith::Quire;
use crate::clifford::{blade_grade, CayleyTable, CliffordError, GradeMask, Multivector};

use super::AutodiffError;

/// A multivector together with a perturbation moving with it.
///
/// Both halves share signature, grade mask, dimension, and format, so
/// structural absence in the primal is structural absence in the tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMultivector {
    primal: Multivector,
    tangent: Multivector,
}

impl DualMultivector {
    pub fn new(primal: Multivector, tangent: Multivector) -> Result<Self, AutodiffError> {
        if primal.signature() != tangent.signature()
            || primal.grade_mask() != tangent.grade_mask()
            || primal.format() != tangent.format()
            || primal.dim() != tangent.dim()
        {
            return Err(AutodiffError::TangentStructure);
        }
        Ok(DualMultivector { primal, tangent })
    }

    /// A constant: zero tangent.
    pub fn constant(primal: Multivector) -> Self {
        let tangent = Multivector::zero(
            primal.signature(),
            primal.grade_mask(),
            primal.dim(),
            primal.format(),
        );
        DualMultivector { primal, tangent }
    }

    pub fn primal(&self) -> &Multivector {
        &self.primal
    }

    pub fn tangent(&self) -> &Multivector {
        &self.tangent
    }

    pub fn reverse(&self) -> Self {
        DualMultivector { primal: self.primal.reverse(), tangent: self.tangent.reverse() }
    }

    pub fn grade_project(&self, keep: GradeMask) -> Self {
        DualMultivector {
            primal: self.primal.grade_project(keep),
            tangent: self.tangent.grade_project(keep),
        }
    }

    pub fn geometric_product(&self, table: &CayleyTable, rhs: &Self) -> Result<Self, AutodiffError> {
        let out_mask = table.grade_infer(self.primal.grade_mask(), rhs.primal.grade_mask());
        self.product_masked(table, rhs, out_mask)
    }

    /// Product rule with fused accumulation: for each output blade the
    /// tangent quire gathers both a'b and ab' contributions, so the tangent
    /// rounds once, exactly like the primal.
    pub(crate) fn product_masked(
        &self,
        table: &CayleyTable,
        rhs: &Self,
        out_mask: GradeMask,
    ) -> Result<Self, AutodiffError> {
        let sig = self.primal.signature();
        let fmt = self.primal.format();
        if rhs.primal.signature() != sig || table.signature() != sig {
            return Err(CliffordError::SignatureMismatch(
                sig.to_string(),
                rhs.primal.signature().to_string(),
            )
            .into());
        }
        if rhs.primal.format() != fmt {
            return Err(CliffordError::FormatMismatch(
                fmt.descriptor(),
                rhs.primal.format().descriptor(),
            )
            .into());
        }
        let dim = self.primal.dim() * rhs.primal.dim();
        let mut primal = Multivector::zero(sig, out_mask, dim, fmt);
        let mut tangent = Multivector::zero(sig, out_mask, dim, fmt);
        let rhs_mask = rhs.primal.grade_mask();
        for c in primal.stored_blades() {
            let mut qp = Quire::new(fmt);
            let mut qt = Quire::new(fmt);
            for (a, pa) in self.primal.iter() {
                let b = a ^ c;
                if !rhs_mask.contains(blade_grade(b)) {
                    continue; // structurally absent on the right
                }
                let (sign, _) = table.product(a, b);
                if sign == 0 {
                    continue;
                }
                let pb = rhs.primal.get(b);
                let ta = self.tangent.get(a);
                let tb = rhs.tangent.get(b);
                if sign > 0 {
                    qp.add_product(pa, pb)?;
                    qt.add_product(ta, pb)?;
                    qt.add_product(pa, tb)?;
                } else {
                    qp.sub_product(pa, pb)?;
                    qt.sub_product(ta, pb)?;
                    qt.sub_product(pa, tb)?;
                }
            }
            primal.set(c, qp.to_posit())?;
            tangent.set(c, qt.to_posit())?;
        }
        Ok(DualMultivector { primal, tangent })
    }

    /// Dual sandwich R x R~, output restricted to x's grades; the product
    /// rule threads through both factors, so the tangent carries
    /// R'xR~ + Rx'R~ + RxR~'.
    pub fn sandwich(&self, table: &CayleyTable, x: &Self) -> Result<Self, AutodiffError> {
        let t = self.geometric_product(table, x)?;
        t.product_masked(table, &self.reverse(), x.primal.grade_mask())
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

    #[test]
    fn product_rule_on_scalars() {
        // d(uv) = u'v + uv' with u=2 (u'=1), v=3 (v'=5): primal 6, tangent 13
        let sig = Signature::new(1, 0, 0).unwrap();
        let table = CayleyTable::new(sig);
        let d = DimVec::dimensionless();
        let sc = |x: f64| Multivector::scalar(sig, PositValue::encode(x, fmt32()), d);
        let u = DualMultivector::new(sc(2.0), sc(1.0)).unwrap();
        let v = DualMultivector::new(sc(3.0), sc(5.0)).unwrap();
        let uv = u.geometric_product(&table, &v).unwrap();
        assert_eq!(uv.primal().get(0).decode(), 6.0);
        assert_eq!(uv.tangent().get(0).decode(), 13.0);
    }

    #[test]
    fn constant_has_zero_tangent() {
        let sig = Signature::new(2, 0, 0).unwrap();
        let x = Multivector::from_entries(
            sig,
            GradeMask::single(1),
            DimVec::dimensionless(),
            fmt32(),
            &[(1, 4.0), (2, -2.0)],
        )
        .unwrap();
        let d = DualMultivector::constant(x.clone());
        assert_eq!(d.primal(), &x);
        assert_eq!(d.tangent().nonzero_count(), 0);
    }

    #[test]
    fn tangent_must_mirror_primal_structure() {
        let sig = Signature::new(2, 0, 0).unwrap();
        let d = DimVec::dimensionless();
        let vec1 = Multivector::zero(sig, GradeMask::single(1), d, fmt32());
        let biv = Multivector::zero(sig, GradeMask::single(2), d, fmt32());
        assert_eq!(
            DualMultivector::new(vec1, biv).unwrap_err(),
            AutodiffError::TangentStructure
        );
    }
}
