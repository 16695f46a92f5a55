//! Masked multivectors: storage, products, sandwiches, and rotor checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arith::{PositFormat, PositValue, Quire};
use crate::units::DimVec;

use super::table::{blade_grade, CayleyTable, GradeMask, Signature};
use super::CliffordError;

/// A multivector whose storage is exactly the blades of its declared grades.
///
/// Off-mask coefficients do not exist: they are never stored, read, or
/// multiplied. Products allocate one quire per output blade, accumulate every
/// contributing pair exactly, and round once per coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Multivector {
    sig: Signature,
    mask: GradeMask,
    dim: DimVec,
    fmt: PositFormat,
    coeffs: BTreeMap<u8, PositValue>,
}

impl Multivector {
    pub fn zero(sig: Signature, mask: GradeMask, dim: DimVec, fmt: PositFormat) -> Self {
        let mask = mask.intersect(GradeMask::all(sig.dims()));
        let mut coeffs = BTreeMap::new();
        for blade in 0..sig.blade_count() {
            if mask.contains(blade_grade(blade)) {
                coeffs.insert(blade as u8, PositValue::zero(fmt));
            }
        }
        Multivector { sig, mask, dim, fmt, coeffs }
    }

    pub fn scalar(sig: Signature, value: PositValue, dim: DimVec) -> Self {
        let mut mv = Multivector::zero(sig, GradeMask::single(0), dim, value.format());
        mv.coeffs.insert(0, value);
        mv
    }

    pub fn from_entries(
        sig: Signature,
        mask: GradeMask,
        dim: DimVec,
        fmt: PositFormat,
        entries: &[(usize, f64)],
    ) -> Result<Self, CliffordError> {
        let mut mv = Multivector::zero(sig, mask, dim, fmt);
        for &(blade, x) in entries {
            mv.set(blade, PositValue::encode(x, fmt))?;
        }
        Ok(mv)
    }

    pub fn signature(&self) -> Signature {
        self.sig
    }

    pub fn grade_mask(&self) -> GradeMask {
        self.mask
    }

    pub fn dim(&self) -> DimVec {
        self.dim
    }

    pub fn format(&self) -> PositFormat {
        self.fmt
    }

    /// Stored coefficient, or exact zero for an off-mask blade.
    pub fn get(&self, blade: usize) -> PositValue {
        assert!(blade < self.sig.blade_count(), "blade {blade} out of range");
        self.coeffs.get(&(blade as u8)).copied().unwrap_or_else(|| PositValue::zero(self.fmt))
    }

    pub fn set(&mut self, blade: usize, value: PositValue) -> Result<(), CliffordError> {
        if blade >= self.sig.blade_count() {
            return Err(CliffordError::BladeOutOfRange { blade, sig: self.sig.to_string() });
        }
        if value.format() != self.fmt {
            return Err(CliffordError::FormatMismatch(
                value.format().descriptor(),
                self.fmt.descriptor(),
            ));
        }
        let grade = blade_grade(blade);
        if !self.mask.contains(grade) {
            return Err(CliffordError::GradeViolation { blade, grade, mask: self.mask });
        }
        self.coeffs.insert(blade as u8, value);
        Ok(())
    }

    /// Stored (blade, coefficient) pairs, in blade order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, PositValue)> + '_ {
        self.coeffs.iter().map(|(&b, &v)| (b as usize, v))
    }

    pub fn stored_blades(&self) -> Vec<usize> {
        self.coeffs.keys().map(|&b| b as usize).collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.coeffs.values().filter(|v| !v.is_zero()).count()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for v in self.coeffs.values() {
            let a = if v.is_nar() { f64::INFINITY } else { v.decode().abs() };
            if a > m {
                m = a;
            }
        }
        m
    }

    fn check_compatible(&self, rhs: &Self) -> Result<(), CliffordError> {
        if self.sig != rhs.sig {
            return Err(CliffordError::SignatureMismatch(self.sig.to_string(), rhs.sig.to_string()));
        }
        if self.fmt != rhs.fmt {
            return Err(CliffordError::FormatMismatch(self.fmt.descriptor(), rhs.fmt.descriptor()));
        }
        Ok(())
    }

    pub fn geometric_product(&self, table: &CayleyTable, rhs: &Self) -> Result<Self, CliffordError> {
        let out_mask = table.grade_infer(self.mask, rhs.mask);
        self.product_masked(table, rhs, out_mask, |_, _, _| {})
    }

    /// Like [`geometric_product`](Self::geometric_product) but records every
    /// scalar multiply it performs.
    pub fn geometric_product_traced(
        &self,
        table: &CayleyTable,
        rhs: &Self,
    ) -> Result<(Self, ProductTrace), CliffordError> {
        let mut trace = ProductTrace::default();
        let out_mask = table.grade_infer(self.mask, rhs.mask);
        let out = self.product_masked(table, rhs, out_mask, |a, b, c| {
            trace.multiplies.push((a, b, c));
        })?;
        Ok((out, trace))
    }

    /// Product with output storage restricted to `out_mask`: blades outside
    /// it are never accumulated at all.
    fn product_masked(
        &self,
        table: &CayleyTable,
        rhs: &Self,
        out_mask: GradeMask,
        mut record: impl FnMut(usize, usize, usize),
    ) -> Result<Self, CliffordError> {
        self.check_compatible(rhs)?;
        if table.signature() != self.sig {
            return Err(CliffordError::SignatureMismatch(
                table.signature().to_string(),
                self.sig.to_string(),
            ));
        }
        let mut out = Multivector::zero(self.sig, out_mask, self.dim * rhs.dim, self.fmt);
        let out_blades: Vec<u8> = out.coeffs.keys().copied().collect();
        for c in out_blades {
            let mut q = Quire::new(self.fmt);
            for (&a, &xa) in &self.coeffs {
                // a ^ b = c fixes the only partner blade for each stored a
                let b = a ^ c;
                let Some(&yb) = rhs.coeffs.get(&b) else { continue };
                let (sign, _) = table.product(a as usize, b as usize);
                if sign == 0 {
                    continue;
                }
                if sign > 0 {
                    q.add_product(xa, yb)?;
                } else {
                    q.sub_product(xa, yb)?;
                }
                record(a as usize, b as usize, c as usize);
            }
            out.coeffs.insert(c, q.to_posit());
        }
        Ok(out)
    }

    /// Reversion: grade g picks up (-1)^(g(g-1)/2), i.e. grades 2 and 3 mod 4
    /// flip sign.
    pub fn reverse(&self) -> Self {
        let mut out = self.clone();
        for (&blade, v) in &self.coeffs {
            let g = blade_grade(blade as usize) % 4;
            if g == 2 || g == 3 {
                out.coeffs.insert(blade, v.neg());
            }
        }
        out
    }

    pub fn negate(&self) -> Self {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v = v.neg();
        }
        out
    }

    /// Keep only the grades in `keep`; the result's mask shrinks accordingly.
    pub fn grade_project(&self, keep: GradeMask) -> Self {
        let mask = self.mask.intersect(keep);
        let mut out = Multivector::zero(self.sig, mask, self.dim, self.fmt);
        for (&b, &v) in &self.coeffs {
            if mask.contains(blade_grade(b as usize)) {
                out.coeffs.insert(b, v);
            }
        }
        out
    }

    /// R x R~ with output storage restricted to x's grades: a valid rotor
    /// preserves grade, so anything outside x's mask could only be rounding
    /// residue, and the type discards it structurally.
    pub fn sandwich(&self, table: &CayleyTable, x: &Multivector) -> Result<Multivector, CliffordError> {
        let t = self.geometric_product(table, x)?;
        t.product_masked(table, &self.reverse(), x.mask, |_, _, _| {})
    }

    /// How far R R~ is from the scalar 1: the largest deviation across the
    /// scalar slot and every other populated slot.
    pub fn rotor_check(&self, table: &CayleyTable, tol: f64) -> Result<RotorCheck, CliffordError> {
        let prod = self.geometric_product(table, &self.reverse())?;
        let mut residual = 0.0f64;
        for (blade, v) in prod.iter() {
            let dev = if v.is_nar() {
                f64::INFINITY
            } else if blade == 0 {
                (v.decode() - 1.0).abs()
            } else {
                v.decode().abs()
            };
            if dev > residual {
                residual = dev;
            }
        }
        Ok(RotorCheck { residual, tol, ok: residual <= tol })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, CliffordError> {
        self.check_compatible(rhs)?;
        if self.dim != rhs.dim {
            return Err(CliffordError::DimMismatch { left: self.dim, right: rhs.dim });
        }
        let mut out = Multivector::zero(self.sig, self.mask.union(rhs.mask), self.dim, self.fmt);
        let blades: Vec<u8> = out.coeffs.keys().copied().collect();
        for b in blades {
            // every blade of the union mask is stored on at least one side
            let v = match (self.coeffs.get(&b), rhs.coeffs.get(&b)) {
                (Some(&l), Some(&r)) => l.scalar_add(r)?,
                (Some(&l), None) => l,
                (None, r) => *r.expect("blade in union mask"),
            };
            out.coeffs.insert(b, v);
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, CliffordError> {
        self.add(&rhs.negate())
    }

    /// Coefficient-wise scaling by a dimensionless scalar.
    pub fn scale(&self, s: PositValue) -> Result<Self, CliffordError> {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v = v.scalar_mul(s)?;
        }
        Ok(out)
    }

    pub fn to_raw(&self) -> RawMultivector {
        RawMultivector {
            signature: self.sig,
            grade_mask: self.mask,
            dim: self.dim,
            format: self.fmt,
            coeffs: self
                .coeffs
                .iter()
                .map(|(&b, v)| RawCoeff { blade: b as usize, bits: v.bits() })
                .collect(),
        }
    }

    /// Typed elaboration: every listed blade must exist, be unique, and fall
    /// inside the declared mask. This is the only door from parsed bytes to a
    /// typed multivector.
    pub fn from_raw(raw: &RawMultivector) -> Result<Self, CliffordError> {
        let mut mv = Multivector::zero(raw.signature, raw.grade_mask, raw.dim, raw.format);
        let mut seen = vec![false; raw.signature.blade_count()];
        for c in &raw.coeffs {
            if c.blade >= raw.signature.blade_count() {
                return Err(CliffordError::BladeOutOfRange {
                    blade: c.blade,
                    sig: raw.signature.to_string(),
                });
            }
            if seen[c.blade] {
                return Err(CliffordError::DuplicateBlade { blade: c.blade });
            }
            seen[c.blade] = true;
            mv.set(c.blade, PositValue::from_bits(c.bits, raw.format))?;
        }
        Ok(mv)
    }
}

/// On-disk form: blade/bit-pattern pairs plus the typing envelope. Kept apart
/// from [`Multivector`] so a store can inspect parsed bytes before granting
/// them typed status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMultivector {
    pub signature: Signature,
    pub grade_mask: GradeMask,
    pub dim: DimVec,
    pub format: PositFormat,
    pub coeffs: Vec<RawCoeff>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCoeff {
    pub blade: usize,
    pub bits: u64,
}

/// Record of every scalar multiply a product performed.
#[derive(Debug, Default, Clone)]
pub struct ProductTrace {
    /// (left blade, right blade, output blade), one entry per multiply.
    pub multiplies: Vec<(usize, usize, usize)>,
}

impl ProductTrace {
    pub fn count(&self) -> usize {
        self.multiplies.len()
    }

    /// True when every multiply read blades inside the given storage masks.
    pub fn respects(&self, left: GradeMask, right: GradeMask) -> bool {
        self.multiplies
            .iter()
            .all(|&(a, b, _)| left.contains(blade_grade(a)) && right.contains(blade_grade(b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorCheck {
    pub residual: f64,
    pub tol: f64,
    pub ok: bool,
}
