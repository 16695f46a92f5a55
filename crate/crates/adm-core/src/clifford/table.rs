//! Signatures, grade masks, and the precomputed blade product table.
//!
//! A blade is a bitmask over basis vectors: bit i set means generator i is a
//! factor, and the grade is the popcount. Generators are ordered degenerate
//! first: index i squares to 0 for i < r, to +1 for the next p indices, and
//! to -1 for the last q. The product of two blades is then a single table
//! entry: output blade `a ^ b` and a sign in {-1, 0, +1} combining swap
//! parity with the squares of shared generators.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliffordError;

/// Algebra signature Cl(p, q, r): p positive, q negative, r degenerate
/// generators, with p + q + r <= 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSignature")]
pub struct Signature {
    p: u8,
    q: u8,
    r: u8,
}

#[derive(Deserialize)]
struct RawSignature {
    p: u8,
    q: u8,
    r: u8,
}

impl TryFrom<RawSignature> for Signature {
    type Error = CliffordError;
    fn try_from(raw: RawSignature) -> Result<Self, CliffordError> {
        Signature::new(raw.p as u32, raw.q as u32, raw.r as u32)
    }
}

impl Signature {
    pub fn new(p: u32, q: u32, r: u32) -> Result<Self, CliffordError> {
        let n = p + q + r;
        if n > 5 {
            return Err(CliffordError::TooManyDims { p, q, r, n });
        }
        Ok(Signature { p: p as u8, q: q as u8, r: r as u8 })
    }

    pub fn dims(&self) -> u32 {
        (self.p + self.q + self.r) as u32
    }

    pub fn blade_count(&self) -> usize {
        1 << self.dims()
    }

    /// Square of generator i: 0 while i < r, then +1 for p of them, then -1.
    pub fn basis_square(&self, i: u32) -> i8 {
        debug_assert!(i < self.dims());
        if i < self.r as u32 {
            0
        } else if i < (self.r + self.p) as u32 {
            1
        } else {
            -1
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cl({},{},{})", self.p, self.q, self.r)
    }
}

pub fn blade_grade(blade: usize) -> u32 {
    blade.count_ones()
}

/// Set of grades a multivector is allowed to populate, one bit per grade.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradeMask(u8);

impl GradeMask {
    pub fn empty() -> Self {
        GradeMask(0)
    }

    /// Every grade 0..=n.
    pub fn all(n_dims: u32) -> Self {
        GradeMask(((1u16 << (n_dims + 1)) - 1) as u8)
    }

    pub fn from_grades(grades: &[u32]) -> Self {
        let mut m = GradeMask(0);
        for &g in grades {
            m.insert(g);
        }
        m
    }

    pub fn single(grade: u32) -> Self {
        GradeMask(1 << grade)
    }

    pub fn insert(&mut self, grade: u32) {
        debug_assert!(grade <= 5);
        self.0 |= 1 << grade;
    }

    pub fn contains(&self, grade: u32) -> bool {
        grade <= 5 && self.0 & (1 << grade) != 0
    }

    pub fn union(&self, other: GradeMask) -> GradeMask {
        GradeMask(self.0 | other.0)
    }

    pub fn intersect(&self, other: GradeMask) -> GradeMask {
        GradeMask(self.0 & other.0)
    }

    pub fn is_subset(&self, other: GradeMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn grades(&self) -> Vec<u32> {
        (0..=5).filter(|&g| self.contains(g)).collect()
    }

    pub fn bits(&self) -> u8 {
        self.0
    }
}

impl fmt::Display for GradeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, g) in self.grades().into_iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{g}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for GradeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Dense product table for one signature: `(sign, blade)` for every ordered
/// pair of blades.
#[derive(Debug, Clone)]
pub struct CayleyTable {
    sig: Signature,
    entries: Vec<(i8, u8)>,
}

impl CayleyTable {
    pub fn new(sig: Signature) -> Self {
        let size = sig.blade_count();
        let mut entries = Vec::with_capacity(size * size);
        for a in 0..size {
            for b in 0..size {
                entries.push(blade_product(sig, a, b));
            }
        }
        CayleyTable { sig, entries }
    }

    pub fn signature(&self) -> Signature {
        self.sig
    }

    pub fn product(&self, a: usize, b: usize) -> (i8, usize) {
        let size = self.sig.blade_count();
        debug_assert!(a < size && b < size);
        let (sign, blade) = self.entries[a * size + b];
        (sign, blade as usize)
    }

    /// Grades the product of two masked multivectors can reach, read off the
    /// concrete table: only pairs with nonzero sign contribute.
    pub fn grade_infer(&self, left: GradeMask, right: GradeMask) -> GradeMask {
        let mut out = GradeMask::empty();
        let size = self.sig.blade_count();
        for a in 0..size {
            if !left.contains(blade_grade(a)) {
                continue;
            }
            for b in 0..size {
                if !right.contains(blade_grade(b)) {
                    continue;
                }
                let (sign, c) = self.product(a, b);
                if sign != 0 {
                    out.insert(blade_grade(c));
                }
            }
        }
        out
    }

    /// Fraction of the full blade cube (2^n input pairs squared times 2^n
    /// outputs) that a masked product never touches. Each contributing input
    /// pair lights exactly one output blade, so the active triple count is
    /// the number of in-mask pairs with nonzero sign.
    pub fn sparsity_report(&self, left: GradeMask, right: GradeMask) -> SparsityReport {
        let size = self.sig.blade_count();
        let mut active = 0usize;
        let mut by_grade_pair: Vec<GradePairSlice> = Vec::new();
        for ga in left.grades() {
            for gb in right.grades() {
                let mut slice = 0usize;
                for a in 0..size {
                    if blade_grade(a) != ga {
                        continue;
                    }
                    for b in 0..size {
                        if blade_grade(b) != gb {
                            continue;
                        }
                        if self.product(a, b).0 != 0 {
                            slice += 1;
                        }
                    }
                }
                active += slice;
                by_grade_pair.push(GradePairSlice { left_grade: ga, right_grade: gb, active: slice });
            }
        }
        let cube = size * size * size;
        SparsityReport {
            signature: self.sig.to_string(),
            left_mask: left,
            right_mask: right,
            cube,
            active_triples: active,
            sparsity: 1.0 - active as f64 / cube as f64,
            by_grade_pair,
        }
    }

    /// SHA-256 over the signature label and the entry list; certificates pin
    /// this so two parties can compare the algebra they compiled.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.sig.to_string().as_bytes());
        for &(sign, blade) in &self.entries {
            h.update([sign as u8, blade]);
        }
        hex::encode(h.finalize())
    }
}

fn blade_product(sig: Signature, a: usize, b: usize) -> (i8, u8) {
    let mut sign = reorder_sign(a, b);
    let mut common = a & b;
    while common != 0 {
        let i = common.trailing_zeros();
        sign *= sig.basis_square(i);
        common &= common - 1;
    }
    (sign, (a ^ b) as u8)
}

/// Parity of the transpositions that sort the concatenation of two blades:
/// each generator j of `b` must move left past every generator of `a` with a
/// higher index, so shift `a` down and count overlaps.
fn reorder_sign(a: usize, b: usize) -> i8 {
    let mut swaps = 0u32;
    let mut x = a >> 1;
    while x != 0 {
        swaps += (x & b).count_ones();
        x >>= 1;
    }
    if swaps % 2 == 0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub signature: String,
    pub left_mask: GradeMask,
    pub right_mask: GradeMask,
    pub cube: usize,
    pub active_triples: usize,
    pub sparsity: f64,
    pub by_grade_pair: Vec<GradePairSlice>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradePairSlice {
    pub left_grade: u32,
    pub right_grade: u32,
    pub active: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclid3() -> CayleyTable {
        CayleyTable::new(Signature::new(3, 0, 0).unwrap())
    }

    #[test]
    fn generator_squares_follow_signature() {
        let sig = Signature::new(3, 0, 1).unwrap();
        assert_eq!(sig.basis_square(0), 0);
        for i in 1..4 {
            assert_eq!(sig.basis_square(i), 1);
        }
        let sig = Signature::new(1, 2, 0).unwrap();
        assert_eq!(sig.basis_square(0), 1);
        assert_eq!(sig.basis_square(1), -1);
        assert_eq!(sig.basis_square(2), -1);
    }

    #[test]
    fn rejects_more_than_five_generators() {
        assert!(matches!(
            Signature::new(4, 1, 1),
            Err(CliffordError::TooManyDims { n: 6, .. })
        ));
        assert!(Signature::new(3, 1, 1).is_ok());
    }

    #[test]
    fn vector_products_anticommute() {
        let t = euclid3();
        // e1 e2 = e12, e2 e1 = -e12
        assert_eq!(t.product(0b001, 0b010), (1, 0b011));
        assert_eq!(t.product(0b010, 0b001), (-1, 0b011));
        // e1 e1 = +1
        assert_eq!(t.product(0b001, 0b001), (1, 0));
        // e12 e12 = -1
        assert_eq!(t.product(0b011, 0b011), (-1, 0));
        // e12 e1 = -e2, e1 e12 = e2
        assert_eq!(t.product(0b011, 0b001), (-1, 0b010));
        assert_eq!(t.product(0b001, 0b011), (1, 0b010));
    }

    #[test]
    fn degenerate_generator_annihilates() {
        let t = CayleyTable::new(Signature::new(3, 0, 1).unwrap());
        // e0 e0 = 0; blades sharing e0 multiply to zero
        assert_eq!(t.product(0b0001, 0b0001).0, 0);
        assert_eq!(t.product(0b0011, 0b0001).0, 0);
        // but e0 against a disjoint blade survives
        assert_eq!(t.product(0b0001, 0b0010), (1, 0b0011));
    }

    #[test]
    fn negative_generator_squares_to_minus_one() {
        let t = CayleyTable::new(Signature::new(1, 1, 0).unwrap());
        assert_eq!(t.product(0b01, 0b01), (1, 0)); // e+ e+
        assert_eq!(t.product(0b10, 0b10), (-1, 0)); // e- e-
    }

    #[test]
    fn grade_inference_reads_the_table() {
        let t = euclid3();
        let vec = GradeMask::single(1);
        assert_eq!(t.grade_infer(vec, vec), GradeMask::from_grades(&[0, 2]));
        let t2 = CayleyTable::new(Signature::new(2, 0, 0).unwrap());
        let biv = GradeMask::single(2);
        assert_eq!(t2.grade_infer(biv, biv), GradeMask::single(0));
        // rotor (grades {0,2}) times vector stays odd
        let rotor = GradeMask::from_grades(&[0, 2]);
        assert_eq!(t.grade_infer(rotor, vec), GradeMask::from_grades(&[1, 3]));
    }

    #[test]
    fn sparsity_of_untyped_products() {
        // plane PGA: 16 of 64 pairs share the degenerate e0
        let t = CayleyTable::new(Signature::new(2, 0, 1).unwrap());
        let full = GradeMask::all(3);
        let rep = t.sparsity_report(full, full);
        assert_eq!(rep.active_triples, 48);
        assert_eq!(rep.cube, 512);
        assert_eq!(rep.sparsity, 0.90625);

        let t = CayleyTable::new(Signature::new(3, 0, 1).unwrap());
        let full = GradeMask::all(4);
        let rep = t.sparsity_report(full, full);
        assert_eq!(rep.active_triples, 192);
        assert_eq!(rep.sparsity, 0.953125);

        // no degenerate generator: every pair is active
        let t = CayleyTable::new(Signature::new(1, 0, 0).unwrap());
        let rep = t.sparsity_report(GradeMask::all(1), GradeMask::all(1));
        assert_eq!(rep.active_triples, 4);
        assert_eq!(rep.sparsity, 0.5);
    }

    #[test]
    fn masked_sparsity_shrinks_the_active_set() {
        let t = euclid3();
        let rep = t.sparsity_report(GradeMask::single(1), GradeMask::single(1));
        assert_eq!(rep.active_triples, 9);
        assert_eq!(rep.by_grade_pair.len(), 1);
        assert_eq!(rep.by_grade_pair[0].active, 9);
        let full = t.sparsity_report(GradeMask::all(3), GradeMask::all(3));
        assert_eq!(full.active_triples, 64);
        assert!(rep.sparsity > full.sparsity);
    }

    #[test]
    fn fingerprint_distinguishes_signatures() {
        let a = CayleyTable::new(Signature::new(3, 0, 0).unwrap()).fingerprint();
        let b = CayleyTable::new(Signature::new(2, 1, 0).unwrap()).fingerprint();
        let a2 = CayleyTable::new(Signature::new(3, 0, 0).unwrap()).fingerprint();
        assert_eq!(a, a2);
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn grade_mask_display() {
        assert_eq!(GradeMask::from_grades(&[0, 2]).to_string(), "{0,2}");
        assert_eq!(GradeMask::empty().to_string(), "{}");
        assert_eq!(GradeMask::all(2).to_string(), "{0,1,2}");
    }
}
