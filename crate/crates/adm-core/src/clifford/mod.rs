//! Grade-typed Clifford algebra over bounded-regime scalars.
//!
//! A multivector declares up front which grades it may populate; everything
//! else is structurally absent, not merely zero. Products consult a
//! precomputed blade table, accumulate each output coefficient in one quire,
//! and round once per coefficient.

mod multivector;
mod table;

pub use multivector::{Multivector, ProductTrace, RawCoeff, RawMultivector, RotorCheck};
pub use table::{blade_grade, CayleyTable, GradeMask, GradePairSlice, Signature, SparsityReport};

use thiserror::Error;

use crate::arith::ArithError;
use crate::units::DimVec;

#[derive(Debug, Error, PartialEq)]
pub enum CliffordError {
    #[error("Cl({p},{q},{r}) has {n} generators; at most 5 supported")]
    TooManyDims { p: u32, q: u32, r: u32, n: u32 },
    #[error("blade {blade} out of range for {sig}")]
    BladeOutOfRange { blade: usize, sig: String },
    #[error("blade {blade} has grade {grade}, outside stored mask {mask}")]
    GradeViolation { blade: usize, grade: u32, mask: GradeMask },
    #[error("blade {blade} listed twice")]
    DuplicateBlade { blade: usize },
    #[error("signature mismatch: {0} vs {1}")]
    SignatureMismatch(String, String),
    #[error("scalar format mismatch: {0} vs {1}")]
    FormatMismatch(String, String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: DimVec, right: DimVec },
    #[error(transparent)]
    Arith(#[from] ArithError),
}
