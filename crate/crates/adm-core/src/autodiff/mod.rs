//! Forward-mode differentiation over masked multivectors.
//!
//! A loss pipeline is a chain of typed layers ending in a scalar reduce.
//! Derivatives propagate as (primal, tangent) pairs with the same structural
//! discipline as the primal path: tangents share their primal's grade mask,
//! and each output coefficient of a dual product is accumulated in one quire
//! and rounded once. Gradients come from randomized directional derivatives;
//! updates go through a step function that refuses structural drift.

mod dual;
mod graph;
mod shadow;

pub use dual::DualMultivector;
pub use graph::{
    grade_restricted_step, Forward, GradientEstimate, Layer, LossGraph, MemoryProfile,
    NonlinKind, Reduce,
};

use thiserror::Error;

use crate::arith::ArithError;
use crate::clifford::{CliffordError, GradeMask};
use crate::units::{ChainMismatch, DimVec};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error(transparent)]
    Clifford(#[from] CliffordError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Chain(#[from] ChainMismatch),
    #[error("tangent structure does not match its primal")]
    TangentStructure,
    #[error("input mask {got} (dim {got_dim}) does not match graph input {expected} (dim {expected_dim})")]
    InputStructure {
        expected: GradeMask,
        got: GradeMask,
        expected_dim: DimVec,
        got_dim: DimVec,
    },
    #[error("expected {expected} direction multivectors, got {got}")]
    DirectionCount { expected: usize, got: usize },
    #[error("direction {index} does not match its parameter's structure")]
    DirectionStructure { index: usize },
    #[error("target mask {got} does not match pipeline output mask {expected}")]
    TargetStructure { expected: GradeMask, got: GradeMask },
    #[error("gradient mask {got} does not match weight mask {expected}")]
    GradientStructure { expected: GradeMask, got: GradeMask },
    #[error("step size must carry dimension {needed}, got {got}")]
    StepDim { needed: DimVec, got: DimVec },
    #[error("parameter index {index} out of range")]
    ParamIndex { index: usize },
    #[error("replacement for parameter {index} does not match its structure")]
    ParamStructure { index: usize },
    #[error("sample count must be positive")]
    NoSamples,
}
