//! Tapered-precision scalar arithmetic with a bounded regime, plus the quire:
//! an exact fixed-point accumulator sized so that fused dot products round
//! exactly once, at readout.
//!
//! The value format is a posit variant: sign, run-length-encoded regime whose
//! field never exceeds `r_max` bits, `es` exponent bits, and fraction. The
//! regime cap trades dynamic range for a hard bound on field widths; encoding
//! saturates to the extremal finite magnitude instead of overflowing to NaR
//! or underflowing to zero.

mod format;
mod limbs;
mod posit;
mod quire;

pub use format::{FormatError, PositFormat};
pub use posit::{ArithError, Decoded, PositValue};
pub use quire::{distributed_reduce, quire_dot, Quire};
