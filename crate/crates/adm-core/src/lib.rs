//! Core library for grade-typed geometric learning on an exact accumulation
//! substrate, with dimensional annotations, spiking dynamics, distribution
//! shift detection, and certified model rotation.
//!
//! Module map:
//! - [`arith`]: bounded-regime tapered floats (posits) and the exact quire accumulator
//! - [`units`]: exact rational dimension vectors over the SI base dimensions
//! - [`clifford`]: grade-typed multivectors over Cl(p,q,r) with quire-backed products
//! - [`autodiff`]: forward-mode duals, loss graphs, and forward-gradient training
//! - [`snn`]: leaky integrate-and-fire neurons, STDP, and spike encodings
//! - [`adapt`]: histogram KL shift detection and prior distillation
//! - [`rotation`]: structural certificates, signed version chains, warm rotation

pub mod adapt;
pub mod arith;
pub mod autodiff;
pub mod clifford;
pub mod rotation;
pub mod snn;
pub mod units;
