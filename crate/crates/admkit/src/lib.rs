//! Scenario harness around the core library: declarative scenario files, a
//! deterministic end-to-end runner that drives the rotation engine, an
//! on-disk version store, and the grade-corruption contrast experiment.
//!
//! Everything here is reproducible by construction: one seeded generator
//! feeds calibration, the observation stream, and training in a fixed order,
//! and timestamps come from an injected logical clock, so the same scenario
//! file always yields byte-identical version records.

pub mod contrast;
pub mod runner;
pub mod scenario;
pub mod store;

use thiserror::Error;

use adm_core::adapt::AdaptError;
use adm_core::arith::{ArithError, FormatError};
use adm_core::autodiff::AutodiffError;
use adm_core::clifford::CliffordError;
use adm_core::rotation::RotationError;
use adm_core::snn::SnnError;
use adm_core::units::DimError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario {location}: {reason}")]
    Invalid { location: String, reason: String },
    #[error("store {path}: {reason}")]
    Store { path: String, reason: String },
    #[error("candidate rejected: {}", violations.join("; "))]
    CandidateRejected { violations: Vec<String> },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Dim(#[from] DimError),
    #[error(transparent)]
    Clifford(#[from] CliffordError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Snn(#[from] SnnError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

impl HarnessError {
    pub fn invalid(location: &str, reason: impl Into<String>) -> Self {
        HarnessError::Invalid { location: location.into(), reason: reason.into() }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}
