//! Config-driven experiments on top of `bdsde-core`: TOML configuration,
//! CSV/JSON output and the `bdsde` command line.
//!
//! Exit codes of every command: 0 success, 1 a check or assertion found a
//! violation, 2 configuration or input error, 3 the solver failed to
//! converge.

pub mod commands;
pub mod config;
pub mod io;
pub mod registry;

use bdsde_core::Error as CoreError;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("output error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Io(_) => 2,
            LabError::Core(e) => match e {
                CoreError::NonFinite { .. } => 1,
                CoreError::ResolventNonConvergence { .. }
                | CoreError::ResolventAt { .. }
                | CoreError::PicardNonConvergence { .. }
                | CoreError::NotRecombinable { .. }
                | CoreError::SingularStep => 3,
                _ => 2,
            },
        }
    }
}

/// Frozen stability tolerance constant and how it was calibrated.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct StabilityFixture {
    pub c_fit: f64,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub samples: usize,
    pub family: String,
}

pub fn stability_fixture() -> StabilityFixture {
    serde_json::from_str(include_str!("../fixtures/stability_tol.json")).expect("fixture is valid JSON")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(LabError::Config("x".into()).exit_code(), 2);
        assert_eq!(LabError::Core(CoreError::InsufficientData("x".into())).exit_code(), 2);
        let picard = CoreError::PicardNonConvergence {
            iterations: 1,
            deltas: vec![1.0],
        };
        assert_eq!(LabError::Core(picard).exit_code(), 3);
    }

    #[test]
    fn fixture_loads() {
        let f = stability_fixture();
        assert!(f.c_fit >= 0.0);
        assert_eq!(f.seed, 0);
    }
}
