//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [model]
//! name = "linear"          # registry name, see `registry`
//! a = 1.0
//! terminal = { kind = "constant", value = 1.0 }
//!
//! [lattice]
//! T = 1.0
//! N = 8                    # or N_list = [8, 16, 32, 64]
//! dW = 1
//! dB = 1
//! layout = "paths"         # or "recombining"
//!
//! [solver]
//! picard_tol = 1e-10
//! picard_max = 200
//!
//! [run]
//! seed = 0
//! out = "out"
//! ```
//!
//! Unknown keys are rejected so that a typo cannot silently fall back to a
//! default.

use std::path::{Path, PathBuf};

use bdsde_core::coefficients::B2Constants;
use bdsde_core::galerkin::QuadratureKind;
use bdsde_core::lattice::{Layout, ScenarioLattice};
use bdsde_core::models::Terminal;
use bdsde_core::resolvent::{ResolventConfig, ResolventMethod};
use bdsde_core::solver::{RescalePolicy, SolverConfig};
use serde::Deserialize;

use crate::LabError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub run: RunConfig,
}

fn one() -> f64 {
    1.0
}

fn four() -> f64 {
    4.0
}

fn four_modes() -> usize {
    4
}

fn constant_one() -> Terminal {
    Terminal::Constant { value: 1.0 }
}

fn constant_zero() -> Terminal {
    Terminal::Constant { value: 0.0 }
}

fn unit_sine() -> Terminal {
    Terminal::Sine {
        amplitude: 1.0,
        frequency: 1.0,
    }
}

/// The model block: a registry name plus that entry's parameters.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `F = J = 0`.
    Zero {
        #[serde(default = "constant_zero")]
        terminal: Terminal,
    },
    /// `F = J = 0`, `G = W_T`.
    Martingale {},
    /// `F = 0`, `J ≡ c`, `G ≡ g0`.
    BackwardNoise {
        #[serde(default = "one")]
        c: f64,
        #[serde(default)]
        g0: f64,
    },
    /// `F = a·u + γ·z`, `J = j0 + l·u`.
    Linear {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        gamma: f64,
        #[serde(default)]
        l: f64,
        #[serde(default)]
        j0: f64,
        #[serde(default = "constant_one")]
        terminal: Terminal,
    },
    /// `F = −u³`, `J = j0 + l·u`.
    Cubic {
        #[serde(default)]
        l: f64,
        #[serde(default)]
        j0: f64,
        #[serde(default = "unit_sine")]
        terminal: Terminal,
    },
    /// `F = +u³`, a deliberate monotonicity violator.
    CubicBad {},
    /// Galerkin projection of `−u|u|^{r−2}`.
    PowerDrift {
        #[serde(default = "four")]
        r: f64,
        #[serde(default = "four_modes")]
        modes: usize,
    },
    /// Galerkin projection of the r-Laplacian.
    PLaplacian {
        #[serde(default = "four")]
        r: f64,
        #[serde(default = "four_modes")]
        modes: usize,
    },
    /// Quasi-linear SPDE on `(0, 1)` with registry coefficient entries.
    Bdspde(Box<BdspdeConfig>),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Zero { .. } => "zero",
            ModelConfig::Martingale {} => "martingale",
            ModelConfig::BackwardNoise { .. } => "backward_noise",
            ModelConfig::Linear { .. } => "linear",
            ModelConfig::Cubic { .. } => "cubic",
            ModelConfig::CubicBad {} => "cubic_bad",
            ModelConfig::PowerDrift { .. } => "power_drift",
            ModelConfig::PLaplacian { .. } => "p_laplacian",
            ModelConfig::Bdspde(_) => "bdspde",
        }
    }
}

fn parabola() -> String {
    "parabola".into()
}

fn zero_entry() -> String {
    "zero".into()
}

fn default_diffusion() -> String {
    "constant:0.05".into()
}

fn zero_coefficient() -> String {
    "constant:0".into()
}

fn zero_coefficients() -> Vec<String> {
    vec![zero_coefficient()]
}

fn zero_entries() -> Vec<String> {
    vec![zero_entry()]
}

/// Coefficients are registry strings such as `"constant:1.0"` or
/// `"affine:0.5,0.2"`; `sigma` and `varsigma_coef` hold one entry per
/// W-component, `h` one per B-component.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdspdeConfig {
    #[serde(default = "four_modes")]
    pub modes: usize,
    #[serde(default)]
    pub quadrature: QuadratureKind,
    /// Quadrature size; defaults to `max(64, 8·modes)`.
    pub points: Option<usize>,
    #[serde(default = "default_diffusion")]
    pub a: String,
    #[serde(default = "zero_coefficients")]
    pub sigma: Vec<String>,
    #[serde(default = "zero_coefficient")]
    pub b: String,
    #[serde(default = "zero_coefficient")]
    pub c: String,
    #[serde(default = "zero_coefficients")]
    pub varsigma_coef: Vec<String>,
    #[serde(default = "zero_entry")]
    pub f: String,
    #[serde(default = "zero_entry")]
    pub g: String,
    #[serde(default = "zero_entries")]
    pub h: Vec<String>,
    #[serde(default = "parabola")]
    pub terminal: String,
    #[serde(default)]
    pub terminal_noise: f64,
    /// Declared ellipticity constants; enables the B2 check.
    pub b2: Option<B2Constants>,
}

fn unit() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: Option<usize>,
    #[serde(rename = "N_list")]
    pub steps_list: Option<Vec<usize>>,
    #[serde(rename = "dW", default = "unit")]
    pub dw: usize,
    #[serde(rename = "dB", default = "unit")]
    pub db: usize,
    #[serde(default)]
    pub layout: Layout,
    /// Entry cap for a single field; defaults to the core limit.
    pub cap: Option<usize>,
}

impl LatticeConfig {
    fn validate(&self) -> Result<(), LabError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(LabError::Config(format!("lattice.T must be a positive number, got {}", self.horizon)));
        }
        if self.steps.is_none() && self.steps_list.is_none() {
            return Err(LabError::Config("lattice needs N or N_list".into()));
        }
        if self.steps == Some(0) || self.steps_list.iter().flatten().any(|&n| n == 0) {
            return Err(LabError::Config("step counts must be at least 1".into()));
        }
        if self.dw == 0 || self.db == 0 {
            return Err(LabError::Config("lattice.dW and lattice.dB must be at least 1".into()));
        }
        Ok(())
    }

    /// `N`, or the single entry of `N_list`.
    pub fn single_steps(&self) -> Result<usize, LabError> {
        match (self.steps, self.steps_list.as_deref()) {
            (Some(n), _) => Ok(n),
            (None, Some([n])) => Ok(*n),
            _ => Err(LabError::Config("this command needs a single step count: set lattice.N".into())),
        }
    }

    /// `N_list`, or `[N]`.
    pub fn all_steps(&self) -> Vec<usize> {
        match (&self.steps_list, self.steps) {
            (Some(list), _) => list.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => Vec::new(),
        }
    }

    pub fn build(&self, steps: usize) -> Result<ScenarioLattice, LabError> {
        let mut b = ScenarioLattice::builder(self.horizon, steps, self.dw, self.db).layout(self.layout);
        if let Some(cap) = self.cap {
            b = b.cap(cap);
        }
        Ok(b.build()?)
    }
}

/// Solver settings; unset fields keep the core defaults.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub picard_tol: Option<f64>,
    pub picard_max: Option<usize>,
    pub record_iterates: Option<bool>,
    pub rescale: Option<RescalePolicy>,
    pub recombination_tol: Option<f64>,
    pub resolvent_tol: Option<f64>,
    pub resolvent_max_iter: Option<usize>,
    pub resolvent_method: Option<ResolventMethod>,
}

impl SolverBlock {
    pub fn to_config(&self) -> Result<SolverConfig, LabError> {
        let d = SolverConfig::default();
        let rd = ResolventConfig::default();
        let cfg = SolverConfig {
            picard_tol: self.picard_tol.unwrap_or(d.picard_tol),
            picard_max: self.picard_max.unwrap_or(d.picard_max),
            record_iterates: self.record_iterates.unwrap_or(d.record_iterates),
            rescale: self.rescale.unwrap_or(d.rescale),
            recombination_tol: self.recombination_tol.unwrap_or(d.recombination_tol),
            resolvent: ResolventConfig {
                tol: self.resolvent_tol.unwrap_or(rd.tol),
                max_iter: self.resolvent_max_iter.unwrap_or(rd.max_iter),
                method: self.resolvent_method.unwrap_or(rd.method),
                ..rd
            },
        };
        cfg.validate()?;
        cfg.resolvent.validate()?;
        Ok(cfg)
    }
}

/// How `cmd_converge` obtains the reference `u_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Closed form when the model has one, else a fine run.
    #[default]
    Auto,
    ClosedForm,
    /// Law of `u_0` from a run with `reference_N` steps.
    Fine,
}

fn default_trials() -> usize {
    10_000
}

fn default_threshold() -> f64 {
    bdsde_core::coefficients::VIOLATION_THRESHOLD
}

fn default_reference_steps() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Assumption ids for `check` (`A1`..`A6`, `B2`, `J_z`); all applicable
    /// ones when unset.
    pub assumptions: Option<Vec<String>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub reference: ReferenceKind,
    #[serde(rename = "reference_N", default = "default_reference_steps")]
    pub reference_steps: usize,
    /// Second terminal value for `stability` (scalar models).
    pub terminal_prime: Option<Terminal>,
    /// `G′ = terminal_prime_scale · G` when `terminal_prime` is unset.
    #[serde(default)]
    pub terminal_prime_scale: f64,
    /// Overrides the frozen stability tolerance constant.
    pub tol_const: Option<f64>,
    /// With an `N_list`, `energy` asserts this decay order of the
    /// expectation-form residual.
    pub min_decay_order: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("every run field has a default")
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), LabError> {
        if self.trials == 0 {
            return Err(LabError::Config("run.trials must be at least 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(LabError::Config(format!("run.radius must be positive, got {}", self.radius)));
        }
        if !(self.threshold >= 0.0) {
            return Err(LabError::Config(format!("run.threshold must be >= 0, got {}", self.threshold)));
        }
        if self.reference_steps == 0 {
            return Err(LabError::Config("run.reference_N must be at least 1".into()));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.lattice.validate()?;
        cfg.run.validate()?;
        cfg.solver.to_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            LabError::Config(msg) => LabError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse("[model]\nname = \"martingale\"\n[lattice]\nT = 1.0\nN = 4\n").unwrap();
        assert_eq!(cfg.model, ModelConfig::Martingale {});
        assert_eq!(cfg.lattice.dw, 1);
        assert_eq!(cfg.lattice.layout, Layout::Paths);
        assert_eq!(cfg.run.trials, 10_000);
        assert_eq!(cfg.solver.to_config().unwrap(), SolverConfig::default());
    }

    #[test]
    fn missing_horizon_names_the_field_and_line() {
        let err = ExperimentConfig::parse("[model]\nname = \"zero\"\n[lattice]\nN = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing field `T`"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn unknown_keys_and_models_are_rejected() {
        let typo = "[model]\nname = \"linear\"\nalpha = 1.0\n[lattice]\nT = 1.0\nN = 4\n";
        assert!(ExperimentConfig::parse(typo).unwrap_err().to_string().contains("alpha"));
        let unknown = "[model]\nname = \"heat\"\n[lattice]\nT = 1.0\nN = 4\n";
        assert!(ExperimentConfig::parse(unknown).is_err());
    }

    #[test]
    fn linear_parameters_and_terminal_parse() {
        let text = "[model]\nname = \"linear\"\na = 1.0\nl = 0.2\nterminal = { kind = \"affine\", offset = 1.0, slope = 0.5 }\n\
                    [lattice]\nT = 1.0\nN_list = [8, 16]\nlayout = \"recombining\"\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        match cfg.model {
            ModelConfig::Linear { a, l, terminal, .. } => {
                assert_eq!((a, l), (1.0, 0.2));
                assert_eq!(terminal, Terminal::Affine { offset: 1.0, slope: 0.5 });
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.lattice.all_steps(), vec![8, 16]);
        assert!(cfg.lattice.single_steps().is_err());
    }

    #[test]
    fn bdspde_block_parses_registry_entries() {
        let text = "[model]\nname = \"bdspde\"\nmodes = 3\na = \"affine:1.0,0.5\"\nh = [\"linear:0.2,0,0\"]\n\
                    [lattice]\nT = 0.5\nN = 2\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        match cfg.model {
            ModelConfig::Bdspde(b) => {
                assert_eq!(b.modes, 3);
                assert_eq!(b.a, "affine:1.0,0.5");
                assert_eq!(b.sigma, vec!["constant:0".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_solver_settings_are_config_errors() {
        let text = "[model]\nname = \"zero\"\n[lattice]\nT = 1.0\nN = 4\n[solver]\npicard_max = 0\n";
        assert_eq!(ExperimentConfig::parse(text).unwrap_err().exit_code(), 2);
    }
}
