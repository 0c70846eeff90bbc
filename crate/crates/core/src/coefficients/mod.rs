//! Coefficient systems `(F, J, G, ς)` with their structural constants, the
//! three norms of a Gelfand triple in coordinates, and sampling checkers for
//! the standing assumptions.
//!
//! Matrix-valued arguments are row-major: `z` (the `v` slot) is `n x dW`, and
//! the diffusion output `J` is `n x dB`.

mod checks;
mod rescale;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::lattice::{AdaptedField, NodeView, ScenarioLattice};
use crate::linalg::norm2;
use crate::{Error, Result};

pub use checks::{
    check_a6, check_all, check_b2, check_coercivity, check_diffusion_z_bound, check_growth,
    check_hemicontinuity, check_lipschitz, check_monotonicity, Assumption, B2Constants,
    CheckReport, CoefFn, EllipticCoefficients, Sample, Sampler, VIOLATION_THRESHOLD,
};
pub use rescale::{exponential_rescale, rescale};

/// Position on the lattice handed to coefficients. Built-in models ignore
/// it; user coefficients that are random must read lattice-adapted data
/// through it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Omega {
    pub level: usize,
    pub node: usize,
}

/// `(t, u, z, ω, out)`.
pub type FieldFn = Arc<dyn Fn(f64, &[f64], &[f64], Omega, &mut [f64]) + Send + Sync>;
/// Terminal value at a level-`N` node.
pub type TerminalFn = Arc<dyn Fn(&NodeView<'_>, &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Constants of the standing assumptions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StructuralConstants {
    pub k: f64,
    pub k1: f64,
    pub delta: f64,
    pub alpha: f64,
    pub alpha1: f64,
    pub beta: f64,
    pub q: f64,
    pub p: f64,
}

impl Default for StructuralConstants {
    fn default() -> Self {
        Self {
            k: 0.0,
            k1: 0.0,
            delta: 0.5,
            alpha: 1.0,
            alpha1: 0.0,
            beta: 0.0,
            q: 2.0,
            p: 2.0,
        }
    }
}

impl StructuralConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k >= 0.0
            && self.k1 >= 0.0
            && self.delta > 0.0
            && self.delta < 1.0
            && self.alpha > 0.0
            && self.alpha1 >= 0.0
            && self.beta >= 0.0
            && self.q > 1.0
            && self.p >= 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("structural constants out of range: {self:?}")))
        }
    }

    /// Conjugate exponent `q' = q / (q - 1)`.
    pub fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// Side conditions for the main existence theorem: `p >= beta + 2` and
    /// `alpha1 (p - 2) < alpha`.
    pub fn theorem_applicable(&self) -> bool {
        self.p >= self.beta + 2.0 && self.alpha1 * (self.p - 2.0) < self.alpha
    }
}

/// The norms `‖·‖` (H), `‖·‖_V` and `‖·‖_*` (V′) in coordinates.
pub trait Norms: Send + Sync {
    fn h(&self, x: &[f64]) -> f64 {
        norm2(x)
    }

    fn v(&self, x: &[f64]) -> f64;

    fn dual(&self, x: &[f64]) -> f64;

    /// `(c, c')` with `‖x‖ <= c‖x‖_V` and `‖x‖_* <= c'‖x‖`.
    fn embedding(&self) -> (f64, f64);
}

/// All three norms Euclidean.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl Norms for Euclidean {
    fn v(&self, x: &[f64]) -> f64 {
        norm2(x)
    }

    fn dual(&self, x: &[f64]) -> f64 {
        norm2(x)
    }

    fn embedding(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

/// `‖x‖_V² = Σ w_j x_j²`, `‖x‖_*² = Σ x_j² / w_j` with `w_j >= 1`.
#[derive(Debug, Clone)]
pub struct DiagonalNorms {
    weights: Vec<f64>,
}

impl DiagonalNorms {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 1.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("diagonal norm weights must be >= 1".into()));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Norms for DiagonalNorms {
    fn v(&self, x: &[f64]) -> f64 {
        libm::sqrt(x.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum())
    }

    fn dual(&self, x: &[f64]) -> f64 {
        libm::sqrt(x.iter().zip(&self.weights).map(|(x, w)| x * x / w).sum())
    }

    fn embedding(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

/// A finite-dimensional BDSDE system: drift `F`, diffusion into the backward
/// noise `J`, terminal value `G`, dominating function `ς`, constants, norms.
#[derive(Clone)]
pub struct CoefficientSystem {
    name: String,
    n: usize,
    dw: usize,
    db: usize,
    drift: FieldFn,
    drift_jacobian: Option<FieldFn>,
    drift_lipschitz: Option<f64>,
    diffusion: FieldFn,
    terminal: TerminalFn,
    varsigma: ScalarFn,
    constants: StructuralConstants,
    norms: Arc<dyn Norms>,
    waived: Vec<Assumption>,
}

impl fmt::Debug for CoefficientSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("dw", &self.dw)
            .field("db", &self.db)
            .field("constants", &self.constants)
            .field("analytic_jacobian", &self.drift_jacobian.is_some())
            .field("drift_lipschitz", &self.drift_lipschitz)
            .finish()
    }
}

impl CoefficientSystem {
    pub fn builder(n: usize, dw: usize, db: usize) -> SystemBuilder {
        SystemBuilder {
            sys: CoefficientSystem {
                name: String::from("custom"),
                n,
                dw,
                db,
                drift: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
                drift_jacobian: None,
                drift_lipschitz: None,
                diffusion: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
                terminal: Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
                varsigma: Arc::new(|_| 0.0),
                constants: StructuralConstants::default(),
                norms: Arc::new(Euclidean),
                waived: Vec::new(),
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dw(&self) -> usize {
        self.dw
    }

    pub fn db(&self) -> usize {
        self.db
    }

    pub fn constants(&self) -> &StructuralConstants {
        &self.constants
    }

    pub fn norms(&self) -> &dyn Norms {
        &*self.norms
    }

    pub fn drift_lipschitz(&self) -> Option<f64> {
        self.drift_lipschitz
    }

    pub fn has_jacobian(&self) -> bool {
        self.drift_jacobian.is_some()
    }

    /// Assumptions the system declares not applicable (skipped by
    /// [`check_all`]).
    pub fn waived(&self) -> &[Assumption] {
        &self.waived
    }

    pub fn drift(&self, t: f64, u: &[f64], z: &[f64], w: Omega, out: &mut [f64]) {
        (self.drift)(t, u, z, w, out)
    }

    /// Writes `∂F/∂u` (row-major `n x n`) and returns true, or returns false
    /// when no analytic Jacobian is registered.
    pub fn drift_jacobian(&self, t: f64, u: &[f64], z: &[f64], w: Omega, out: &mut [f64]) -> bool {
        match &self.drift_jacobian {
            Some(jac) => {
                jac(t, u, z, w, out);
                true
            }
            None => false,
        }
    }

    pub fn diffusion(&self, t: f64, u: &[f64], z: &[f64], w: Omega, out: &mut [f64]) {
        (self.diffusion)(t, u, z, w, out)
    }

    pub fn varsigma(&self, t: f64) -> f64 {
        (self.varsigma)(t)
    }

    pub fn terminal_at(&self, node: &NodeView<'_>, out: &mut [f64]) {
        (self.terminal)(node, out)
    }

    /// `G` tabulated on the terminal level.
    pub fn terminal_field(&self, lattice: &ScenarioLattice) -> Result<AdaptedField> {
        self.check_lattice(lattice)?;
        let g = &self.terminal;
        Ok(AdaptedField::from_fn(lattice, lattice.steps(), self.n, |v, out| g(v, out)))
    }

    pub fn check_lattice(&self, lattice: &ScenarioLattice) -> Result<()> {
        if lattice.dw() != self.dw || lattice.db() != self.db {
            return Err(Error::Shape(format!(
                "system {} has (dW, dB) = ({}, {}) but lattice has ({}, {})",
                self.name,
                self.dw,
                self.db,
                lattice.dw(),
                lattice.db()
            )));
        }
        Ok(())
    }

    /// The drift/diffusion data of this system with a different terminal
    /// value.
    pub fn with_terminal<G>(&self, g: G) -> CoefficientSystem
    where
        G: Fn(&NodeView<'_>, &mut [f64]) + Send + Sync + 'static,
    {
        let mut s = self.clone();
        s.terminal = Arc::new(g);
        s
    }

    pub fn with_constants(&self, constants: StructuralConstants) -> CoefficientSystem {
        let mut s = self.clone();
        s.constants = constants;
        s
    }

    pub fn with_name(&self, name: &str) -> CoefficientSystem {
        let mut s = self.clone();
        s.name = String::from(name);
        s
    }

    pub(crate) fn parts(&self) -> SystemParts {
        SystemParts {
            drift: self.drift.clone(),
            drift_jacobian: self.drift_jacobian.clone(),
            diffusion: self.diffusion.clone(),
            terminal: self.terminal.clone(),
            varsigma: self.varsigma.clone(),
        }
    }

    pub(crate) fn replace_parts(&self, parts: SystemParts, constants: StructuralConstants, lipschitz: Option<f64>) -> Self {
        let mut s = self.clone();
        s.drift = parts.drift;
        s.drift_jacobian = parts.drift_jacobian;
        s.diffusion = parts.diffusion;
        s.terminal = parts.terminal;
        s.varsigma = parts.varsigma;
        s.constants = constants;
        s.drift_lipschitz = lipschitz;
        s
    }
}

pub(crate) struct SystemParts {
    pub drift: FieldFn,
    pub drift_jacobian: Option<FieldFn>,
    pub diffusion: FieldFn,
    pub terminal: TerminalFn,
    pub varsigma: ScalarFn,
}

/// Builder for [`CoefficientSystem`]. Unset coefficients are zero; the
/// default norms are Euclidean.
pub struct SystemBuilder {
    sys: CoefficientSystem,
}

impl SystemBuilder {
    pub fn name(mut self, name: &str) -> Self {
        self.sys.name = String::from(name);
        self
    }

    pub fn drift<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], Omega, &mut [f64]) + Send + Sync + 'static,
    {
        self.sys.drift = Arc::new(f);
        self
    }

    pub fn drift_jacobian<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], Omega, &mut [f64]) + Send + Sync + 'static,
    {
        self.sys.drift_jacobian = Some(Arc::new(f));
        self
    }

    /// Lipschitz estimate of `F` in `u`, enabling the fixed-point fallback
    /// of the resolvent.
    pub fn drift_lipschitz(mut self, l: f64) -> Self {
        self.sys.drift_lipschitz = Some(l);
        self
    }

    pub fn diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], Omega, &mut [f64]) + Send + Sync + 'static,
    {
        self.sys.diffusion = Arc::new(f);
        self
    }

    pub fn terminal<G>(mut self, g: G) -> Self
    where
        G: Fn(&NodeView<'_>, &mut [f64]) + Send + Sync + 'static,
    {
        self.sys.terminal = Arc::new(g);
        self
    }

    pub fn varsigma<S>(mut self, s: S) -> Self
    where
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.sys.varsigma = Arc::new(s);
        self
    }

    pub fn constants(mut self, c: StructuralConstants) -> Self {
        self.sys.constants = c;
        self
    }

    pub fn norms<N: Norms + 'static>(mut self, norms: N) -> Self {
        self.sys.norms = Arc::new(norms);
        self
    }

    pub fn norms_boxed(mut self, norms: Box<dyn Norms>) -> Self {
        self.sys.norms = Arc::from(norms);
        self
    }

    pub fn waive(mut self, a: Assumption) -> Self {
        if !self.sys.waived.contains(&a) {
            self.sys.waived.push(a);
        }
        self
    }

    pub fn build(self) -> Result<CoefficientSystem> {
        let s = self.sys;
        if s.n == 0 || s.dw == 0 || s.db == 0 {
            return Err(Error::InvalidArgument(format!(
                "system dimensions must be positive: n={}, dW={}, dB={}",
                s.n, s.dw, s.db
            )));
        }
        s.constants.validate()?;
        Ok(s)
    }
}

/// Evaluates `F` into a fresh vector.
pub fn eval_drift(sys: &CoefficientSystem, t: f64, u: &[f64], z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; sys.n()];
    sys.drift(t, u, z, Omega::default(), &mut out);
    out
}

/// Evaluates `J` into a fresh `n x dB` vector.
pub fn eval_diffusion(sys: &CoefficientSystem, t: f64, u: &[f64], z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; sys.n() * sys.db()];
    sys.diffusion(t, u, z, Omega::default(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_defaults_are_zero() {
        let sys = CoefficientSystem::builder(2, 1, 1).build().unwrap();
        assert_eq!(eval_drift(&sys, 0.3, &[1.0, 2.0], &[0.5, 0.5]), vec![0.0, 0.0]);
        assert_eq!(eval_diffusion(&sys, 0.3, &[1.0, 2.0], &[0.5, 0.5]), vec![0.0, 0.0]);
        assert_eq!(sys.varsigma(0.1), 0.0);
        let l = ScenarioLattice::build(1.0, 2, 1, 1).unwrap();
        assert!(sys.terminal_field(&l).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lattice_shape_mismatch_is_reported() {
        let sys = CoefficientSystem::builder(1, 2, 1).build().unwrap();
        let l = ScenarioLattice::build(1.0, 2, 1, 1).unwrap();
        assert!(matches!(sys.terminal_field(&l), Err(Error::Shape(_))));
    }

    #[test]
    fn constants_validation() {
        let bad = StructuralConstants {
            delta: 1.0,
            ..Default::default()
        };
        assert!(CoefficientSystem::builder(1, 1, 1).constants(bad).build().is_err());
        let c = StructuralConstants {
            p: 4.0,
            beta: 2.0,
            alpha1: 0.4,
            alpha: 1.0,
            ..Default::default()
        };
        assert!(c.theorem_applicable());
        assert!(!StructuralConstants { alpha1: 0.6, ..c }.theorem_applicable());
        assert_eq!(StructuralConstants { q: 4.0, ..c }.q_conj(), 4.0 / 3.0);
    }

    #[test]
    fn diagonal_norm_sandwich() {
        let norms = DiagonalNorms::new(vec![1.0, 4.0, 9.0]).unwrap();
        let x = [1.0, -2.0, 0.5];
        assert!(norms.h(&x) <= norms.v(&x));
        assert!(norms.dual(&x) <= norms.h(&x));
        assert!(DiagonalNorms::new(vec![0.5]).is_err());
    }
}
