//! Falsification of the standing assumptions by sampling.
//!
//! Each checker evaluates the left-minus-right expression of one assumption
//! on `trials` sampled points and reports the largest value together with
//! the point that produced it. A positive margin above
//! [`VIOLATION_THRESHOLD`] is a counterexample; a non-positive margin proves
//! nothing beyond the samples drawn.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{CoefficientSystem, Omega};
use crate::linalg::{dist, dot, norm2, norm_sq, quad_outer};
use crate::par::map_range;
use crate::rng::{fill_ball, stream, uniform};
use crate::{Error, Result};

/// Margins at or below this are treated as floating-point noise.
pub const VIOLATION_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Assumption {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    B2,
    /// `‖J(t,v,φ₁) − J(t,v,φ₂)‖² <= δ‖φ₁ − φ₂‖²`, a consequence of A2 + A3.
    DiffusionZ,
}

impl Assumption {
    pub fn id(&self) -> &'static str {
        match self {
            Assumption::A1 => "A1",
            Assumption::A2 => "A2",
            Assumption::A3 => "A3",
            Assumption::A4 => "A4",
            Assumption::A5 => "A5",
            Assumption::A6 => "A6",
            Assumption::B2 => "B2",
            Assumption::DiffusionZ => "J_z",
        }
    }

    pub fn parse(s: &str) -> Option<Assumption> {
        Some(match s {
            "A1" => Assumption::A1,
            "A2" => Assumption::A2,
            "A3" => Assumption::A3,
            "A4" => Assumption::A4,
            "A5" => Assumption::A5,
            "A6" => Assumption::A6,
            "B2" => Assumption::B2,
            "J_z" => Assumption::DiffusionZ,
            _ => return None,
        })
    }
}

/// One sampled point. `u*` are state vectors, `z*` are `n x dW` matrices,
/// `x` is a test vector in H.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub t: f64,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub x: Vec<f64>,
}

impl Sample {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = vec![self.t];
        for part in [&self.u1, &self.u2, &self.z1, &self.z2, &self.x] {
            v.extend_from_slice(part);
        }
        v
    }
}

/// Uniform draws on balls plus axis-aligned extreme points.
///
/// Trial `k` uses its own random stream keyed by `(seed, k)`; the first
/// trials are deterministic extremes: `u1 = ±R_u e_j` (with `x = e_j`), then
/// `z1 = ±R_z e_j`, all other arguments zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sampler {
    pub seed: u64,
    pub horizon: f64,
    pub radius_u: f64,
    pub radius_z: f64,
    pub radius_x: f64,
    pub extremes: bool,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            horizon: 1.0,
            radius_u: 1.0,
            radius_z: 1.0,
            radius_x: 1.0,
            extremes: true,
        }
    }

    pub fn horizon(mut self, t: f64) -> Self {
        self.horizon = t;
        self
    }

    pub fn radius(mut self, r: f64) -> Self {
        self.radius_u = r;
        self.radius_z = r;
        self
    }

    pub fn radius_u(mut self, r: f64) -> Self {
        self.radius_u = r;
        self
    }

    pub fn radius_z(mut self, r: f64) -> Self {
        self.radius_z = r;
        self
    }

    pub fn draw(&self, k: usize, n: usize, dw: usize) -> Sample {
        let mut s = Sample {
            t: 0.0,
            u1: vec![0.0; n],
            u2: vec![0.0; n],
            z1: vec![0.0; n * dw],
            z2: vec![0.0; n * dw],
            x: vec![0.0; n],
        };
        if self.extremes {
            if k < 2 * n {
                let j = k / 2;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                s.u1[j] = sign * self.radius_u;
                s.x[j] = self.radius_x;
                return s;
            }
            let kz = k - 2 * n;
            if kz < 2 * n * dw {
                let j = kz / 2;
                let sign = if kz % 2 == 0 { 1.0 } else { -1.0 };
                s.z1[j] = sign * self.radius_z;
                s.x[j / dw] = self.radius_x;
                return s;
            }
        }
        let mut rng = stream(self.seed, k as u64);
        s.t = uniform(&mut rng, 0.0, self.horizon);
        fill_ball(&mut rng, self.radius_u, &mut s.u1);
        fill_ball(&mut rng, self.radius_u, &mut s.u2);
        fill_ball(&mut rng, self.radius_z, &mut s.z1);
        fill_ball(&mut rng, self.radius_z, &mut s.z2);
        fill_ball(&mut rng, self.radius_x, &mut s.x);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckReport {
    pub assumption: Assumption,
    pub trials: usize,
    pub worst_margin: f64,
    pub witness: Sample,
    pub seed: u64,
}

impl CheckReport {
    pub fn violated(&self) -> bool {
        self.worst_margin > VIOLATION_THRESHOLD
    }
}

/// Evaluates `margin` on every trial and keeps the maximum (first index on
/// ties, so the result is independent of evaluation order).
fn run<F>(assumption: Assumption, sampler: &Sampler, trials: usize, n: usize, dw: usize, margin: F) -> Result<CheckReport>
where
    F: Fn(&Sample) -> f64 + Sync + Send,
{
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let margins = map_range(trials, |k| margin(&sampler.draw(k, n, dw)));
    if let Some(k) = margins.iter().position(|m| !m.is_finite()) {
        return Err(Error::NonFinite {
            assumption: String::from(assumption.id()),
            witness: sampler.draw(k, n, dw).flatten(),
        });
    }
    let mut best = 0;
    for (k, m) in margins.iter().enumerate() {
        if *m > margins[best] {
            best = k;
        }
    }
    Ok(CheckReport {
        assumption,
        trials,
        worst_margin: margins[best],
        witness: sampler.draw(best, n, dw),
        seed: sampler.seed,
    })
}

struct Eval<'a> {
    sys: &'a CoefficientSystem,
}

impl Eval<'_> {
    fn f(&self, t: f64, u: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sys.n()];
        self.sys.drift(t, u, z, Omega::default(), &mut out);
        out
    }

    fn j(&self, t: f64, u: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sys.n() * self.sys.db()];
        self.sys.diffusion(t, u, z, Omega::default(), &mut out);
        out
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Continuity spot-check of `s ↦ ⟨F(t, u1 + s u2, z1), x⟩` on `[-1, 1]`:
/// the largest jump on a 129-point grid minus 3/4 of the largest jump on the
/// 17-point subgrid. Refinement shrinks jumps of a continuous map roughly
/// eightfold; a discontinuity keeps its jump. This is a heuristic, not a
/// proof of hemicontinuity.
pub fn check_hemicontinuity(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    let e = Eval { sys };
    let n = sys.n();
    run(Assumption::A1, sampler, trials, n, sys.dw(), |s| {
        let dir: Vec<f64> = if norm2(&s.u2) > 0.0 { s.u2.clone() } else { s.x.clone() };
        let fine = 128;
        let mut vals = Vec::with_capacity(fine + 1);
        let mut u = vec![0.0; n];
        for k in 0..=fine {
            let sv = -1.0 + 2.0 * k as f64 / fine as f64;
            for c in 0..n {
                u[c] = s.u1[c] + sv * dir[c];
            }
            vals.push(dot(&e.f(s.t, &u, &s.z1), &s.x));
        }
        let jump = |step: usize| {
            (0..fine / step)
                .map(|k| (vals[(k + 1) * step] - vals[k * step]).abs())
                .fold(0.0, f64::max)
        };
        jump(1) - 0.75 * jump(8)
    })
}

/// `2⟨F(t,u₁,z₁) − F(t,u₂,z₂), u₁ − u₂⟩ + ‖J₁ − J₂‖² − K₁‖u₁ − u₂‖² − δ‖z₁ − z₂‖²`.
pub fn check_monotonicity(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    let e = Eval { sys };
    let c = *sys.constants();
    run(Assumption::A2, sampler, trials, sys.n(), sys.dw(), |s| {
        let df = sub(&e.f(s.t, &s.u1, &s.z1), &e.f(s.t, &s.u2, &s.z2));
        let dj = sub(&e.j(s.t, &s.u1, &s.z1), &e.j(s.t, &s.u2, &s.z2));
        let du = sub(&s.u1, &s.u2);
        let du_h = sys.norms().h(&du);
        2.0 * dot(&df, &du) + norm_sq(&dj) - c.k1 * du_h * du_h - c.delta * norm_sq(&sub(&s.z1, &s.z2))
    })
}

/// `2⟨F(t,u,z), u⟩ + ‖J‖² + α‖u‖_V^q − δ‖z‖² − K‖u‖² − ς(t)`.
pub fn check_coercivity(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    let e = Eval { sys };
    let c = *sys.constants();
    run(Assumption::A3, sampler, trials, sys.n(), sys.dw(), |s| {
        let f = e.f(s.t, &s.u1, &s.z1);
        let j = e.j(s.t, &s.u1, &s.z1);
        let uh = sys.norms().h(&s.u1);
        2.0 * dot(&f, &s.u1) + norm_sq(&j) + c.alpha * libm::pow(sys.norms().v(&s.u1), c.q)
            - c.delta * norm_sq(&s.z1)
            - c.k * uh * uh
            - sys.varsigma(s.t)
    })
}

/// The worse of
/// `‖F‖_*^{q'} − [ς + K(‖u‖_V^q + ‖u‖² + ‖z‖²)](1 + ‖u‖^β)` and
/// `‖J‖² − K(ς + ‖u‖_V^q + ‖u‖² + ‖z‖²)`.
pub fn check_growth(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    let e = Eval { sys };
    let c = *sys.constants();
    let qc = c.q_conj();
    run(Assumption::A4, sampler, trials, sys.n(), sys.dw(), |s| {
        let f = e.f(s.t, &s.u1, &s.z1);
        let j = e.j(s.t, &s.u1, &s.z1);
        let sig = sys.varsigma(s.t);
        let uh = sys.norms().h(&s.u1);
        let vq = libm::pow(sys.norms().v(&s.u1), c.q);
        let zz = norm_sq(&s.z1);
        let a = libm::pow(sys.norms().dual(&f), qc) - (sig + c.k * (vq + uh * uh + zz)) * (1.0 + libm::pow(uh, c.beta));
        let b = norm_sq(&j) - c.k * (sig + vq + uh * uh + zz);
        a.max(b)
    })
}

/// The worse of `‖F(t,u,z₁) − F(t,u,z₂)‖_* − K‖z₁ − z₂‖` and
/// `‖J(t,u₁,z) − J(t,u₂,z)‖ − K‖u₁ − u₂‖_V`.
pub fn check_lipschitz(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    let e = Eval { sys };
    let c = *sys.constants();
    run(Assumption::A5, sampler, trials, sys.n(), sys.dw(), |s| {
        let df = sub(&e.f(s.t, &s.u1, &s.z1), &e.f(s.t, &s.u1, &s.z2));
        let a = sys.norms().dual(&df) - c.k * dist(&s.z1, &s.z2);
        let dj = sub(&e.j(s.t, &s.u1, &s.z1), &e.j(s.t, &s.u2, &s.z1));
        let b = norm2(&dj) - c.k * sys.norms().v(&sub(&s.u1, &s.u2));
        a.max(b)
    })
}

/// `⟨x, (JJ* − zz*)x⟩ − K(‖J(t,0,0)‖² + ‖u‖²)‖x‖² − α₁ min(‖u‖_V^q, ‖u‖_V²)‖x‖²`.
pub fn check_a6(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    let e = Eval { sys };
    let c = *sys.constants();
    let n = sys.n();
    let zero_u = vec![0.0; n];
    let zero_z = vec![0.0; n * sys.dw()];
    run(Assumption::A6, sampler, trials, n, sys.dw(), |s| {
        let j = e.j(s.t, &s.u1, &s.z1);
        let j0 = norm_sq(&e.j(s.t, &zero_u, &zero_z));
        let xx = norm_sq(&s.x);
        let uh = sys.norms().h(&s.u1);
        let uv = sys.norms().v(&s.u1);
        quad_outer(&j, n, sys.db(), &s.x)
            - quad_outer(&s.z1, n, sys.dw(), &s.x)
            - c.k * (j0 + uh * uh) * xx
            - c.alpha1 * libm::pow(uv, c.q).min(uv * uv) * xx
    })
}

/// `‖J(t,u,z₁) − J(t,u,z₂)‖² − δ‖z₁ − z₂‖²`.
pub fn check_diffusion_z_bound(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    let e = Eval { sys };
    let delta = sys.constants().delta;
    run(Assumption::DiffusionZ, sampler, trials, sys.n(), sys.dw(), |s| {
        let dj = sub(&e.j(s.t, &s.u1, &s.z1), &e.j(s.t, &s.u1, &s.z2));
        norm_sq(&dj) - delta * norm_sq(&sub(&s.z1, &s.z2))
    })
}

/// Runs A1–A6 except those the system waives.
pub fn check_all(sys: &CoefficientSystem, sampler: &Sampler, trials: usize) -> Result<Vec<CheckReport>> {
    type Checker = fn(&CoefficientSystem, &Sampler, usize) -> Result<CheckReport>;
    let all: [(Assumption, Checker); 6] = [
        (Assumption::A1, check_hemicontinuity),
        (Assumption::A2, check_monotonicity),
        (Assumption::A3, check_coercivity),
        (Assumption::A4, check_growth),
        (Assumption::A5, check_lipschitz),
        (Assumption::A6, check_a6),
    ];
    all.iter()
        .filter(|(a, _)| !sys.waived().contains(a))
        .map(|(_, f)| f(sys, sampler, trials))
        .collect()
}

/// Scalar coefficient function `(t, x) ↦ value` on the unit interval.
pub type CoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Coefficients of the divergence-form operator on `(0, 1)`. `sigma` and
/// `varsigma_coef` hold one function per W-component.
#[derive(Clone)]
pub struct EllipticCoefficients {
    pub a: CoefFn,
    pub sigma: Vec<CoefFn>,
    pub b: CoefFn,
    pub c: CoefFn,
    pub varsigma_coef: Vec<CoefFn>,
}

impl core::fmt::Debug for EllipticCoefficients {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("EllipticCoefficients")
            .field("sigma_components", &self.sigma.len())
            .field("varsigma_components", &self.varsigma_coef.len())
            .finish()
    }
}

/// Ellipticity and Lipschitz constants of the quasi-linear model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct B2Constants {
    pub rho: f64,
    pub rho_prime: f64,
    pub delta: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub kappa: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl B2Constants {
    /// `λ − κ − ϱ′β − α`.
    pub fn gap(&self) -> f64 {
        self.lambda - self.kappa - self.rho_prime * self.beta - self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        let sum = 1.0 / self.rho + 1.0 / self.rho_prime + self.delta;
        if !(self.rho > 1.0 && self.rho_prime > 1.0) {
            return Err(Error::Config(format!(
                "rho and rho_prime must exceed 1, got {} and {}",
                self.rho, self.rho_prime
            )));
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "1/rho + 1/rho_prime + delta must equal 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Two-sided ellipticity of `2a − ϱ|σ|²`, the bound
/// `|a| + |σ| + |b| + |c| + |ς| <= Λ`, and positivity of the gap
/// `λ − κ − ϱ′β − α`, sampled over `(t, x, ξ)`. The witness stores `x` in
/// `u1[0]` and `ξ` in `x[0]`.
pub fn check_b2(coefs: &EllipticCoefficients, k: &B2Constants, sampler: &Sampler, trials: usize) -> Result<CheckReport> {
    k.validate()?;
    let gap = k.gap();
    let margin = |t: f64, x: f64, xi: f64| {
        let a = (coefs.a)(t, x);
        let sig2: f64 = coefs.sigma.iter().map(|s| libm::pow(s(t, x), 2.0)).sum();
        let vs2: f64 = coefs.varsigma_coef.iter().map(|s| libm::pow(s(t, x), 2.0)).sum();
        let form = (2.0 * a - k.rho * sig2) * xi * xi;
        let lower = k.lambda * xi * xi - form;
        let upper = form - k.big_lambda * xi * xi;
        let bound = a.abs() + libm::sqrt(sig2) + (coefs.b)(t, x).abs() + (coefs.c)(t, x).abs() + libm::sqrt(vs2)
            - k.big_lambda;
        lower.max(upper).max(bound).max(-gap)
    };
    let b2_sampler = Sampler {
        extremes: false,
        ..sampler.clone()
    };
    let mut report = run(Assumption::B2, &b2_sampler, trials, 1, 1, |s| {
        // ξ on the unit sphere of R¹; x uniform in (0, 1)
        let x = 0.5 * (1.0 + s.u1[0] / sampler.radius_u.max(f64::MIN_POSITIVE));
        margin(s.t, x.clamp(0.0, 1.0), 1.0)
    })?;
    let x = 0.5 * (1.0 + report.witness.u1[0] / sampler.radius_u.max(f64::MIN_POSITIVE));
    report.witness.u1 = vec![x.clamp(0.0, 1.0)];
    report.witness.x = vec![1.0];
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::StructuralConstants;

    fn cubic(sign: f64) -> CoefficientSystem {
        CoefficientSystem::builder(1, 1, 1)
            .drift(move |_, u, _, _, out| out[0] = sign * u[0] * u[0] * u[0])
            .build()
            .unwrap()
    }

    fn scalar(drift: f64, diff_u: f64, diff_z: f64, constants: StructuralConstants) -> CoefficientSystem {
        CoefficientSystem::builder(1, 1, 1)
            .drift(move |_, u, _, _, out| out[0] = drift * u[0])
            .diffusion(move |_, u, z, _, out| out[0] = diff_u * u[0] + diff_z * z[0])
            .constants(constants)
            .build()
            .unwrap()
    }

    #[test]
    fn monotone_cubic_passes_and_reversed_cubic_fails() {
        let s = Sampler::new(0);
        assert!(check_monotonicity(&cubic(-1.0), &s, 2000).unwrap().worst_margin <= 0.0);
        let bad = check_monotonicity(&cubic(1.0), &s, 2000).unwrap();
        assert!(bad.worst_margin >= 2.0 - 1e-12, "{}", bad.worst_margin);
        assert!(bad.violated());
        // the first trial is the extreme point (u1, u2) = (1, 0), margin exactly 2
        let first = check_monotonicity(&cubic(1.0), &s, 1).unwrap();
        assert_eq!(first.witness.u1, vec![1.0]);
        assert_eq!(first.witness.u2, vec![0.0]);
        assert_eq!(first.worst_margin, 2.0);
    }

    #[test]
    fn zero_system_margins() {
        let sys = CoefficientSystem::builder(1, 1, 1).build().unwrap();
        let s = Sampler::new(3);
        let a2 = check_monotonicity(&sys, &s, 500).unwrap();
        assert!(a2.worst_margin <= 0.0);
        let with_sig = CoefficientSystem::builder(1, 1, 1)
            .varsigma(|_| 1.0)
            .constants(StructuralConstants {
                alpha: 1e-12,
                ..Default::default()
            })
            .build()
            .unwrap();
        let r = check_coercivity(&with_sig, &Sampler::new(0), 500).unwrap();
        assert!((r.worst_margin + 1.0).abs() < 1e-9, "{}", r.worst_margin);
    }

    #[test]
    fn coercivity_examples() {
        let c = StructuralConstants {
            alpha: 1.0,
            q: 2.0,
            ..Default::default()
        };
        let sys = scalar(-1.0, 0.0, 0.0, c);
        assert!(check_coercivity(&sys, &Sampler::new(1), 1000).unwrap().worst_margin <= 0.0);
        // F = 0, J = z, δ = 0.5: at u = 0, |z| = 1 the margin is 1 - 0.5 = 0.5
        let sys = scalar(0.0, 0.0, 1.0, StructuralConstants { alpha: 1e-12, ..c });
        let r = check_coercivity(&sys, &Sampler::new(1), 10).unwrap();
        assert!((r.worst_margin - 0.5).abs() < 1e-9, "{}", r.worst_margin);
    }

    #[test]
    fn growth_examples() {
        let c = StructuralConstants {
            k: 1.0,
            ..Default::default()
        };
        let zero = CoefficientSystem::builder(1, 1, 1).constants(c).build().unwrap();
        assert!(check_growth(&zero, &Sampler::new(0), 300).unwrap().worst_margin <= 0.0);
        let lin = scalar(-1.0, 0.0, 0.0, c);
        assert!(check_growth(&lin, &Sampler::new(0), 300).unwrap().worst_margin <= 0.0);
        // J = 2z with K = 1: at u = 0, |z| = 1 the margin is 4 - 1 = 3
        let bad = scalar(0.0, 0.0, 2.0, c);
        let r = check_growth(&bad, &Sampler::new(0), 10).unwrap();
        assert!((r.worst_margin - 3.0).abs() < 1e-12, "{}", r.worst_margin);
    }

    #[test]
    fn lipschitz_examples() {
        let c = StructuralConstants {
            k: 0.7,
            ..Default::default()
        };
        assert!(check_lipschitz(&scalar(-3.0, 0.7, 0.0, c), &Sampler::new(0), 500).unwrap().worst_margin <= 1e-12);
        let sq = CoefficientSystem::builder(1, 1, 1)
            .diffusion(|_, u, _, _, out| out[0] = u[0] * u[0])
            .constants(StructuralConstants { k: 1.0, ..c })
            .build()
            .unwrap();
        let r = check_lipschitz(&sq, &Sampler::new(0).radius(3.0), 500).unwrap();
        assert!(r.violated());
    }

    #[test]
    fn a6_examples() {
        let c = StructuralConstants::default();
        assert!(check_a6(&scalar(0.0, 0.0, 1.0, c), &Sampler::new(0), 500).unwrap().worst_margin <= 1e-12);
        assert!(check_a6(&scalar(0.0, 0.0, 0.0, c), &Sampler::new(0), 500).unwrap().worst_margin <= 0.0);
        // J = 2z: margin 3 <x, z z* x> at aligned unit vectors
        let r = check_a6(&scalar(0.0, 0.0, 2.0, c), &Sampler::new(0), 10).unwrap();
        assert!((r.worst_margin - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hemicontinuity_detects_jumps_only() {
        let smooth = cubic(-1.0);
        assert!(!check_hemicontinuity(&smooth, &Sampler::new(0), 200).unwrap().violated());
        let step = CoefficientSystem::builder(1, 1, 1)
            .drift(|_, u, _, _, out| out[0] = if u[0] > 0.3 { -1.0 } else { 0.0 })
            .build()
            .unwrap();
        assert!(check_hemicontinuity(&step, &Sampler::new(0), 200).unwrap().violated());
    }

    #[test]
    fn margins_are_monotone_in_trials() {
        let sys = scalar(-1.0, 0.8, 0.5, StructuralConstants::default());
        let s = Sampler::new(11);
        let mut last = f64::NEG_INFINITY;
        for trials in [1, 5, 50, 500] {
            let m = check_monotonicity(&sys, &s, trials).unwrap().worst_margin;
            assert!(m >= last);
            last = m;
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let sys = CoefficientSystem::builder(1, 1, 1)
            .drift(|_, _, _, _, out| out[0] = f64::NAN)
            .build()
            .unwrap();
        match check_monotonicity(&sys, &Sampler::new(0), 3) {
            Err(Error::NonFinite { assumption, witness }) => {
                assert_eq!(assumption, "A2");
                assert!(!witness.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    fn constant(v: f64) -> CoefFn {
        Arc::new(move |_, _| v)
    }

    fn b2k(lambda: f64, big_lambda: f64) -> B2Constants {
        B2Constants {
            rho: 2.0,
            rho_prime: 4.0,
            delta: 0.25,
            lambda,
            big_lambda,
            kappa: 0.0,
            beta: 0.0,
            alpha: 0.0,
        }
    }

    #[test]
    fn b2_examples() {
        let heat = EllipticCoefficients {
            a: constant(1.0),
            sigma: vec![constant(0.0)],
            b: constant(0.0),
            c: constant(0.0),
            varsigma_coef: vec![constant(0.0)],
        };
        let r = check_b2(&heat, &b2k(2.0, 2.0), &Sampler::new(0), 200).unwrap();
        assert!(!r.violated(), "{}", r.worst_margin);
        let degenerate = EllipticCoefficients {
            sigma: vec![constant(1.0)],
            ..heat.clone()
        };
        assert!(check_b2(&degenerate, &b2k(2.0, 2.0), &Sampler::new(0), 50).unwrap().violated());
        let bad_sum = B2Constants {
            delta: 0.5,
            ..b2k(2.0, 2.0)
        };
        assert!(matches!(check_b2(&heat, &bad_sum, &Sampler::new(0), 5), Err(Error::Config(_))));
        let k = B2Constants {
            lambda: 1.0,
            kappa: 0.2,
            rho_prime: 4.0,
            beta: 0.1,
            alpha: 0.3,
            ..b2k(1.0, 2.0)
        };
        assert!((k.gap() - 0.1).abs() < 1e-12);
    }
}
