//! Monotone drifts `A(u) = −u|u|^{r−2}` on `L^r` and the `r`-Laplacian
//! `A(u) = ∂_x(|∂_x u|^{r−2} ∂_x u)` on `W^{1,r}_0`, in sine coordinates.
//!
//! Both systems have `J = 0`, `dW = dB = 1` and `G = P_n(x(1−x))`; use
//! [`CoefficientSystem::with_terminal`] for other terminal data.
//!
//! Constants: `K₁ = 0`, `q = p = r`, `β = r − 2`, `ς = 0`, and `K` from
//! `max_k |U(x_k)|² <= 2n‖u‖²` (resp. `max_k |U'(x_k)|² <= 2n³π²‖u‖²`)
//! followed by Young's inequality with exponents `2/r'` and `2/(2 − r')`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{project, SineBasis};
use crate::coefficients::{CoefficientSystem, Norms, StructuralConstants};
use crate::{Error, Result};

fn check_r(r: f64) -> Result<()> {
    if !(r >= 2.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("exponent r must be >= 2, got {r}")));
    }
    Ok(())
}

fn signed_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * libm::pow(x.abs(), e)
    }
}

fn growth_k(r: f64, sup_factor: f64) -> f64 {
    let rc = r / (r - 1.0);
    libm::pow(sup_factor, (r - 2.0) * rc / 4.0).max(1.0)
}

fn quad_pow(basis: &SineBasis, vals: &[f64], r: f64) -> f64 {
    basis
        .quadrature()
        .weights
        .iter()
        .zip(vals)
        .map(|(w, v)| w * libm::pow(v.abs(), r))
        .sum()
}

/// `‖u‖_V = (Q|U|^r)^{1/r}`; `‖F‖_*` is the `L^{r'}` quadrature norm of the
/// representative `Σ F_j e_j`.
#[derive(Debug, Clone)]
pub struct LrNorms {
    basis: SineBasis,
    r: f64,
}

impl LrNorms {
    fn samples(&self, x: &[f64]) -> Vec<f64> {
        let m = self.basis.quadrature().len();
        let mut val = vec![0.0; m];
        let mut der = vec![0.0; m];
        self.basis.synthesize(x, &mut val, &mut der);
        val
    }
}

impl Norms for LrNorms {
    fn v(&self, x: &[f64]) -> f64 {
        libm::pow(quad_pow(&self.basis, &self.samples(x), self.r), 1.0 / self.r)
    }

    fn dual(&self, x: &[f64]) -> f64 {
        let rc = self.r / (self.r - 1.0);
        libm::pow(quad_pow(&self.basis, &self.samples(x), rc), 1.0 / rc)
    }

    fn embedding(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

/// `‖u‖_V = (Q|U|^r + Q|U'|^r)^{1/r}`; `‖·‖_*` is the diagonal `H⁻¹` norm.
#[derive(Debug, Clone)]
pub struct PLaplacianNorms {
    basis: SineBasis,
    r: f64,
}

impl Norms for PLaplacianNorms {
    fn v(&self, x: &[f64]) -> f64 {
        let m = self.basis.quadrature().len();
        let mut val = vec![0.0; m];
        let mut der = vec![0.0; m];
        self.basis.synthesize(x, &mut val, &mut der);
        let s = quad_pow(&self.basis, &val, self.r) + quad_pow(&self.basis, &der, self.r);
        libm::pow(s, 1.0 / self.r)
    }

    fn dual(&self, x: &[f64]) -> f64 {
        self.basis.norm_dual(x)
    }

    fn embedding(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

fn parabola_terminal(basis: &SineBasis) -> Vec<f64> {
    project(|x| x * (1.0 - x), basis)
}

/// `F_j(u) = Q[−U|U|^{r−2} e_j]`, with analytic Jacobian
/// `−(r−1) Q[|U|^{r−2} e_j e_k]`.
pub fn assemble_power_drift(r: f64, basis: &SineBasis) -> Result<CoefficientSystem> {
    check_r(r)?;
    let n = basis.n();
    let m = basis.quadrature().len();
    let (bf, bj) = (basis.clone(), basis.clone());
    let g = parabola_terminal(basis);
    CoefficientSystem::builder(n, 1, 1)
        .name(&format!("power_drift(r={r}, n={n})"))
        .drift(move |_, u, _, _, out| {
            let mut val = vec![0.0; m];
            let mut der = vec![0.0; m];
            bf.synthesize(u, &mut val, &mut der);
            let phi: Vec<f64> = val.iter().map(|v| -signed_pow(*v, r - 2.0)).collect();
            bf.test(&phi, None, out);
        })
        .drift_jacobian(move |_, u, _, _, out| {
            let mut val = vec![0.0; m];
            let mut der = vec![0.0; m];
            bj.synthesize(u, &mut val, &mut der);
            let w = &bj.quadrature().weights;
            let s: Vec<f64> = val
                .iter()
                .zip(w)
                .map(|(v, w)| -(r - 1.0) * w * libm::pow(v.abs(), r - 2.0))
                .collect();
            for j in 0..n {
                for k in 0..=j {
                    let (ej, ek) = (bj.values(j), bj.values(k));
                    let x: f64 = (0..m).map(|i| s[i] * ej[i] * ek[i]).sum();
                    out[j * n + k] = x;
                    out[k * n + j] = x;
                }
            }
        })
        .terminal(move |_, out| out.copy_from_slice(&g))
        .constants(StructuralConstants {
            k: growth_k(r, 2.0 * n as f64),
            k1: 0.0,
            delta: 0.5,
            alpha: 1.0,
            alpha1: 0.0,
            beta: r - 2.0,
            q: r,
            p: r,
        })
        .norms(LrNorms { basis: basis.clone(), r })
        .build()
}

/// `F_j(u) = −Q[|U'|^{r−2} U' e_j']`, with analytic Jacobian
/// `−(r−1) Q[|U'|^{r−2} e_j' e_k']`. Coercivity uses `α = 1/2`, leaving
/// room for the discrete Poincaré bound `Q|U|^r <= 3 Q|U'|^r`.
pub fn assemble_p_laplacian(r: f64, basis: &SineBasis) -> Result<CoefficientSystem> {
    check_r(r)?;
    let n = basis.n();
    let m = basis.quadrature().len();
    let (bf, bj) = (basis.clone(), basis.clone());
    let g = parabola_terminal(basis);
    let nn = n as f64;
    CoefficientSystem::builder(n, 1, 1)
        .name(&format!("p_laplacian(r={r}, n={n})"))
        .drift(move |_, u, _, _, out| {
            let mut val = vec![0.0; m];
            let mut der = vec![0.0; m];
            bf.synthesize(u, &mut val, &mut der);
            let psi: Vec<f64> = der.iter().map(|d| -signed_pow(*d, r - 2.0)).collect();
            let zero = vec![0.0; m];
            bf.test(&zero, Some(&psi), out);
        })
        .drift_jacobian(move |_, u, _, _, out| {
            let mut val = vec![0.0; m];
            let mut der = vec![0.0; m];
            bj.synthesize(u, &mut val, &mut der);
            let w = &bj.quadrature().weights;
            let s: Vec<f64> = der
                .iter()
                .zip(w)
                .map(|(d, w)| -(r - 1.0) * w * libm::pow(d.abs(), r - 2.0))
                .collect();
            for j in 0..n {
                for k in 0..=j {
                    let (dj, dk) = (bj.derivs(j), bj.derivs(k));
                    let x: f64 = (0..m).map(|i| s[i] * dj[i] * dk[i]).sum();
                    out[j * n + k] = x;
                    out[k * n + j] = x;
                }
            }
        })
        .terminal(move |_, out| out.copy_from_slice(&g))
        .constants(StructuralConstants {
            k: growth_k(r, 2.0 * nn * nn * nn * PI * PI),
            k1: 0.0,
            delta: 0.5,
            alpha: 0.5,
            alpha1: 0.0,
            beta: r - 2.0,
            q: r,
            p: r,
        })
        .norms(PLaplacianNorms { basis: basis.clone(), r })
        .build()
}
