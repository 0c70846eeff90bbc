//! Spectral Galerkin compilation of quasi-linear backward doubly stochastic
//! PDEs on `(0, 1)` with Dirichlet boundary into finite-dimensional
//! coefficient systems.
//!
//! The basis is `e_j(x) = √2 sin(jπx)`, `j = 1..=n`. Coordinates carry the
//! norms `‖u‖² = Σ u_j²`, `‖u‖_V² = Σ (1 + (jπ)²) u_j²` and
//! `‖u‖_*² = Σ u_j² / (1 + (jπ)²)` of the triple `(H¹₀, L², H⁻¹)`.

mod bdspde;
mod monotone;
mod refine;
pub mod registry;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

pub use bdspde::{assemble_bdspde, DerivedConstants, GalerkinModel, Nonlinearity, Profile};
pub use monotone::{assemble_p_laplacian, assemble_power_drift, LrNorms, PLaplacianNorms};
pub use refine::{pad, refine_study, RefineRow};

/// Default tolerance for the discrete Gram and stiffness identities.
pub const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum QuadratureKind {
    /// Composite trapezoid on `M` equal intervals (`M + 1` nodes, endpoints
    /// included). Exact for trigonometric products of total frequency below
    /// `2M`.
    #[default]
    Trapezoid,
    /// Gauss–Legendre with `M` nodes.
    Gauss,
}

/// Nodes and positive weights on `[0, 1]`; the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub kind: QuadratureKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(kind: QuadratureKind, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!("quadrature needs at least 2 intervals/nodes, got {m}")));
        }
        Ok(match kind {
            QuadratureKind::Trapezoid => {
                let h = 1.0 / m as f64;
                let nodes = (0..=m).map(|k| k as f64 * h).collect();
                let mut weights = vec![h; m + 1];
                weights[0] = 0.5 * h;
                weights[m] = 0.5 * h;
                Self { kind, nodes, weights }
            }
            QuadratureKind::Gauss => {
                let (nodes, weights) = gauss_legendre(m);
                Self { kind, nodes, weights }
            }
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_k f(x_k)`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Gauss–Legendre rule mapped to `[0, 1]` (Newton iteration on `P_m`).
fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = libm::cos(PI * (i as f64 + 0.75) / (m as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[m - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[m - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// `e_j` and `e_j'` tabulated on a quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct SineBasis {
    n: usize,
    quad: Quadrature,
    /// `values[j * M + k] = e_{j+1}(x_k)`.
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl SineBasis {
    /// Basis of size `n` on the default quadrature (trapezoid,
    /// `M = max(64, 8n)`), checked against [`QUAD_TOL`].
    pub fn new(n: usize) -> Result<Self> {
        Self::with_quadrature(n, QuadratureKind::Trapezoid, default_points(n), QUAD_TOL)
    }

    pub fn with_quadrature(n: usize, kind: QuadratureKind, m: usize, quad_tol: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("basis size must be positive".into()));
        }
        let quad = Quadrature::new(kind, m)?;
        let len = quad.len();
        let mut values = vec![0.0; n * len];
        let mut derivs = vec![0.0; n * len];
        let s2 = libm::sqrt(2.0);
        for j in 0..n {
            let f = (j + 1) as f64 * PI;
            for (k, x) in quad.nodes.iter().enumerate() {
                values[j * len + k] = s2 * libm::sin(f * x);
                derivs[j * len + k] = s2 * f * libm::cos(f * x);
            }
        }
        let basis = Self { n, quad, values, derivs };
        let (gram, stiff) = basis.deviations();
        if gram > quad_tol || stiff > quad_tol {
            return Err(Error::Config(format!(
                "quadrature under-resolves the basis: Gram deviation {gram:e}, stiffness deviation {stiff:e} (tolerance {quad_tol:e})"
            )));
        }
        Ok(basis)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// `e_{j+1}` on the nodes.
    pub fn values(&self, j: usize) -> &[f64] {
        let m = self.quad.len();
        &self.values[j * m..(j + 1) * m]
    }

    /// `e_{j+1}'` on the nodes.
    pub fn derivs(&self, j: usize) -> &[f64] {
        let m = self.quad.len();
        &self.derivs[j * m..(j + 1) * m]
    }

    /// `(jπ)²` for `j = 1..=n`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n).map(|j| libm::pow(j as f64 * PI, 2.0)).collect()
    }

    /// Largest `|⟨e_i, e_j⟩_Q − δ_ij|` and largest relative
    /// `|⟨e_i', e_j'⟩_Q − (jπ)² δ_ij| / (nπ)²`.
    pub fn deviations(&self) -> (f64, f64) {
        let w = &self.quad.weights;
        let scale = libm::pow(self.n as f64 * PI, 2.0);
        let mut gram: f64 = 0.0;
        let mut stiff: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..=i {
                let g: f64 = (0..w.len()).map(|k| w[k] * self.values(i)[k] * self.values(j)[k]).sum();
                let s: f64 = (0..w.len()).map(|k| w[k] * self.derivs(i)[k] * self.derivs(j)[k]).sum();
                let (ge, se) = if i == j {
                    (1.0, libm::pow((i + 1) as f64 * PI, 2.0))
                } else {
                    (0.0, 0.0)
                };
                gram = gram.max((g - ge).abs());
                stiff = stiff.max((s - se).abs() / scale);
            }
        }
        (gram, stiff)
    }

    /// `U(x_k) = Σ u_j e_j(x_k)` and `U'(x_k)` on every node.
    pub fn synthesize(&self, u: &[f64], val: &mut [f64], der: &mut [f64]) {
        val.fill(0.0);
        der.fill(0.0);
        for (j, uj) in u.iter().enumerate().take(self.n) {
            if *uj == 0.0 {
                continue;
            }
            for (k, (v, d)) in val.iter_mut().zip(der.iter_mut()).enumerate() {
                *v += uj * self.values(j)[k];
                *d += uj * self.derivs(j)[k];
            }
        }
    }

    /// `out_j = Q[φ e_j] + Q[ψ e_j']` for node samples `φ`, `ψ`.
    pub fn test(&self, phi: &[f64], psi: Option<&[f64]>, out: &mut [f64]) {
        let w = &self.quad.weights;
        for (j, o) in out.iter_mut().enumerate().take(self.n) {
            let e = self.values(j);
            let mut s: f64 = (0..w.len()).map(|k| w[k] * phi[k] * e[k]).sum();
            if let Some(psi) = psi {
                let d = self.derivs(j);
                s += (0..w.len()).map(|k| w[k] * psi[k] * d[k]).sum::<f64>();
            }
            *o = s;
        }
    }

    /// `‖u‖_V² ` weights `1 + (jπ)²`.
    pub fn v_weights(&self) -> Vec<f64> {
        self.eigenvalues().into_iter().map(|e| 1.0 + e).collect()
    }

    pub fn norm_h(&self, u: &[f64]) -> f64 {
        crate::linalg::norm2(u)
    }

    pub fn norm_v(&self, u: &[f64]) -> f64 {
        libm::sqrt(u.iter().zip(self.v_weights()).map(|(x, w)| w * x * x).sum())
    }

    pub fn norm_dual(&self, u: &[f64]) -> f64 {
        libm::sqrt(u.iter().zip(self.v_weights()).map(|(x, w)| x * x / w).sum())
    }
}

/// `M = max(64, 8n)`.
pub fn default_points(n: usize) -> usize {
    (8 * n).max(64)
}

/// `c_j = Q[φ e_j]`.
pub fn project(f: impl Fn(f64) -> f64, basis: &SineBasis) -> Vec<f64> {
    let phi: Vec<f64> = basis.quad.nodes.iter().map(|x| f(*x)).collect();
    let mut out = vec![0.0; basis.n()];
    basis.test(&phi, None, &mut out);
    out
}
