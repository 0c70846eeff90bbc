//! Resolvent `H_ε = (I − εF)^{-1}` and Yosida approximation
//! `F_ε = ε^{-1}(H_ε − I)` of a monotone map with its `v`-argument frozen.
//!
//! The root problem `y − εF(y) = x` is also exactly one implicit Euler step
//! of size `ε`, which is how the solver uses it.

use alloc::vec;
use alloc::vec::Vec;

use crate::coefficients::{CoefficientSystem, Omega, Sampler};
use crate::linalg::{dot, is_positive_definite_with, lu_factor_in_place, lu_solve, norm2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ResolventMethod {
    /// Damped Newton with step halving; bisection (1-D) or a preconditioned
    /// fixed-point map (declared Lipschitz bound) as fallbacks.
    #[default]
    NewtonWithDamping,
    /// Bracket expansion followed by Illinois regula falsi. Scalar maps only.
    ScalarBracketing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResolventConfig {
    pub eps: f64,
    /// Residual target, scaled: `‖y − εF(y) − x‖ <= tol·(1 + ‖x‖)`.
    pub tol: f64,
    pub max_iter: usize,
    pub method: ResolventMethod,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self {
            eps: 1.0,
            tol: 1e-12,
            max_iter: 200,
            method: ResolventMethod::NewtonWithDamping,
        }
    }
}

impl ResolventConfig {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config(alloc::format!(
                "resolvent needs eps > 0, tol > 0, max_iter >= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A map `u ↦ F(u)` with every other argument fixed.
pub trait FrozenMap: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, y: &[f64], out: &mut [f64]);

    /// Writes the row-major Jacobian and returns true if one is available.
    fn jacobian(&self, _y: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Lipschitz bound, if known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
}

/// Closure-backed [`FrozenMap`].
pub struct FnMap<F> {
    n: usize,
    f: F,
    lipschitz: Option<f64>,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnMap<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f, lipschitz: None }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FrozenMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out)
    }

    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// The drift of a system at fixed `(t, z, ω)`.
pub struct FrozenDrift<'a> {
    pub sys: &'a CoefficientSystem,
    pub t: f64,
    pub z: &'a [f64],
    pub omega: Omega,
}

impl FrozenMap for FrozenDrift<'_> {
    fn dim(&self) -> usize {
        self.sys.n()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        self.sys.drift(self.t, y, self.z, self.omega, out)
    }

    fn jacobian(&self, y: &[f64], out: &mut [f64]) -> bool {
        self.sys.drift_jacobian(self.t, y, self.z, self.omega, out)
    }

    fn lipschitz(&self) -> Option<f64> {
        self.sys.drift_lipschitz()
    }
}

/// Outcome of one root solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Resolution {
    pub residual: f64,
    pub iterations: usize,
    /// `I − sym(εF′)` failed to be positive definite at some iterate.
    pub non_monotone: bool,
}

/// Scratch buffers, reusable across calls of the same dimension.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    f: Vec<f64>,
    f2: Vec<f64>,
    r: Vec<f64>,
    trial: Vec<f64>,
    step: Vec<f64>,
    jac: Vec<f64>,
    probe: Vec<f64>,
    a: Vec<f64>,
    sym: Vec<f64>,
    chol: Vec<f64>,
    piv: Vec<usize>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        let mut ws = Self::default();
        ws.ensure(n);
        ws
    }

    fn ensure(&mut self, n: usize) {
        if self.f.len() != n {
            self.f = vec![0.0; n];
            self.f2 = vec![0.0; n];
            self.r = vec![0.0; n];
            self.trial = vec![0.0; n];
            self.step = vec![0.0; n];
            self.jac = vec![0.0; n * n];
            self.probe = vec![0.0; n];
            self.a = vec![0.0; n * n];
            self.sym = vec![0.0; n * n];
            self.chol = vec![0.0; n * n];
            self.piv = vec![0; n];
        }
    }
}

/// `r = y − εF(y) − x`; returns `‖r‖` and leaves `F(y)` in `f`.
fn residual<M: FrozenMap + ?Sized>(map: &M, eps: f64, x: &[f64], y: &[f64], f: &mut [f64], r: &mut [f64]) -> f64 {
    map.eval(y, f);
    for i in 0..y.len() {
        r[i] = y[i] - eps * f[i] - x[i];
    }
    norm2(r)
}

/// Solves `y − εF(y) = x`.
pub fn resolve<M: FrozenMap + ?Sized>(map: &M, cfg: &ResolventConfig, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; x.len()];
    resolve_into(map, cfg, x, &mut y, &mut Workspace::new(x.len()))?;
    Ok(y)
}

/// In-place variant of [`resolve`] with caller-owned scratch space.
pub fn resolve_into<M: FrozenMap + ?Sized>(
    map: &M,
    cfg: &ResolventConfig,
    x: &[f64],
    y: &mut [f64],
    ws: &mut Workspace,
) -> Result<Resolution> {
    cfg.validate()?;
    let n = map.dim();
    if x.len() != n || y.len() != n {
        return Err(Error::Shape(alloc::format!(
            "resolvent of a {n}-dimensional map applied to lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    ws.ensure(n);
    let target = cfg.tol * (1.0 + norm2(x));
    match cfg.method {
        ResolventMethod::ScalarBracketing => {
            if n != 1 {
                return Err(Error::Config("scalar_bracketing needs a one-dimensional map".into()));
            }
            bracketing(map, cfg, x, y, ws, target)
        }
        ResolventMethod::NewtonWithDamping => {
            y.copy_from_slice(x);
            let newton = newton(map, cfg, x, y, ws, target);
            match newton {
                Ok(res) => Ok(res),
                Err(err) => {
                    let non_monotone = matches!(err, NewtonFailure::Stalled { non_monotone: true, .. });
                    let mut fallback = if n == 1 {
                        bracketing(map, cfg, x, y, ws, target)
                    } else if let Some(l) = map.lipschitz() {
                        fixed_point(map, cfg, x, y, ws, target, l)
                    } else {
                        let NewtonFailure::Stalled { residual, iterations, .. } = err;
                        return Err(Error::ResolventNonConvergence { iterations, residual });
                    };
                    if let Ok(res) = fallback.as_mut() {
                        res.non_monotone |= non_monotone;
                    }
                    fallback
                }
            }
        }
    }
}

enum NewtonFailure {
    Stalled {
        residual: f64,
        iterations: usize,
        non_monotone: bool,
    },
}

fn newton<M: FrozenMap + ?Sized>(
    map: &M,
    cfg: &ResolventConfig,
    x: &[f64],
    y: &mut [f64],
    ws: &mut Workspace,
    target: f64,
) -> core::result::Result<Resolution, NewtonFailure> {
    let n = x.len();
    let eps = cfg.eps;
    let mut non_monotone = false;
    let mut rn = residual(map, eps, x, y, &mut ws.f, &mut ws.r);
    for it in 0..cfg.max_iter {
        if rn <= target {
            return Ok(Resolution {
                residual: rn,
                iterations: it,
                non_monotone,
            });
        }
        if !rn.is_finite() {
            break;
        }
        // Jacobian of F, analytic or forward differences
        if !map.jacobian(y, &mut ws.jac) {
            let h = libm::sqrt(f64::EPSILON) * (1.0 + norm2(y));
            for k in 0..n {
                ws.probe.copy_from_slice(y);
                ws.probe[k] += h;
                map.eval(&ws.probe, &mut ws.f2);
                for i in 0..n {
                    ws.jac[i * n + k] = (ws.f2[i] - ws.f[i]) / h;
                }
            }
        }
        // step matrix I − εF′
        let a = &mut ws.a;
        for i in 0..n {
            for k in 0..n {
                a[i * n + k] = -eps * ws.jac[i * n + k];
            }
            a[i * n + i] += 1.0;
        }
        let sym = &mut ws.sym;
        sym.copy_from_slice(a);
        for i in 0..n {
            for k in 0..i {
                let s = 0.5 * (a[i * n + k] + a[k * n + i]);
                sym[i * n + k] = s;
                sym[k * n + i] = s;
            }
        }
        if !is_positive_definite_with(sym, n, &mut ws.chol) && !non_monotone {
            non_monotone = true;
            log::warn!("resolvent: I - eps*sym(F') is not positive definite; the drift looks non-monotone here");
        }
        if !lu_factor_in_place(a, &mut ws.piv, n) {
            break;
        }
        for i in 0..n {
            ws.r[i] = -ws.r[i];
        }
        lu_solve(&ws.a, &ws.piv, n, &ws.r, &mut ws.step);
        // backtracking on the residual norm
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                ws.trial[i] = y[i] + lambda * ws.step[i];
            }
            let trial_rn = residual(map, eps, x, &ws.trial, &mut ws.f2, &mut ws.probe);
            if trial_rn.is_finite() && (trial_rn <= (1.0 - 1e-4 * lambda) * rn || trial_rn <= target) {
                y.copy_from_slice(&ws.trial);
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(NewtonFailure::Stalled {
                residual: rn,
                iterations: it,
                non_monotone,
            });
        }
        rn = residual(map, eps, x, y, &mut ws.f, &mut ws.r);
    }
    if rn <= target {
        return Ok(Resolution {
            residual: rn,
            iterations: cfg.max_iter,
            non_monotone,
        });
    }
    Err(NewtonFailure::Stalled {
        residual: rn,
        iterations: cfg.max_iter,
        non_monotone,
    })
}

/// Scalar root of the increasing map `g(y) = y − εF(y) − x`.
fn bracketing<M: FrozenMap + ?Sized>(
    map: &M,
    cfg: &ResolventConfig,
    x: &[f64],
    y: &mut [f64],
    _ws: &mut Workspace,
    target: f64,
) -> Result<Resolution> {
    let eps = cfg.eps;
    let g = |v: f64, f: &mut [f64]| {
        map.eval(&[v], f);
        v - eps * f[0] - x[0]
    };
    let mut f = [0.0];
    let center = x[0];
    let mut h = 1.0f64.max(center.abs());
    let (mut lo, mut hi) = (center - h, center + h);
    let (mut glo, mut ghi) = (g(lo, &mut f), g(hi, &mut f));
    let mut expansions = 0;
    while glo * ghi > 0.0 {
        if expansions >= cfg.max_iter || !glo.is_finite() || !ghi.is_finite() {
            return Err(Error::ResolventNonConvergence {
                iterations: expansions,
                residual: glo.abs().min(ghi.abs()),
            });
        }
        h *= 2.0;
        if glo > 0.0 {
            lo = center - h;
            glo = g(lo, &mut f);
        } else {
            hi = center + h;
            ghi = g(hi, &mut f);
        }
        expansions += 1;
    }
    if glo.abs() <= target {
        y[0] = lo;
        return Ok(Resolution {
            residual: glo.abs(),
            iterations: expansions,
            non_monotone: false,
        });
    }
    if ghi.abs() <= target {
        y[0] = hi;
        return Ok(Resolution {
            residual: ghi.abs(),
            iterations: expansions,
            non_monotone: false,
        });
    }
    // Illinois regula falsi, bisecting when the secant point stalls
    let mut side = 0i8;
    let mut best = (f64::INFINITY, center);
    for it in 0..cfg.max_iter.max(200) {
        let mut m = (lo * ghi - hi * glo) / (ghi - glo);
        if !(m > lo && m < hi) || it % 8 == 7 {
            m = 0.5 * (lo + hi);
        }
        let gm = g(m, &mut f);
        if gm.abs() < best.0 {
            best = (gm.abs(), m);
        }
        if gm.abs() <= target || hi - lo <= 4.0 * f64::EPSILON * (1.0 + m.abs()) {
            y[0] = best.1;
            return Ok(Resolution {
                residual: best.0,
                iterations: expansions + it + 1,
                non_monotone: false,
            });
        }
        if (gm > 0.0) == (ghi > 0.0) {
            hi = m;
            ghi = gm;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        } else {
            lo = m;
            glo = gm;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        }
    }
    Err(Error::ResolventNonConvergence {
        iterations: cfg.max_iter,
        residual: best.0,
    })
}

/// `y ← (x + εF(y) + εLy) / (1 + εL)`.
fn fixed_point<M: FrozenMap + ?Sized>(
    map: &M,
    cfg: &ResolventConfig,
    x: &[f64],
    y: &mut [f64],
    ws: &mut Workspace,
    target: f64,
    l: f64,
) -> Result<Resolution> {
    let eps = cfg.eps;
    y.copy_from_slice(x);
    let scale = 1.0 / (1.0 + eps * l);
    let mut rn = f64::INFINITY;
    for it in 0..cfg.max_iter * 10 {
        rn = residual(map, eps, x, y, &mut ws.f, &mut ws.r);
        if rn <= target {
            return Ok(Resolution {
                residual: rn,
                iterations: it,
                non_monotone: false,
            });
        }
        for i in 0..y.len() {
            y[i] = scale * (x[i] + eps * ws.f[i] + eps * l * y[i]);
        }
    }
    Err(Error::ResolventNonConvergence {
        iterations: cfg.max_iter * 10,
        residual: rn,
    })
}

/// `F_ε(x)` in both forms.
#[derive(Debug, Clone, PartialEq)]
pub struct YosidaValue {
    /// `(H_ε(x) − x)/ε`.
    pub value: Vec<f64>,
    /// `F(H_ε(x))`.
    pub via_drift: Vec<f64>,
    /// Largest entrywise difference of the two forms.
    pub discrepancy: f64,
}

pub fn yosida_apply<M: FrozenMap + ?Sized>(map: &M, cfg: &ResolventConfig, x: &[f64]) -> Result<YosidaValue> {
    let y = resolve(map, cfg, x)?;
    let value: Vec<f64> = y.iter().zip(x).map(|(y, x)| (y - x) / cfg.eps).collect();
    let mut via_drift = vec![0.0; x.len()];
    map.eval(&y, &mut via_drift);
    let discrepancy = crate::linalg::max_abs_diff(&value, &via_drift);
    Ok(YosidaValue {
        value,
        via_drift,
        discrepancy,
    })
}

/// Margins of the four Yosida properties over sampled points.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct YosidaReport {
    pub trials: usize,
    pub eps: f64,
    /// max `‖F_ε(x) − F_ε(y)‖ − (2/ε)‖x − y‖`.
    pub lipschitz_margin: f64,
    /// max `‖F_ε(x)‖ − ‖F(x)‖`.
    pub bound_margin: f64,
    /// max `⟨F_ε(x) − F_ε(y), x − y⟩`.
    pub monotone_margin: f64,
    /// The ε values used for the approximation property.
    pub approximation_eps: [f64; 3],
    /// max over x of `‖F_ε(x) − F(x)‖` for each ε in `approximation_eps`.
    pub approximation: [f64; 3],
    /// Largest disagreement between `(H_ε(x) − x)/ε` and `F(H_ε(x))`.
    pub max_discrepancy: f64,
}

impl YosidaReport {
    pub fn approximation_decreasing(&self) -> bool {
        self.approximation[0] > self.approximation[1] && self.approximation[1] > self.approximation[2]
    }
}

/// Samples pairs `(x, y) = (u1, u2)` from `sampler` and measures properties
/// (a)–(c) at `cfg.eps` and the approximation property (d) at
/// `ε ∈ {1e-2, 1e-3, 1e-4}`. `F_ε` is evaluated as `F(H_ε(x))`.
pub fn verify_yosida_properties<M: FrozenMap + ?Sized>(
    map: &M,
    cfg: &ResolventConfig,
    sampler: &Sampler,
    trials: usize,
) -> Result<YosidaReport> {
    let n = map.dim();
    let eps_triple = [1e-2, 1e-3, 1e-4];
    let per_trial = crate::par::map_range(trials, |k| -> Result<[f64; 8]> {
        let s = sampler.draw(k, n, 1);
        let fx = yosida_apply(map, cfg, &s.u1)?;
        let fy = yosida_apply(map, cfg, &s.u2)?;
        let mut plain = vec![0.0; n];
        map.eval(&s.u1, &mut plain);
        let dfe: Vec<f64> = fx.via_drift.iter().zip(&fy.via_drift).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = s.u1.iter().zip(&s.u2).map(|(a, b)| a - b).collect();
        let a = norm2(&dfe) - 2.0 / cfg.eps * norm2(&dx);
        let b = norm2(&fx.via_drift) - norm2(&plain);
        let c = dot(&dfe, &dx);
        let mut d = [0.0; 3];
        for (slot, e) in d.iter_mut().zip(eps_triple) {
            let v = yosida_apply(map, &ResolventConfig { eps: e, ..*cfg }, &s.u1)?;
            let diff: Vec<f64> = v.via_drift.iter().zip(&plain).map(|(p, q)| p - q).collect();
            *slot = norm2(&diff);
        }
        Ok([a, b, c, d[0], d[1], d[2], fx.discrepancy, fy.discrepancy])
    });
    let mut acc = [f64::NEG_INFINITY; 8];
    for r in per_trial {
        let r = r?;
        for (a, v) in acc.iter_mut().zip(r) {
            *a = a.max(v);
        }
    }
    Ok(YosidaReport {
        trials,
        eps: cfg.eps,
        lipschitz_margin: acc[0],
        bound_margin: acc[1],
        monotone_margin: acc[2],
        approximation_eps: eps_triple,
        approximation: [acc[3], acc[4], acc[5]],
        max_discrepancy: acc[6].max(acc[7]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neg_lin() -> FnMap<impl Fn(&[f64], &mut [f64]) + Sync> {
        FnMap::new(1, |y: &[f64], out: &mut [f64]| out[0] = -y[0])
    }

    fn neg_cube() -> FnMap<impl Fn(&[f64], &mut [f64]) + Sync> {
        FnMap::new(1, |y: &[f64], out: &mut [f64]| out[0] = -y[0] * y[0] * y[0])
    }

    #[test]
    fn linear_resolvent() {
        let y = resolve(&neg_lin(), &ResolventConfig::new(0.5), &[3.0]).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12);
        let v = yosida_apply(&neg_lin(), &ResolventConfig::new(0.5), &[3.0]).unwrap();
        assert!((v.value[0] + 2.0).abs() < 1e-11);
        assert!(v.discrepancy < 1e-11);
    }

    #[test]
    fn cubic_resolvent_both_methods() {
        for method in [ResolventMethod::NewtonWithDamping, ResolventMethod::ScalarBracketing] {
            let cfg = ResolventConfig {
                method,
                ..ResolventConfig::new(1.0)
            };
            let y = resolve(&neg_cube(), &cfg, &[2.0]).unwrap();
            assert!((y[0] - 1.0).abs() < 1e-12, "{method:?}: {}", y[0]);
            let v = yosida_apply(&neg_cube(), &cfg, &[2.0]).unwrap();
            assert!((v.value[0] + 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn small_eps_stays_close() {
        let cfg = ResolventConfig::new(1e-6);
        for x in [-3.0, -0.2, 0.0, 1.5, 7.0] {
            let y = resolve(&neg_cube(), &cfg, &[x]).unwrap();
            assert!((y[0] - x).abs() <= 1e-6 * (x * x * x).abs() + 1e-6);
        }
    }

    #[test]
    fn fixed_point_of_drift_is_fixed() {
        let v = yosida_apply(&neg_cube(), &ResolventConfig::new(0.3), &[0.0]).unwrap();
        assert_eq!(v.value, vec![0.0]);
    }

    #[test]
    fn vector_newton_with_fd_jacobian() {
        // F(y) = -A y - y³ (componentwise) with A symmetric positive
        let map = FnMap::new(2, |y: &[f64], out: &mut [f64]| {
            out[0] = -(2.0 * y[0] + 0.5 * y[1]) - y[0] * y[0] * y[0];
            out[1] = -(0.5 * y[0] + 1.0 * y[1]) - y[1] * y[1] * y[1];
        });
        let cfg = ResolventConfig::new(0.7);
        let x = [1.3, -2.1];
        let y = resolve(&map, &cfg, &x).unwrap();
        let mut f = [0.0; 2];
        map.eval(&y, &mut f);
        for i in 0..2 {
            assert!((y[i] - 0.7 * f[i] - x[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn lipschitz_fallback_runs() {
        let map = FnMap::new(2, |y: &[f64], out: &mut [f64]| {
            out[0] = -y[0];
            out[1] = -2.0 * y[1];
        })
        .with_lipschitz(2.0);
        let mut ws = Workspace::new(2);
        let mut y = [0.0; 2];
        let cfg = ResolventConfig::new(0.25);
        fixed_point(&map, &cfg, &[1.0, 1.0], &mut y, &mut ws, 1e-13, 2.0).unwrap();
        assert!((y[0] - 1.0 / 1.25).abs() < 1e-12);
        assert!((y[1] - 1.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn non_monotone_drift_is_flagged() {
        let map = FnMap::new(1, |y: &[f64], out: &mut [f64]| out[0] = 3.0 * y[0]);
        let mut y = [0.0];
        let res = resolve_into(&map, &ResolventConfig::new(0.5), &[1.0], &mut y, &mut Workspace::new(1)).unwrap();
        assert!(res.non_monotone);
        assert!((y[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn yosida_properties_for_linear_and_cubic() {
        let cfg = ResolventConfig::new(0.5);
        let s = Sampler::new(2).radius(2.0);
        for rep in [
            verify_yosida_properties(&neg_lin(), &cfg, &s, 300).unwrap(),
            verify_yosida_properties(&neg_cube(), &cfg, &s, 300).unwrap(),
        ] {
            assert!(rep.lipschitz_margin <= 1e-9);
            assert!(rep.monotone_margin <= 1e-9);
            assert!(rep.bound_margin <= 1e-12, "{}", rep.bound_margin);
            assert!(rep.approximation_decreasing(), "{:?}", rep.approximation);
        }
        // closed form for -y: ‖F_ε(x) − F(x)‖ = |x| ε/(1+ε), maximal at |x| = 2
        let rep = verify_yosida_properties(&neg_lin(), &cfg, &s, 300).unwrap();
        for (e, d) in rep.approximation_eps.iter().zip(rep.approximation) {
            assert!((d - 2.0 * e / (1.0 + e)).abs() < 1e-10, "{e}: {d}");
        }
    }
}
