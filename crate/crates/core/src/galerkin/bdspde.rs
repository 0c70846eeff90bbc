//! Assembly of the quasi-linear model
//!
//! ```text
//! −du = [∂_x(a ∂_x u + σ^r v^r) + b ∂_x u + c u + ς^r v^r + g + ∂_x f] dt
//!       − v^r dW^r + h^l d←B^l,      u(T) = G
//! ```
//!
//! on `(0, 1)` into sine coordinates, together with structural constants
//! derived from the coefficient bounds and the Lipschitz constants of
//! `f`, `g`, `h`.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::{project, SineBasis};
use crate::coefficients::{
    Assumption, B2Constants, CoefficientSystem, DiagonalNorms, EllipticCoefficients, StructuralConstants,
};
use crate::{Error, Result};

type NonlinearFn = Arc<dyn Fn(f64, f64, f64, f64, &[f64]) -> f64 + Send + Sync>;

/// `(t, x, ϑ, y, z) ↦ value` with Lipschitz constants `[L_ϑ, L_y, L_z]`
/// (`z` measured in the Euclidean norm).
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    f: NonlinearFn,
    lip: [f64; 3],
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("lipschitz", &self.lip)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new<F>(name: &str, lipschitz: [f64; 3], f: F) -> Self
    where
        F: Fn(f64, f64, f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: String::from(name),
            f: Arc::new(f),
            lip: lipschitz,
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", [0.0; 3], |_, _, _, _, _| 0.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz(&self) -> [f64; 3] {
        self.lip
    }

    pub fn eval(&self, t: f64, x: f64, theta: f64, y: f64, z: &[f64]) -> f64 {
        (self.f)(t, x, theta, y, z)
    }
}

/// Spatial profile `x ↦ value` on `[0, 1]`.
#[derive(Clone)]
pub struct Profile {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Profile").field("name", &self.name).finish()
    }
}

impl Profile {
    pub fn new(name: &str, f: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> Self {
        Self {
            name: String::from(name),
            f,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

/// Coefficients, nonlinearities and terminal data of the quasi-linear model
/// on a sine basis. The W-dimension is `coefs.sigma.len()`, the
/// B-dimension is `h.len()`.
#[derive(Clone, Debug)]
pub struct GalerkinModel {
    pub basis: SineBasis,
    pub coefs: EllipticCoefficients,
    pub f: Nonlinearity,
    pub g: Nonlinearity,
    pub h: Vec<Nonlinearity>,
    /// `G = P_n(profile)·(1 + terminal_noise·W_T)`.
    pub terminal: Profile,
    pub terminal_noise: f64,
    /// Declared ellipticity constants, checked separately.
    pub b2: Option<B2Constants>,
}

impl GalerkinModel {
    /// `a ≡ a0`, everything else zero, `G = P_n(x(1−x))`.
    pub fn heat(basis: SineBasis, a0: f64) -> Self {
        let zero: crate::coefficients::CoefFn = Arc::new(|_, _| 0.0);
        Self {
            basis,
            coefs: EllipticCoefficients {
                a: Arc::new(move |_, _| a0),
                sigma: vec![zero.clone()],
                b: zero.clone(),
                c: zero.clone(),
                varsigma_coef: vec![zero],
            },
            f: Nonlinearity::zero(),
            g: Nonlinearity::zero(),
            h: vec![Nonlinearity::zero()],
            terminal: Profile::new("parabola", Arc::new(|x| x * (1.0 - x))),
            terminal_noise: 0.0,
            b2: None,
        }
    }

    pub fn dw(&self) -> usize {
        self.coefs.sigma.len()
    }

    pub fn db(&self) -> usize {
        self.h.len()
    }

    /// Same model on another basis.
    pub fn with_basis(&self, basis: SineBasis) -> Self {
        Self { basis, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.dw() == 0 || self.coefs.varsigma_coef.len() != self.dw() || self.db() == 0 {
            return Err(Error::Config(format!(
                "model needs one sigma and one varsigma_coef per W-component (got {} and {}) and at least one h",
                self.dw(),
                self.coefs.varsigma_coef.len()
            )));
        }
        let lips = [&self.f, &self.g]
            .into_iter()
            .chain(self.h.iter())
            .flat_map(|n| n.lip);
        if lips.into_iter().any(|l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("Lipschitz constants must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Coefficient bounds sampled on a `(t, x)` grid and the constants built
/// from them.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DerivedConstants {
    pub constants: StructuralConstants,
    pub a_min: f64,
    pub a_max: f64,
    pub sigma_max: f64,
    pub b_max: f64,
    pub c_upper: f64,
    pub c_max: f64,
    pub varsigma_coef_max: f64,
    /// Dissipation left for the gradient after the Lipschitz terms
    /// (monotonicity and coercivity variants).
    pub gradient_budget: f64,
    pub gradient_budget_coercive: f64,
    /// Splitting weight of the noise term in the coercivity estimate.
    pub tau: f64,
    pub a6_waived: bool,
}

/// Time samples used for coefficient bounds.
const TIME_SAMPLES: usize = 65;

struct Bounds {
    a_min: f64,
    a_max: f64,
    s: f64,
    b: f64,
    c_up: f64,
    c_abs: f64,
    vs: f64,
}

fn bounds(model: &GalerkinModel, horizon: f64) -> Result<Bounds> {
    let mut bd = Bounds {
        a_min: f64::INFINITY,
        a_max: 0.0,
        s: 0.0,
        b: 0.0,
        c_up: f64::NEG_INFINITY,
        c_abs: 0.0,
        vs: 0.0,
    };
    let co = &model.coefs;
    for k in 0..TIME_SAMPLES {
        let t = horizon * k as f64 / (TIME_SAMPLES - 1) as f64;
        for &x in &model.basis.quadrature().nodes {
            let a = (co.a)(t, x);
            let s = libm::sqrt(co.sigma.iter().map(|f| libm::pow(f(t, x), 2.0)).sum());
            let b = (co.b)(t, x);
            let c = (co.c)(t, x);
            let vs = libm::sqrt(co.varsigma_coef.iter().map(|f| libm::pow(f(t, x), 2.0)).sum());
            if ![a, s, b, c, vs].iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("coefficient not finite at t={t}, x={x}")));
            }
            bd.a_min = bd.a_min.min(a);
            bd.a_max = bd.a_max.max(a.abs());
            bd.s = bd.s.max(s);
            bd.b = bd.b.max(b.abs());
            bd.c_up = bd.c_up.max(c);
            bd.c_abs = bd.c_abs.max(c.abs());
            bd.vs = bd.vs.max(vs);
        }
    }
    Ok(bd)
}

/// Pointwise Young/Cauchy–Schwarz bounds of the assumption expressions in
/// the variables `(|ΔU|, |ΔU'|, |ΔV|)` at each quadrature node; the discrete
/// inner products coincide with coordinate ones, so node-wise bounds sum to
/// coordinate bounds.
fn derive(model: &GalerkinModel, horizon: f64) -> Result<(DerivedConstants, f64, f64, f64)> {
    let bd = bounds(model, horizon)?;
    let [ft, fy, fz] = model.f.lip;
    let [gt, gy, gz] = model.g.lip;
    let sum = |f: fn([f64; 3]) -> f64| model.h.iter().map(|h| f(h.lip)).sum::<f64>();
    let htt = sum(|l| l[0] * l[0]);
    let hyy = sum(|l| l[1] * l[1]);
    let hzz = sum(|l| l[2] * l[2]);
    let hty = sum(|l| l[0] * l[1]);
    let htz = sum(|l| l[0] * l[2]);
    let hyz = sum(|l| l[1] * l[2]);

    let budget = 2.0 * bd.a_min - 2.0 * fy - hyy;
    if !(budget > 0.0) {
        return Err(Error::Config(format!(
            "no gradient dissipation left: 2·inf a − 2·L_y(f) − Σ L_y(h)² = {budget}"
        )));
    }
    // gradient budget split: 1/4 to the (U, U') cross term, 3/8 to (U', V)
    let m_uu = 2.0 * bd.c_up + 2.0 * gt + htt;
    let m_up = bd.b + gy + ft + hty;
    let m_uv = bd.vs + gz + htz;
    let m_pv = bd.s + fz + hyz;
    let v_mono = hzz + m_pv * m_pv / (0.375 * budget);

    // coercivity: the h-square is split as (1+τ)(state part)² + (1+1/τ)h₀²,
    // the remaining 1/4 of the gradient budget becomes α and 1/8 absorbs f₀
    let mut chosen = None;
    for tau in [1.0, 0.5, 0.25, 0.1, 0.01] {
        let b3 = 2.0 * bd.a_min - 2.0 * fy - (1.0 + tau) * hyy;
        if !(b3 > 0.0) {
            continue;
        }
        let pv3 = bd.s + fz + (1.0 + tau) * hyz;
        let v3 = (1.0 + tau) * hzz + pv3 * pv3 / (0.375 * b3);
        if v3.max(v_mono) < 1.0 {
            chosen = Some((tau, b3, v3));
            break;
        }
    }
    let Some((tau, b3, v3)) = chosen else {
        return Err(Error::Config(format!(
            "noise terms exhaust the v-budget: monotonicity needs δ >= {v_mono}"
        )));
    };
    let vmax = v_mono.max(v3);
    let delta = vmax + 0.5 * (1.0 - vmax);
    let eps2 = delta - v_mono;
    let eps3 = delta - v3;
    let k1 = (m_uu + m_up * m_up / (0.25 * budget) + m_uv * m_uv / eps2).max(0.0);

    let alpha = 0.25 * b3;
    let uu3 = 2.0 * bd.c_up + 2.0 * gt + (1.0 + tau) * htt + 1.0;
    let up3 = bd.b + gy + ft + (1.0 + tau) * hty;
    let uv3 = bd.vs + gz + (1.0 + tau) * htz;
    let k_a3 = uu3 + alpha + up3 * up3 / (0.25 * b3) + uv3 * uv3 / eps3;

    let sq = |x: f64| x * x;
    let k_a4 = 4.0
        * [
            sq(bd.b + gy) + sq(bd.a_max + fy),
            sq(bd.c_abs + gt) + sq(ft),
            sq(bd.vs + gz) + sq(bd.s + fz),
        ]
        .into_iter()
        .fold(0.0, f64::max);
    let k_a4j = 4.0 * (0.5 * htt).max(hyy).max(hzz);
    let k_a5 = libm::sqrt(2.0 * (sq(bd.vs + gz) + sq(bd.s + fz)))
        .max(libm::sqrt(2.0 * model.h.iter().map(|h| sq(h.lip[0]).max(sq(h.lip[1]))).sum::<f64>()));
    let a6_waived = hzz > 0.0;
    let (k_a6, alpha1) = if a6_waived { (0.0, 0.0) } else { ((4.0 * htt).max(2.0), 4.0 * hyy) };
    let k = [1.0, k_a3, k_a4, k_a4j, k_a5, k_a6].into_iter().fold(0.0, f64::max);

    let constants = StructuralConstants {
        k,
        k1,
        delta,
        alpha,
        alpha1,
        beta: 0.0,
        q: 2.0,
        p: 2.0,
    };
    constants.validate()?;
    // ς(t) = c_g Q[g₀²] + c_f Q[f₀²] + c_h Σ Q[h₀²]
    let c_g = 1.0 + 4.0;
    let c_f = 8.0 / b3 + 4.0;
    let c_h = 1.0 + 1.0 / tau + 4.0;
    Ok((
        DerivedConstants {
            constants,
            a_min: bd.a_min,
            a_max: bd.a_max,
            sigma_max: bd.s,
            b_max: bd.b,
            c_upper: bd.c_up,
            c_max: bd.c_abs,
            varsigma_coef_max: bd.vs,
            gradient_budget: budget,
            gradient_budget_coercive: b3,
            tau,
            a6_waived,
        },
        c_g,
        c_f,
        c_h,
    ))
}

struct Tables {
    model: GalerkinModel,
}

impl Tables {
    /// Node samples of `U`, `U'` and `V^r` (`v[r * M + k]`).
    fn fields(&self, u: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let b = &self.model.basis;
        let m = b.quadrature().len();
        let dw = self.model.dw();
        let mut val = vec![0.0; m];
        let mut der = vec![0.0; m];
        b.synthesize(u, &mut val, &mut der);
        let mut v = vec![0.0; dw * m];
        for j in 0..b.n() {
            let e = b.values(j);
            for r in 0..dw {
                let c = z[j * dw + r];
                if c != 0.0 {
                    for k in 0..m {
                        v[r * m + k] += c * e[k];
                    }
                }
            }
        }
        (val, der, v)
    }

    fn drift(&self, t: f64, u: &[f64], z: &[f64], out: &mut [f64]) {
        let model = &self.model;
        let co = &model.coefs;
        let quad = model.basis.quadrature();
        let m = quad.len();
        let dw = model.dw();
        let (val, der, v) = self.fields(u, z);
        let mut phi = vec![0.0; m];
        let mut psi = vec![0.0; m];
        let mut zk = vec![0.0; dw];
        for k in 0..m {
            let x = quad.nodes[k];
            for r in 0..dw {
                zk[r] = v[r * m + k];
            }
            let mut sv = 0.0;
            let mut vsv = 0.0;
            for r in 0..dw {
                sv += (co.sigma[r])(t, x) * zk[r];
                vsv += (co.varsigma_coef[r])(t, x) * zk[r];
            }
            phi[k] = (co.b)(t, x) * der[k] + (co.c)(t, x) * val[k] + vsv + model.g.eval(t, x, val[k], der[k], &zk);
            psi[k] = -(co.a)(t, x) * der[k] - sv - model.f.eval(t, x, val[k], der[k], &zk);
        }
        model.basis.test(&phi, Some(&psi), out);
    }

    fn diffusion(&self, t: f64, u: &[f64], z: &[f64], out: &mut [f64]) {
        let model = &self.model;
        let b = &model.basis;
        let quad = b.quadrature();
        let m = quad.len();
        let dw = model.dw();
        let db = model.db();
        let (val, der, v) = self.fields(u, z);
        let mut zk = vec![0.0; dw];
        let mut hv = vec![0.0; m];
        let mut col = vec![0.0; b.n()];
        for (l, h) in model.h.iter().enumerate() {
            for k in 0..m {
                for r in 0..dw {
                    zk[r] = v[r * m + k];
                }
                hv[k] = h.eval(t, quad.nodes[k], val[k], der[k], &zk);
            }
            b.test(&hv, None, &mut col);
            for j in 0..b.n() {
                out[j * db + l] = col[j];
            }
        }
    }

    /// `Q[φ(t, ·, 0, 0, 0)²]`.
    fn zero_square(&self, f: &Nonlinearity, t: f64) -> f64 {
        let quad = self.model.basis.quadrature();
        let z = vec![0.0; self.model.dw()];
        quad.nodes
            .iter()
            .zip(&quad.weights)
            .map(|(x, w)| w * libm::pow(f.eval(t, *x, 0.0, 0.0, &z), 2.0))
            .sum()
    }
}

/// Compiles the model into an `n`-dimensional system with `dW = sigma.len()`
/// and `dB = h.len()`; coefficient bounds are sampled over `[0, horizon]`.
/// The constants are derived, not declared: see [`DerivedConstants`].
pub fn assemble_bdspde(model: &GalerkinModel, horizon: f64) -> Result<(CoefficientSystem, DerivedConstants)> {
    model.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let (derived, c_g, c_f, c_h) = derive(model, horizon)?;
    let n = model.basis.n();
    let tables = Arc::new(Tables { model: model.clone() });
    let g_coef = project(|x| model.terminal.eval(x), &model.basis);
    let noise = model.terminal_noise;
    let (td, tj, ts) = (tables.clone(), tables.clone(), tables);
    let mut builder = CoefficientSystem::builder(n, model.dw(), model.db())
        .name(&format!("bdspde(n={n})"))
        .drift(move |t, u, z, _, out| td.drift(t, u, z, out))
        .diffusion(move |t, u, z, _, out| tj.diffusion(t, u, z, out))
        .terminal(move |node, out| {
            let s = 1.0 + noise * node.w(0);
            for (o, g) in out.iter_mut().zip(&g_coef) {
                *o = g * s;
            }
        })
        .varsigma(move |t| {
            let m = &ts.model;
            c_g * ts.zero_square(&m.g, t)
                + c_f * ts.zero_square(&m.f, t)
                + c_h * m.h.iter().map(|h| ts.zero_square(h, t)).sum::<f64>()
        })
        .constants(derived.constants)
        .norms(DiagonalNorms::new(model.basis.v_weights())?);
    if derived.a6_waived {
        builder = builder.waive(Assumption::A6);
    }
    Ok((builder.build()?, derived))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{check_all, check_diffusion_z_bound, eval_diffusion, eval_drift, Sampler};
    use crate::galerkin::registry;
    use core::f64::consts::PI;

    #[test]
    fn heat_is_diagonal() {
        let basis = SineBasis::new(6).unwrap();
        let (sys, d) = assemble_bdspde(&GalerkinModel::heat(basis, 0.7), 1.0).unwrap();
        let u = [1.0, -0.5, 0.25, 2.0, 0.0, 0.3];
        let f = eval_drift(&sys, 0.2, &u, &[0.0; 6]);
        for j in 0..6 {
            let exact = -0.7 * libm::pow((j + 1) as f64 * PI, 2.0) * u[j];
            assert!((f[j] - exact).abs() <= 1e-8 * (1.0 + exact.abs()), "{j}: {} vs {exact}", f[j]);
        }
        assert_eq!(d.constants.k1, 0.0);
    }

    #[test]
    fn sigma_term_vanishes_for_one_mode() {
        let basis = SineBasis::new(1).unwrap();
        let mut model = GalerkinModel::heat(basis, 1.0);
        model.coefs.sigma = vec![Arc::new(|_, _| 0.4)];
        let (sys, _) = assemble_bdspde(&model, 1.0).unwrap();
        let f = eval_drift(&sys, 0.0, &[0.5], &[2.0]);
        assert!((f[0] + PI * PI * 0.5).abs() < 1e-10);
    }

    #[test]
    fn linear_h_is_identity_scaled() {
        let basis = SineBasis::new(4).unwrap();
        let mut model = GalerkinModel::heat(basis, 1.0);
        model.h = vec![registry::nonlinearity("linear:0.3,0,0").unwrap()];
        let (sys, _) = assemble_bdspde(&model, 1.0).unwrap();
        let u = [1.0, 2.0, -1.0, 0.5];
        let j = eval_diffusion(&sys, 0.0, &u, &[0.0; 4]);
        for k in 0..4 {
            assert!((j[k] - 0.3 * u[k]).abs() < 1e-12);
        }
    }

    fn rich_model(n: usize) -> GalerkinModel {
        let basis = SineBasis::new(n).unwrap();
        GalerkinModel {
            basis,
            coefs: EllipticCoefficients {
                a: registry::coefficient("affine:1.0,0.5").unwrap(),
                sigma: vec![registry::coefficient("constant:0.3").unwrap()],
                b: registry::coefficient("constant:0.4").unwrap(),
                c: registry::coefficient("affine_t:-0.5,0.2").unwrap(),
                varsigma_coef: vec![registry::coefficient("cosine:0.1,0.1").unwrap()],
            },
            f: registry::nonlinearity("linear:0.2,0.1,0.1").unwrap(),
            g: registry::nonlinearity("sine:0.5").unwrap(),
            h: vec![registry::nonlinearity("tanh:0.3").unwrap()],
            terminal: registry::profile("parabola").unwrap(),
            terminal_noise: 0.5,
            b2: None,
        }
    }

    #[test]
    fn derived_constants_pass_the_checkers() {
        let (sys, d) = assemble_bdspde(&rich_model(4), 1.0).unwrap();
        assert!(!d.a6_waived);
        for radius in [0.5, 3.0] {
            for r in check_all(&sys, &Sampler::new(9).radius(radius), 2000).unwrap() {
                assert!(!r.violated(), "{:?} {}", r.assumption, r.worst_margin);
            }
        }
        assert!(!check_diffusion_z_bound(&sys, &Sampler::new(2), 500).unwrap().violated());
    }

    #[test]
    fn z_dependent_h_waives_a6() {
        let mut m = rich_model(3);
        m.h = vec![registry::nonlinearity("linear:0.1,0.0,0.4").unwrap()];
        let (sys, d) = assemble_bdspde(&m, 1.0).unwrap();
        assert!(d.a6_waived && sys.waived().contains(&Assumption::A6));
        for r in check_all(&sys, &Sampler::new(4).radius(2.0), 2000).unwrap() {
            assert!(!r.violated(), "{:?} {}", r.assumption, r.worst_margin);
        }
    }

    #[test]
    fn no_dissipation_is_a_config_error() {
        let mut m = rich_model(2);
        m.h = vec![registry::nonlinearity("linear:0,2,0").unwrap()];
        assert!(matches!(assemble_bdspde(&m, 1.0), Err(Error::Config(_))));
    }
}
