//! Exponential change of variables `ū = θ(t)u` with `θ(t) = e^{t·rate/2}`.
//!
//! With `rate = K₁` the rescaled system satisfies the monotonicity
//! assumption with `K₁ = 0`; `rescale(rescale(sys, r), -r)` gives back the
//! original coefficients.

use alloc::sync::Arc;

use super::{CoefficientSystem, StructuralConstants, SystemParts};

fn theta(t: f64, rate: f64) -> f64 {
    libm::exp(0.5 * rate * t)
}

/// `F̄(t,ū,z̄) = θF(t,θ⁻¹ū,θ⁻¹z̄) − (rate/2)ū`, `J̄ = θJ(t,θ⁻¹ū,θ⁻¹z̄)`,
/// `Ḡ = θ(T)G`, `ς̄ = θ²ς`, and `K₁` lowered by `rate` (floored at zero).
/// The remaining constants are carried over unchanged.
pub fn rescale(sys: &CoefficientSystem, rate: f64) -> CoefficientSystem {
    if rate == 0.0 {
        return sys.clone();
    }
    let n = sys.n();
    let old = sys.parts();
    let half = 0.5 * rate;

    let f = old.drift.clone();
    let drift = Arc::new(move |t: f64, u: &[f64], z: &[f64], w, out: &mut [f64]| {
        let th = theta(t, rate);
        let us: alloc::vec::Vec<f64> = u.iter().map(|x| x / th).collect();
        let zs: alloc::vec::Vec<f64> = z.iter().map(|x| x / th).collect();
        f(t, &us, &zs, w, out);
        for (o, x) in out.iter_mut().zip(u) {
            *o = th * *o - half * x;
        }
    });

    let drift_jacobian = old.drift_jacobian.clone().map(|jac| {
        Arc::new(move |t: f64, u: &[f64], z: &[f64], w, out: &mut [f64]| {
            let th = theta(t, rate);
            let us: alloc::vec::Vec<f64> = u.iter().map(|x| x / th).collect();
            let zs: alloc::vec::Vec<f64> = z.iter().map(|x| x / th).collect();
            jac(t, &us, &zs, w, out);
            for i in 0..n {
                out[i * n + i] -= half;
            }
        }) as super::FieldFn
    });

    let j = old.diffusion.clone();
    let diffusion = Arc::new(move |t: f64, u: &[f64], z: &[f64], w, out: &mut [f64]| {
        let th = theta(t, rate);
        let us: alloc::vec::Vec<f64> = u.iter().map(|x| x / th).collect();
        let zs: alloc::vec::Vec<f64> = z.iter().map(|x| x / th).collect();
        j(t, &us, &zs, w, out);
        out.iter_mut().for_each(|o| *o *= th);
    });

    let g = old.terminal.clone();
    let terminal = Arc::new(move |node: &crate::lattice::NodeView<'_>, out: &mut [f64]| {
        g(node, out);
        let th = theta(node.time(), rate);
        out.iter_mut().for_each(|o| *o *= th);
    });

    let s = old.varsigma.clone();
    let varsigma = Arc::new(move |t: f64| {
        let th = theta(t, rate);
        th * th * s(t)
    });

    let c = sys.constants();
    let constants = StructuralConstants {
        k1: (c.k1 - rate).max(0.0),
        ..*c
    };
    let lipschitz = sys.drift_lipschitz().map(|l| l + half.abs());
    sys.replace_parts(
        SystemParts {
            drift,
            drift_jacobian,
            diffusion,
            terminal,
            varsigma,
        },
        constants,
        lipschitz,
    )
}

/// Rescales by the system's own `K₁`, producing a system with `K₁ = 0`.
pub fn exponential_rescale(sys: &CoefficientSystem) -> CoefficientSystem {
    rescale(sys, sys.constants().k1)
}
