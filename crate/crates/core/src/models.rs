//! Built-in coefficient systems with constants chosen so that the sampling
//! checkers pass on them (or, for [`cubic_bad`], fail).
//!
//! All models here are scalar with `dW = dB = 1`; the Galerkin module
//! provides the multi-dimensional ones.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coefficients::{Assumption, CoefficientSystem, StructuralConstants, TerminalFn};
use crate::lattice::NodeView;
use crate::rng;
use crate::solver::LinearOracle;

/// Terminal values `G` as functions of `W_T` (component 0).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Terminal {
    Constant { value: f64 },
    /// `offset + slope·W_T`.
    Affine { offset: f64, slope: f64 },
    /// `amplitude·sin(frequency·W_T)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `scale·W_T²`.
    Square { scale: f64 },
}

impl Terminal {
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            Terminal::Constant { value } => value,
            Terminal::Affine { offset, slope } => offset + slope * w,
            Terminal::Sine { amplitude, frequency } => amplitude * libm::sin(frequency * w),
            Terminal::Square { scale } => scale * w * w,
        }
    }

    /// Same value in every component.
    pub fn to_fn(self) -> TerminalFn {
        Arc::new(move |node: &NodeView<'_>, out: &mut [f64]| out.fill(self.eval(node.w(0))))
    }

    /// `self` with every value multiplied by `k`.
    pub fn scaled(self, k: f64) -> Terminal {
        match self {
            Terminal::Constant { value } => Terminal::Constant { value: k * value },
            Terminal::Affine { offset, slope } => Terminal::Affine {
                offset: k * offset,
                slope: k * slope,
            },
            Terminal::Sine { amplitude, frequency } => Terminal::Sine {
                amplitude: k * amplitude,
                frequency,
            },
            Terminal::Square { scale } => Terminal::Square { scale: k * scale },
        }
    }
}

/// `F = 0`, `J = 0`, given `G`.
pub fn zero(terminal: Terminal) -> CoefficientSystem {
    let g = terminal.to_fn();
    CoefficientSystem::builder(1, 1, 1)
        .name("zero")
        .terminal(move |v, out| g(v, out))
        .drift_jacobian(|_, _, _, _, out| out[0] = 0.0)
        .drift_lipschitz(0.0)
        .constants(StructuralConstants {
            k: 1.0,
            ..Default::default()
        })
        .build()
        .expect("valid dimensions")
}

/// `F = 0`, `J = 0`, `G = W_T`: the solution is `u = W`, `v = 1`.
pub fn martingale() -> CoefficientSystem {
    zero(Terminal::Affine { offset: 0.0, slope: 1.0 }).with_name("martingale")
}

/// `F = 0`, `J ≡ c`, `G ≡ g0`: the solution is `u_t = g0 + c(B_T − B_t)`,
/// `v = 0`.
pub fn backward_noise(c: f64, g0: f64) -> CoefficientSystem {
    CoefficientSystem::builder(1, 1, 1)
        .name("backward_noise")
        .diffusion(move |_, _, _, _, out| out[0] = c)
        .terminal(move |_, out| out[0] = g0)
        .drift_jacobian(|_, _, _, _, out| out[0] = 0.0)
        .drift_lipschitz(0.0)
        .varsigma(move |_| c * c)
        .constants(StructuralConstants {
            k: 1.0,
            ..Default::default()
        })
        .build()
        .expect("valid dimensions")
}

/// Scalar linear family `F(u, z) = a·u + γ·z`, `J(u) = j0 + l·u`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    pub a: f64,
    pub gamma: f64,
    pub l: f64,
    pub j0: f64,
    pub terminal: Terminal,
}

impl Default for Linear {
    fn default() -> Self {
        Self {
            a: 0.0,
            gamma: 0.0,
            l: 0.0,
            j0: 0.0,
            terminal: Terminal::Constant { value: 1.0 },
        }
    }
}

impl Linear {
    /// Constants from Young's inequality `2γzu <= (γ²/δ)u² + δz²` with
    /// `δ = 1/2` and `(j0 + lu)² <= 2j0² + 2l²u²`.
    pub fn constants(&self) -> StructuralConstants {
        let delta = 0.5;
        let Linear { a, gamma, l, .. } = *self;
        let k1 = (2.0 * a + l * l + gamma * gamma / delta).max(0.0);
        let alpha = 1.0;
        let k = [
            2.0,
            a * a,
            gamma * gamma,
            gamma.abs(),
            l.abs(),
            2.0 * l * l,
            2.0 * a + gamma * gamma / delta + 2.0 * l * l + alpha,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        StructuralConstants {
            k,
            k1,
            delta,
            alpha,
            ..Default::default()
        }
    }

    pub fn system(&self) -> CoefficientSystem {
        let Linear { a, gamma, l, j0, terminal } = *self;
        let g = terminal.to_fn();
        CoefficientSystem::builder(1, 1, 1)
            .name(&format!("linear(a={a}, gamma={gamma}, l={l}, j0={j0})"))
            .drift(move |_, u, z, _, out| out[0] = a * u[0] + gamma * z[0])
            .drift_jacobian(move |_, _, _, _, out| out[0] = a)
            .drift_lipschitz(a.abs())
            .diffusion(move |_, u, _, _, out| out[0] = j0 + l * u[0])
            .terminal(move |v, out| g(v, out))
            .varsigma(move |_| 2.0 * j0 * j0)
            .constants(self.constants())
            .build()
            .expect("valid dimensions")
    }

    /// The backward recursion without Picard or root solve; `None` when the
    /// drift depends on `z`.
    pub fn oracle(&self) -> Option<LinearOracle> {
        if self.gamma != 0.0 {
            return None;
        }
        let mut o = LinearOracle::affine(1, 1, alloc::vec![self.a], alloc::vec![self.j0]);
        o.jl[0][0] = self.l;
        Some(o)
    }

    /// `u_0` of the continuous equation when `γ = l = j0 = 0` and `G` is
    /// constant: `e^{aT}G`.
    pub fn exact_u0(&self, horizon: f64) -> Option<f64> {
        match self.terminal {
            Terminal::Constant { value } if self.gamma == 0.0 && self.l == 0.0 && self.j0 == 0.0 => {
                Some(libm::exp(self.a * horizon) * value)
            }
            _ => None,
        }
    }
}

/// `F(u) = −u³`, `J(u) = j0 + l·u`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cubic {
    pub l: f64,
    pub j0: f64,
    pub terminal: Terminal,
}

impl Default for Cubic {
    fn default() -> Self {
        Self {
            l: 0.0,
            j0: 0.0,
            terminal: Terminal::Sine {
                amplitude: 1.0,
                frequency: 1.0,
            },
        }
    }
}

impl Cubic {
    /// `q = 4` (the coercive term is `u⁴`), `K₁ = l²`,
    /// `K = max(2, 2l²)`, `ς = 2j0²`.
    pub fn constants(&self) -> StructuralConstants {
        let l2 = self.l * self.l;
        StructuralConstants {
            k: (2.0 * l2).max(2.0),
            k1: l2,
            delta: 0.5,
            alpha: 1.0,
            q: 4.0,
            p: 4.0,
            ..Default::default()
        }
    }

    pub fn system(&self) -> CoefficientSystem {
        let Cubic { l, j0, terminal } = *self;
        let g = terminal.to_fn();
        CoefficientSystem::builder(1, 1, 1)
            .name(&format!("cubic(l={l}, j0={j0})"))
            .drift(|_, u, _, _, out| out[0] = -u[0] * u[0] * u[0])
            .drift_jacobian(|_, u, _, _, out| out[0] = -3.0 * u[0] * u[0])
            .diffusion(move |_, u, _, _, out| out[0] = j0 + l * u[0])
            .terminal(move |v, out| g(v, out))
            .varsigma(move |_| 2.0 * j0 * j0)
            .constants(self.constants())
            .build()
            .expect("valid dimensions")
    }
}

/// `F(u) = +u³`, `G = W_T`: violates monotonicity (margin 2 at `(1, 0)`).
pub fn cubic_bad() -> CoefficientSystem {
    let g = Terminal::Affine { offset: 0.0, slope: 1.0 }.to_fn();
    CoefficientSystem::builder(1, 1, 1)
        .name("cubic_bad")
        .drift(|_, u, _, _, out| out[0] = u[0] * u[0] * u[0])
        .drift_jacobian(|_, u, _, _, out| out[0] = 3.0 * u[0] * u[0])
        .terminal(move |v, out| g(v, out))
        .constants(StructuralConstants {
            k: 2.0,
            q: 4.0,
            p: 4.0,
            ..Default::default()
        })
        .waive(Assumption::A6)
        .build()
        .expect("valid dimensions")
}

/// A seeded random linear system `F(u) = A·u`, `J(u)[:, r] = j0[:, r] + L_r·u`
/// with `G_c = c_0 + c_1 sin(W_T) + c_2 W_T` per component, and the matching
/// oracle description. `A` has entries in `[−1, 1]` and a diagonal shifted
/// by `−1`; `L_r` and `j0` entries lie in `[−0.3, 0.3]`.
pub fn random_linear(seed: u64, n: usize, db: usize) -> (CoefficientSystem, LinearOracle) {
    let mut r = rng::stream(seed, 0);
    let mut draw = |lo: f64, hi: f64, len: usize| -> Vec<f64> { (0..len).map(|_| rng::uniform(&mut r, lo, hi)).collect() };
    let mut a = draw(-1.0, 1.0, n * n);
    for i in 0..n {
        a[i * n + i] -= 1.0;
    }
    let j0 = draw(-0.3, 0.3, n * db);
    let jl: Vec<Vec<f64>> = (0..db).map(|_| draw(-0.3, 0.3, n * n)).collect();
    let gc = draw(-1.0, 1.0, 3 * n);
    let oracle = LinearOracle {
        n,
        db,
        a: a.clone(),
        j0: j0.clone(),
        jl: jl.clone(),
    };
    let sys = CoefficientSystem::builder(n, 1, db)
        .name(&format!("random_linear(seed={seed}, n={n}, db={db})"))
        .drift(move |_, u, _, _, out| {
            for i in 0..n {
                out[i] = (0..n).map(|k| a[i * n + k] * u[k]).sum();
            }
        })
        .diffusion(move |_, u, _, _, out| {
            for i in 0..n {
                for q in 0..db {
                    out[i * db + q] = j0[i * db + q] + (0..n).map(|k| jl[q][i * n + k] * u[k]).sum::<f64>();
                }
            }
        })
        .terminal(move |v, out| {
            let w = v.w(0);
            for (c, o) in out.iter_mut().enumerate() {
                *o = gc[3 * c] + gc[3 * c + 1] * libm::sin(w) + gc[3 * c + 2] * w;
            }
        })
        .build()
        .expect("valid dimensions");
    (sys, oracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{check_all, check_diffusion_z_bound, check_monotonicity, Sampler};

    fn assert_compliant(sys: &CoefficientSystem) {
        for r in check_all(sys, &Sampler::new(3).radius(2.0), 3000).unwrap() {
            assert!(!r.violated(), "{} {:?}: {}", sys.name(), r.assumption, r.worst_margin);
        }
        assert!(!check_diffusion_z_bound(sys, &Sampler::new(3), 500).unwrap().violated());
    }

    #[test]
    fn shipped_models_pass_checks() {
        assert_compliant(&martingale());
        assert_compliant(&backward_noise(0.7, 2.0));
        for (a, gamma, l, j0) in [(1.0, 0.0, 0.0, 0.0), (-1.0, 0.5, 0.2, 0.3), (0.3, -0.4, -1.5, 0.0)] {
            assert_compliant(
                &Linear {
                    a,
                    gamma,
                    l,
                    j0,
                    ..Default::default()
                }
                .system(),
            );
        }
        assert_compliant(&Cubic::default().system());
        assert_compliant(
            &Cubic {
                l: 0.4,
                j0: 0.5,
                ..Default::default()
            }
            .system(),
        );
    }

    #[test]
    fn violator_is_flagged() {
        let r = check_monotonicity(&cubic_bad(), &Sampler::new(0), 1000).unwrap();
        assert!(r.worst_margin >= 2.0);
    }

    #[test]
    fn terminal_scaling() {
        let t = Terminal::Sine {
            amplitude: 0.5,
            frequency: 2.0,
        };
        assert!((t.scaled(2.0).eval(0.3) - 2.0 * t.eval(0.3)).abs() < 1e-15);
    }
}
