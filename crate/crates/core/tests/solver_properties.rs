use bdsde_core::coefficients::CoefficientSystem;
use bdsde_core::lattice::{AdaptedField, Layout, ScenarioLattice};
use bdsde_core::models::{self, random_linear, Cubic, Linear, Terminal};
use bdsde_core::resolvent::{resolve, FnMap, ResolventConfig};
use bdsde_core::rng;
use bdsde_core::solver::{discrete_residual, solve, solve_linear_oracle, solve_with, SolverConfig};
use proptest::prelude::*;

/// `F(y) = −MᵀM y − y³ + S y + b` with `S` skew: monotone for every draw.
fn monotone_drift(seed: u64, n: usize) -> impl Fn(&[f64], &mut [f64]) + Sync + Send + Clone {
    let mut r = rng::stream(seed, 7);
    let m: Vec<f64> = (0..n * n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
    let s: Vec<f64> = (0..n * n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
    move |y: &[f64], out: &mut [f64]| {
        let my: Vec<f64> = (0..n).map(|i| (0..n).map(|k| m[i * n + k] * y[k]).sum()).collect();
        for i in 0..n {
            let mtmy: f64 = (0..n).map(|k| m[k * n + i] * my[k]).sum();
            let skew: f64 = (0..n).map(|k| (s[i * n + k] - s[k * n + i]) * y[k]).sum();
            out[i] = -mtmy - y[i] * y[i] * y[i] + skew + b[i];
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solver_agrees_with_linear_oracle(seed in any::<u64>(), n in 1usize..=3, db in 1usize..=2, steps in 1usize..=6) {
        let (sys, oracle) = random_linear(seed, n, db);
        let lat = ScenarioLattice::build(0.8, steps, 1, db).unwrap();
        let sol = solve(&sys, &lat, &SolverConfig::default()).unwrap();
        let o = solve_linear_oracle(&oracle, &sys.terminal_field(&lat).unwrap(), &lat).unwrap();
        for i in 0..=steps {
            prop_assert!(sol.u[i].max_abs_diff(&o.u[i]) < 1e-10);
        }
        for i in 0..steps {
            prop_assert!(sol.v[i].max_abs_diff(&o.v[i]) < 1e-10);
        }
        prop_assert!(discrete_residual(&sol, &sys, &lat).unwrap() < 1e-9);
    }

    #[test]
    fn resolvent_is_non_expansive(seed in any::<u64>(), n in 1usize..=4, eps in 0.01f64..2.0) {
        let f = monotone_drift(seed, n);
        let map = FnMap::new(n, f);
        let cfg = ResolventConfig::new(eps);
        let mut r = rng::stream(seed, 9);
        let x1: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -3.0, 3.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -3.0, 3.0)).collect();
        let y1 = resolve(&map, &cfg, &x1).unwrap();
        let y2 = resolve(&map, &cfg, &x2).unwrap();
        prop_assert!(dist(&y1, &y2) <= dist(&x1, &x2) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn one_solver_step_is_the_resolvent(seed in any::<u64>(), n in 1usize..=3, dt in 0.01f64..1.0) {
        let f = monotone_drift(seed, n);
        let mut r = rng::stream(seed, 11);
        let g: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
        let gt = g.clone();
        let fd = f.clone();
        let sys = CoefficientSystem::builder(n, 1, 1)
            .drift(move |_, u, _, _, out| fd(u, out))
            .terminal(move |_, out| out.copy_from_slice(&gt))
            .build()
            .unwrap();
        let lat = ScenarioLattice::build(dt, 1, 1, 1).unwrap();
        let sol = solve(&sys, &lat, &SolverConfig::default()).unwrap();
        let direct = resolve(&FnMap::new(n, f), &ResolventConfig::new(dt), &g).unwrap();
        for node in 0..lat.nodes(0) {
            prop_assert!(dist(sol.u[0].node(node), &direct) < 1e-10 * (1.0 + dist(&g, &vec![0.0; n])));
        }
    }
}

fn shipped() -> Vec<(CoefficientSystem, ScenarioLattice)> {
    let paths = ScenarioLattice::build(1.0, 6, 1, 1).unwrap();
    let counts = ScenarioLattice::builder(1.0, 16, 1, 1).layout(Layout::Recombining).build().unwrap();
    vec![
        (models::martingale(), paths.clone()),
        (models::backward_noise(0.5, 1.0), paths.clone()),
        (
            Linear {
                a: -0.5,
                gamma: 0.4,
                l: 0.3,
                j0: 0.2,
                terminal: Terminal::Sine { amplitude: 1.0, frequency: 2.0 },
            }
            .system(),
            paths.clone(),
        ),
        (
            Cubic {
                l: 0.3,
                j0: 0.2,
                ..Default::default()
            }
            .system(),
            paths,
        ),
        (
            Linear {
                a: 1.0,
                gamma: 0.3,
                terminal: Terminal::Affine { offset: 1.0, slope: 0.5 },
                ..Default::default()
            }
            .system(),
            counts,
        ),
    ]
}

#[test]
fn solution_does_not_depend_on_initial_integrand() {
    let cfg = SolverConfig::default();
    for (k, (sys, lat)) in shipped().into_iter().enumerate() {
        let mut r = rng::stream(42, k as u64);
        let zdim = sys.n() * sys.dw();
        let v0: Vec<AdaptedField> = (0..lat.steps())
            .map(|i| {
                let vals = (0..lat.nodes(i) * zdim).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
                AdaptedField::from_values(&lat, i, zdim, vals).unwrap()
            })
            .collect();
        let a = solve(&sys, &lat, &cfg).unwrap();
        let b = solve_with(&sys, &lat, &cfg, Some(&v0)).unwrap();
        let tol = 10.0 * cfg.picard_tol;
        for i in 0..=lat.steps() {
            assert!(a.u[i].max_abs_diff(&b.u[i]) <= tol, "{} u level {i}", sys.name());
        }
        for i in 0..lat.steps() {
            assert!(a.v[i].max_abs_diff(&b.v[i]) <= tol, "{} v level {i}", sys.name());
        }
    }
}
