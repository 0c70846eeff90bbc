use bdsde_core::lattice::{
    backward_ito_integral, condexp, expectation, martingale_coefficient, AdaptedField, Layout, ScenarioLattice,
    TransitionField,
};
use bdsde_core::rng;
use proptest::prelude::*;

fn random_field(lattice: &ScenarioLattice, level: usize, dim: usize, seed: u64) -> AdaptedField {
    let mut r = rng::stream(seed, level as u64);
    let values = (0..lattice.nodes(level) * dim).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
    AdaptedField::from_values(lattice, level, dim, values).unwrap()
}

fn random_transition(lattice: &ScenarioLattice, level: usize, dim: usize, seed: u64) -> TransitionField {
    let mut r = rng::stream(seed, 1000 + level as u64);
    TransitionField::from_fn(lattice, level, dim, |_, out| {
        out.iter_mut().for_each(|x| *x = rng::uniform(&mut r, -2.0, 2.0))
    })
}

fn cell_mean(lattice: &ScenarioLattice, x: &TransitionField, f: impl Fn(&[f64], usize, usize) -> f64) -> f64 {
    let k = lattice.branches();
    let mut acc = 0.0;
    for s in 0..lattice.states(x.level()) {
        let w = lattice.state_weight(x.level(), s) / k as f64;
        for b in 0..k {
            acc += w * f(x.cell(k, s, b), s, b);
        }
    }
    acc
}

fn small_lattice() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=4, 1usize..=2, 1usize..=2).prop_filter("size", |(n, dw, db)| n * (dw + db) <= 12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tower_property_preserves_means((n, dw, db) in small_lattice(), seed in any::<u64>()) {
        let lat = ScenarioLattice::build(1.0, n, dw, db).unwrap();
        let mut f = random_field(&lat, n, 2, seed);
        let top = expectation(&lat, &f);
        for level in (0..n).rev() {
            f = condexp(&lat, &TransitionField::lift(&lat, &f).unwrap()).unwrap();
            prop_assert_eq!(f.level(), level);
            let e = expectation(&lat, &f);
            for c in 0..2 {
                prop_assert!((e[c] - top[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_w_representation_is_complete_and_isometric(n in 1usize..=5, db in 1usize..=2, level_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let lat = ScenarioLattice::build(0.7, n, 1, db).unwrap();
        let level = ((n as f64 * level_frac) as usize).min(n - 1);
        let x = random_transition(&lat, level, 1, seed);
        let rep = martingale_coefficient(&lat, &x).unwrap();
        prop_assert!(rep.residual < 1e-12);
        prop_assert_eq!(rep.defect, 0.0);
        // E[X²] = E[m²] + E[v²]·dt
        let ex2 = cell_mean(&lat, &x, |c, _, _| c[0] * c[0]);
        let em2: f64 = lat.node_weights(level).iter().enumerate().map(|(k, w)| w * rep.mean.node(k)[0].powi(2)).sum();
        let ev2: f64 = lat.node_weights(level).iter().enumerate().map(|(k, w)| w * rep.integrand.node(k)[0].powi(2)).sum();
        prop_assert!((ex2 - em2 - ev2 * lat.dt()).abs() < 1e-12);
    }

    #[test]
    fn representation_residual_is_orthogonal((n, dw, db) in small_lattice(), seed in any::<u64>()) {
        let lat = ScenarioLattice::build(1.0, n, dw, db).unwrap();
        let level = n - 1;
        let x = random_transition(&lat, level, 1, seed);
        let rep = martingale_coefficient(&lat, &x).unwrap();
        let k = lat.branches();
        for s in 0..lat.states(level) {
            let node = lat.state_node(level, s);
            let (m, v) = (rep.mean.node(node)[0], rep.integrand.node(node));
            let mut mean_r = 0.0;
            let mut cross = vec![0.0; dw];
            for b in 0..k {
                let fit = m + (0..dw).map(|q| v[q] * lat.increment(b, q)).sum::<f64>();
                let r = x.cell(k, s, b)[0] - fit;
                mean_r += r / k as f64;
                for (q, c) in cross.iter_mut().enumerate() {
                    *c += r * lat.increment(b, q) / k as f64;
                }
            }
            prop_assert!(mean_r.abs() < 1e-12);
            prop_assert!(cross.iter().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn future_b_increments_are_known_and_w_increments_are_not((n, dw, db) in small_lattice()) {
        let lat = ScenarioLattice::build(1.0, n, dw, db).unwrap();
        for level in 0..n {
            let both = TransitionField::from_fn(&lat, level, dw + db, |v, out| {
                for c in 0..dw {
                    out[c] = v.dw(c);
                }
                for c in 0..db {
                    out[dw + c] = v.db(c);
                }
            });
            let m = condexp(&lat, &both).unwrap();
            for node in 0..lat.nodes(level) {
                let row = m.node(node);
                prop_assert!(row[..dw].iter().all(|x| x.abs() < 1e-15));
                prop_assert!(row[dw..].iter().all(|x| (x.abs() - lat.sqrt_dt()).abs() < 1e-15));
            }
            // W and B increments are uncorrelated.
            let prod = TransitionField::from_fn(&lat, level, 1, |v, out| out[0] = v.dw(0) * v.db(0));
            prop_assert!(expectation(&lat, &condexp(&lat, &prod).unwrap())[0].abs() < 1e-15);
        }
    }

    #[test]
    fn backward_integral_isometry(n in 1usize..=5, seed in any::<u64>()) {
        let lat = ScenarioLattice::build(1.0, n, 1, 1).unwrap();
        let mut r = rng::stream(seed, 0);
        let coeffs: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let h: Vec<AdaptedField> = (0..n).map(|j| AdaptedField::constant(&lat, j + 1, &[coeffs[j]])).collect();
        let i0 = backward_ito_integral(&lat, &h, 0).unwrap();
        let second: f64 = lat.node_weights(0).iter().enumerate().map(|(k, w)| w * i0.node(k)[0].powi(2)).sum();
        let expected: f64 = coeffs.iter().map(|c| c * c * lat.dt()).sum();
        prop_assert!((second - expected).abs() < 1e-12);
        prop_assert!(expectation(&lat, &i0)[0].abs() < 1e-12);
    }

    #[test]
    fn recombining_matches_paths_on_count_functions(n in 1usize..=6, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let paths = ScenarioLattice::build(1.0, n, 1, 1).unwrap();
        let counts = ScenarioLattice::builder(1.0, n, 1, 1).layout(Layout::Recombining).build().unwrap();
        let mut moments = Vec::new();
        for lat in [&paths, &counts] {
            // X = sin(a W_T), with b·W_{t_i}(B_T − B_{t_i}) added at every level.
            let mut f = AdaptedField::from_fn(lat, n, 1, |v, out| out[0] = (a * v.w(0)).sin());
            for _ in 0..n {
                let m = condexp(lat, &TransitionField::lift(lat, &f).unwrap()).unwrap();
                f = AdaptedField::from_fn(lat, m.level(), 1, |v, out| {
                    out[0] = m.node(v.index())[0] + b * v.w(0) * v.b_future(0)
                });
            }
            let w = lat.node_weights(0);
            let m1: f64 = (0..f.len()).map(|k| w[k] * f.node(k)[0]).sum();
            let m2: f64 = (0..f.len()).map(|k| w[k] * f.node(k)[0].powi(2)).sum();
            moments.push((m1, m2));
        }
        prop_assert!((moments[0].0 - moments[1].0).abs() < 1e-12);
        prop_assert!((moments[0].1 - moments[1].1).abs() < 1e-12);
    }
}
