use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::field::adapted_node;
use super::{AdaptedField, Layout, PathTable, ScenarioLattice, TransitionField};
use crate::{Error, Result};

/// Decomposition `X = m + v·ΔW_i + R` of a transition field with
/// `E[R | F_i] = 0` and `E[R ΔW_i | F_i] = 0`.
#[derive(Debug, Clone)]
pub struct Representation {
    /// `m = E[X | F_{t_i}]`.
    pub mean: AdaptedField,
    /// `v = E[X ΔWᵀ | F_{t_i}] / dt`, stored row-major as `dim x dW`.
    pub integrand: AdaptedField,
    /// Largest `|R|` entry. Zero up to rounding when `dW == 1`.
    pub residual: f64,
    /// Largest disagreement between a state and its recombined node
    /// (always zero on the path layout).
    pub defect: f64,
}

/// Averages per-state values onto nodes, weighting by state probability.
/// Returns the node table and the largest state-to-node deviation.
pub(crate) fn collapse_states(
    lattice: &ScenarioLattice,
    level: usize,
    dim: usize,
    per_state: Vec<f64>,
) -> (Vec<f64>, f64) {
    if lattice.layout() == Layout::Paths {
        return (per_state, 0.0);
    }
    let states = lattice.states(level);
    let nodes: Vec<usize> = (0..states).map(|s| lattice.state_node(level, s)).collect();
    let weights: Vec<f64> = (0..states).map(|s| lattice.state_weight(level, s)).collect();
    collapse_with(lattice.nodes(level), dim, per_state, &nodes, &weights)
}

/// [`collapse_states`] with precomputed state-to-node map and state weights.
pub(crate) fn collapse_with(
    node_count: usize,
    dim: usize,
    per_state: Vec<f64>,
    state_nodes: &[usize],
    state_weights: &[f64],
) -> (Vec<f64>, f64) {
    let mut acc = vec![0.0; node_count * dim];
    let mut mass = vec![0.0; node_count];
    for (s, (&node, &w)) in state_nodes.iter().zip(state_weights).enumerate() {
        mass[node] += w;
        for c in 0..dim {
            acc[node * dim + c] += w * per_state[s * dim + c];
        }
    }
    for node in 0..node_count {
        if mass[node] > 0.0 {
            for c in 0..dim {
                acc[node * dim + c] /= mass[node];
            }
        }
    }
    let mut defect: f64 = 0.0;
    for (s, &node) in state_nodes.iter().enumerate() {
        for c in 0..dim {
            defect = defect.max((per_state[s * dim + c] - acc[node * dim + c]).abs());
        }
    }
    (acc, defect)
}

/// `E[X | F_{t_i}]` for a transition field of level `i`: the exact mean over
/// the `2^dW` W-outcomes of step `i+1`.
pub fn condexp(lattice: &ScenarioLattice, x: &TransitionField) -> Result<AdaptedField> {
    x.check_on(lattice)?;
    let level = x.level();
    let dim = x.dim();
    let k = lattice.branches();
    let states = lattice.states(level);
    let mut per_state = vec![0.0; states * dim];
    for s in 0..states {
        for b in 0..k {
            for (acc, v) in per_state[s * dim..(s + 1) * dim].iter_mut().zip(x.cell(k, s, b)) {
                *acc += v;
            }
        }
        per_state[s * dim..(s + 1) * dim]
            .iter_mut()
            .for_each(|v| *v /= k as f64);
    }
    let (values, _) = collapse_states(lattice, level, dim, per_state);
    AdaptedField::from_values(lattice, level, dim, values)
}

/// Discrete martingale representation of a transition field.
pub fn martingale_coefficient(lattice: &ScenarioLattice, x: &TransitionField) -> Result<Representation> {
    x.check_on(lattice)?;
    let level = x.level();
    let dim = x.dim();
    let dw = lattice.dw();
    let k = lattice.branches();
    let states = lattice.states(level);
    let sq = lattice.sqrt_dt();
    let mut means = vec![0.0; states * dim];
    let mut integrands = vec![0.0; states * dim * dw];
    let mut residual: f64 = 0.0;
    for s in 0..states {
        let m = &mut means[s * dim..(s + 1) * dim];
        let v = &mut integrands[s * dim * dw..(s + 1) * dim * dw];
        for b in 0..k {
            let cell = x.cell(k, s, b);
            for c in 0..dim {
                m[c] += cell[c];
                for r in 0..dw {
                    // X ΔW / dt with ΔW = ±√dt
                    v[c * dw + r] += cell[c] * lattice.increment(b, r) / (sq * sq);
                }
            }
        }
        m.iter_mut().for_each(|x| *x /= k as f64);
        v.iter_mut().for_each(|x| *x /= k as f64);
        for b in 0..k {
            let cell = x.cell(k, s, b);
            for c in 0..dim {
                let mut fit = m[c];
                for r in 0..dw {
                    fit += v[c * dw + r] * lattice.increment(b, r);
                }
                residual = residual.max((cell[c] - fit).abs());
            }
        }
    }
    let (mean_vals, d1) = collapse_states(lattice, level, dim, means);
    let (int_vals, d2) = collapse_states(lattice, level, dim * dw, integrands);
    Ok(Representation {
        mean: AdaptedField::from_values(lattice, level, dim, mean_vals)?,
        integrand: AdaptedField::from_values(lattice, level, dim * dw, int_vals)?,
        residual,
        defect: d1.max(d2),
    })
}

/// Backward Itô integral `Σ_{j≥i} h_j ΔB_j` with the integrand evaluated at
/// the right endpoint: `h[j - i]` is an adapted field of level `j + 1`
/// holding a row-major `n x dB` matrix.
///
/// The pathwise sum is formed over the full scenario space and then required
/// to be `F_{t_i}`-measurable; an integrand that depends on W beyond `t_i`
/// yields [`Error::NotAdapted`]. Path layout only.
pub fn backward_ito_integral(lattice: &ScenarioLattice, h: &[AdaptedField], from: usize) -> Result<AdaptedField> {
    lattice.check_level(from)?;
    let n = lattice.steps();
    let db = lattice.db();
    if h.len() < n - from {
        return Err(Error::MissingSegment(from + h.len()));
    }
    let out_dim = match h.first() {
        Some(f) => f.dim() / db,
        None => 1,
    };
    let mut table = PathTable::zeros(lattice, out_dim)?;
    let wall = n * lattice.dw();
    for (offset, hj) in h.iter().take(n - from).enumerate() {
        let j = from + offset;
        hj.check_on(lattice)?;
        if hj.level() != j + 1 || hj.dim() != out_dim * db {
            return Err(Error::Shape(format!(
                "integrand for step {j} must be level {} with dim {}",
                j + 1,
                out_dim * db
            )));
        }
        for idx in 0..table.len() {
            let node = adapted_node(lattice, j + 1, idx);
            let bits = ((idx >> wall) >> (j * db)) & ((1 << db) - 1);
            let m = hj.node(node);
            let e = table.entry_mut(idx);
            for c in 0..out_dim {
                for r in 0..db {
                    e[c] += m[c * db + r] * lattice.increment(bits, r);
                }
            }
        }
    }
    let scale = table.values().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if table.measurability_defect(lattice, from)? > 1e-12 * scale {
        return Err(Error::NotAdapted(from));
    }
    table.project(lattice, from)
}

/// Forward Itô integral `Σ_{j≥i} v_j ΔW_j` with left-endpoint integrands
/// (`v[j - i]` is level `j`, row-major `n x dW`). The result depends on the
/// whole path, so it is returned as a full-scenario table.
pub fn forward_ito_integral(lattice: &ScenarioLattice, v: &[AdaptedField], from: usize) -> Result<PathTable> {
    lattice.check_level(from)?;
    let n = lattice.steps();
    let dw = lattice.dw();
    if v.len() < n - from {
        return Err(Error::MissingSegment(from + v.len()));
    }
    let out_dim = match v.first() {
        Some(f) => f.dim() / dw,
        None => 1,
    };
    let mut table = PathTable::zeros(lattice, out_dim)?;
    for (offset, vj) in v.iter().take(n - from).enumerate() {
        let j = from + offset;
        vj.check_on(lattice)?;
        if vj.level() != j || vj.dim() != out_dim * dw {
            return Err(Error::Shape(format!(
                "integrand for step {j} must be level {j} with dim {}",
                out_dim * dw
            )));
        }
        for idx in 0..table.len() {
            let node = adapted_node(lattice, j, idx);
            let bits = (idx >> (j * dw)) & ((1 << dw) - 1);
            let m = vj.node(node);
            let e = table.entry_mut(idx);
            for c in 0..out_dim {
                for r in 0..dw {
                    e[c] += m[c * dw + r] * lattice.increment(bits, r);
                }
            }
        }
    }
    Ok(table)
}

/// Probability-weighted mean of an adapted field.
pub fn expectation(lattice: &ScenarioLattice, x: &AdaptedField) -> Vec<f64> {
    let mut out = vec![0.0; x.dim()];
    for node in 0..lattice.nodes(x.level()) {
        let w = lattice.node_weight(x.level(), node);
        for (o, v) in out.iter_mut().zip(x.node(node)) {
            *o += w * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(n: usize, dw: usize, db: usize) -> ScenarioLattice {
        ScenarioLattice::build(1.0, n, dw, db).unwrap()
    }

    #[test]
    fn condexp_of_w_terminal_is_w_current() {
        let l = lat(2, 1, 1);
        let x = TransitionField::from_fn(&l, 1, 1, |v, out| out[0] = v.next().w(0));
        let m = condexp(&l, &x).unwrap();
        let expect = AdaptedField::from_fn(&l, 1, 1, |v, out| out[0] = v.w(0));
        assert!(m.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn condexp_of_constant_is_constant() {
        let l = lat(3, 2, 1);
        let x = TransitionField::from_fn(&l, 1, 2, |_, out| out.copy_from_slice(&[1.5, -2.0]));
        let m = condexp(&l, &x).unwrap();
        assert!(m.max_abs_diff(&AdaptedField::constant(&l, 1, &[1.5, -2.0])) < 1e-15);
    }

    #[test]
    fn condexp_kills_w_sign_times_b_sign() {
        // enumerate: mean of (±1) * fixed b-sign is 0 for each b-branch
        let l = lat(1, 1, 1);
        let sq = l.sqrt_dt();
        let x = TransitionField::from_fn(&l, 0, 1, |v, out| out[0] = (v.dw(0) / sq) * (v.db(0) / sq));
        let m = condexp(&l, &x).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn representation_of_increment() {
        let l = lat(3, 1, 1);
        let x = TransitionField::from_fn(&l, 1, 1, |v, out| out[0] = v.dw(0));
        let rep = martingale_coefficient(&l, &x).unwrap();
        assert!(rep.mean.values().iter().all(|v| v.abs() < 1e-15));
        assert!(rep.integrand.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(rep.residual < 1e-15);
    }

    #[test]
    fn representation_of_constant() {
        let l = lat(2, 1, 2);
        let x = TransitionField::from_fn(&l, 0, 1, |_, out| out[0] = 4.0);
        let rep = martingale_coefficient(&l, &x).unwrap();
        assert!(rep.mean.values().iter().all(|v| (v - 4.0).abs() < 1e-15));
        assert!(rep.integrand.values().iter().all(|v| v.abs() < 1e-15));
        assert_eq!(rep.residual, 0.0);
    }

    #[test]
    fn parity_is_unrepresentable_with_two_w_components() {
        // the product of the two step signs is orthogonal to {1, ΔW¹, ΔW²}
        let l = lat(1, 2, 1);
        let sq = l.sqrt_dt();
        let x = TransitionField::from_fn(&l, 0, 1, |v, out| out[0] = (v.dw(0) / sq) * (v.dw(1) / sq));
        let rep = martingale_coefficient(&l, &x).unwrap();
        assert!(rep.mean.values().iter().all(|v| v.abs() < 1e-15));
        assert!(rep.integrand.values().iter().all(|v| v.abs() < 1e-15));
        assert!((rep.residual - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_integral_examples() {
        let l = lat(2, 1, 1);
        // h ≡ 1 → B_T - B_0
        let ones: Vec<_> = (1..=2).map(|j| AdaptedField::constant(&l, j, &[1.0])).collect();
        let got = backward_ito_integral(&l, &ones, 0).unwrap();
        let expect = AdaptedField::from_fn(&l, 0, 1, |v, out| out[0] = v.b_future(0));
        assert!(got.max_abs_diff(&expect) < 1e-15);
        // h ≡ 0 → 0
        let zeros: Vec<_> = (1..=2).map(|j| AdaptedField::constant(&l, j, &[0.0])).collect();
        assert!(backward_ito_integral(&l, &zeros, 0).unwrap().values().iter().all(|v| *v == 0.0));
        // h_j = j + 1 → 1·ΔB_0 + 2·ΔB_1
        let hs: Vec<_> = (1..=2).map(|j| AdaptedField::constant(&l, j, &[j as f64])).collect();
        let got = backward_ito_integral(&l, &hs, 0).unwrap();
        let expect = AdaptedField::from_fn(&l, 0, 1, |v, out| {
            out[0] = v.b_step(0, 0).unwrap() + 2.0 * v.b_step(1, 0).unwrap()
        });
        assert!(got.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn backward_integral_rejects_missing_segment_and_non_adapted() {
        let l = lat(2, 1, 1);
        let one = vec![AdaptedField::constant(&l, 1, &[1.0])];
        assert_eq!(backward_ito_integral(&l, &one, 0), Err(Error::MissingSegment(1)));
        // integrand depending on W of the future is not F_0-measurable
        let hs: Vec<_> = (1..=2)
            .map(|j| AdaptedField::from_fn(&l, j, 1, |v, out| out[0] = v.w(0)))
            .collect();
        assert_eq!(backward_ito_integral(&l, &hs, 0), Err(Error::NotAdapted(0)));
    }

    #[test]
    fn forward_integral_examples() {
        let l = lat(2, 1, 1);
        let ones: Vec<_> = (0..2).map(|j| AdaptedField::constant(&l, j, &[1.0])).collect();
        let got = forward_ito_integral(&l, &ones, 0).unwrap();
        let wt = PathTable::from_adapted(&l, &AdaptedField::from_fn(&l, 2, 1, |v, o| o[0] = v.w(0))).unwrap();
        assert!(crate::linalg::max_abs_diff(got.values(), wt.values()) < 1e-15);

        let zeros: Vec<_> = (0..2).map(|j| AdaptedField::constant(&l, j, &[0.0])).collect();
        assert!(forward_ito_integral(&l, &zeros, 0).unwrap().values().iter().all(|v| *v == 0.0));

        let first: Vec<_> = (0..2).map(|j| AdaptedField::constant(&l, j, &[if j == 0 { 1.0 } else { 0.0 }])).collect();
        let got = forward_ito_integral(&l, &first, 0).unwrap();
        let w1 = PathTable::from_adapted(&l, &AdaptedField::from_fn(&l, 1, 1, |v, o| o[0] = v.w(0))).unwrap();
        assert!(crate::linalg::max_abs_diff(got.values(), w1.values()) < 1e-15);
    }

    #[test]
    fn expectation_examples() {
        let l = ScenarioLattice::build(1.0, 2, 1, 1).unwrap();
        let w1 = AdaptedField::from_fn(&l, 1, 1, |v, o| o[0] = v.w(0));
        assert!(expectation(&l, &w1)[0].abs() < 1e-15);
        assert_eq!(expectation(&l, &AdaptedField::constant(&l, 1, &[3.0]))[0], 3.0);
        let w1sq = AdaptedField::from_fn(&l, 1, 1, |v, o| o[0] = v.w(0) * v.w(0));
        assert!((expectation(&l, &w1sq)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn recombining_condexp_matches_paths_for_position_functions() {
        let p = lat(4, 1, 1);
        let r = ScenarioLattice::builder(1.0, 4, 1, 1).layout(Layout::Recombining).build().unwrap();
        for l in [&p, &r] {
            let x = TransitionField::from_fn(l, 2, 1, |v, o| {
                let nx = v.next();
                o[0] = nx.w(0) * nx.w(0) + 0.3 * v.node().b_future(0) * nx.w(0);
            });
            let m = condexp(l, &x).unwrap();
            let expect = AdaptedField::from_fn(l, 2, 1, |v, o| {
                o[0] = v.w(0) * v.w(0) + l.dt() + 0.3 * v.b_future(0) * v.w(0)
            });
            assert!(m.max_abs_diff(&expect) < 1e-13);
        }
    }
}
