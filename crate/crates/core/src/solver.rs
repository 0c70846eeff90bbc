//! Backward solver on the scenario lattice.
//!
//! One outer (Picard) iteration sweeps the levels `i = N−1, …, 0` with the
//! `v`-arguments of `F` and `J` frozen at the previous iterate `ṽ`:
//!
//! 1. `X_i = u_{i+1} + J(t_{i+1}, u_{i+1}, ṽ_{i+1}) ΔB_i` on every
//!    `(state, W-branch)` cell,
//! 2. `m_i = E[X_i | F_{t_i}]`, `v_i = E[X_i ΔW_iᵀ | F_{t_i}] / dt`,
//! 3. `u_i = (I − dt F(t_i, ·, ṽ_i))^{-1} m_i` node by node.
//!
//! At the terminal level, where no `v` exists, `ṽ_N` is taken to be
//! `ṽ_{N−1}` at the node of the state being processed. The loop starts from
//! `ṽ = 0` and stops when the largest per-level L² change of `(u, v)` drops
//! below `picard_tol`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::coefficients::{rescale, CoefficientSystem, Omega};
use crate::lattice::{collapse_with, martingale_coefficient, AdaptedField, Layout, ScenarioLattice, TransitionField};
use crate::linalg::Lu;
use crate::par::{self, records_init};
use crate::resolvent::{resolve_into, FrozenDrift, ResolventConfig, Workspace};
use crate::{Error, Result};

/// When to apply the exponential change of variables before solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RescalePolicy {
    /// Rescale only when the implicit step is at risk, i.e. `dt·K₁/2 >= 1/2`.
    #[default]
    Auto,
    /// Rescale whenever `K₁ > 0`.
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Inner root solve; its `eps` is replaced by `dt`.
    pub resolvent: ResolventConfig,
    /// Keep every outer iterate of `v` in the diagnostics.
    pub record_iterates: bool,
    pub rescale: RescalePolicy,
    /// Largest state-to-node disagreement accepted on the recombining layout.
    pub recombination_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            picard_tol: 1e-10,
            picard_max: 200,
            resolvent: ResolventConfig::default(),
            record_iterates: false,
            rescale: RescalePolicy::Auto,
            recombination_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.picard_tol > 0.0) || self.picard_max == 0 || !(self.recombination_tol > 0.0) {
            return Err(Error::Config(format!(
                "solver needs picard_tol > 0, picard_max >= 1, recombination_tol > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub picard_iterations: usize,
    /// `max(u_deltas[k], v_deltas[k])`.
    pub deltas: Vec<f64>,
    pub u_deltas: Vec<f64>,
    pub v_deltas: Vec<f64>,
    pub resolvent_residual_max: f64,
    pub representation_residual_max: f64,
    /// Largest state-to-node disagreement in the converged sweep. Earlier
    /// sweeps may disagree more; their values are projected onto the nodes.
    pub recombination_defect_max: f64,
    /// Nodes where the inner Newton step saw a non-monotone Jacobian.
    pub non_monotone_nodes: usize,
    /// Rate of the exponential rescaling applied, zero if none.
    pub rescale_rate: f64,
    /// Outer iterates of `v` (only with `record_iterates`).
    pub v_iterates: Vec<Vec<AdaptedField>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    /// Levels `0..=N`, dimension `n`.
    pub u: Vec<AdaptedField>,
    /// Levels `0..N`, dimension `n·dW` (row-major `n x dW`).
    pub v: Vec<AdaptedField>,
    pub diagnostics: Diagnostics,
}

/// Statistics of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepStats {
    pub resolvent_residual_max: f64,
    pub representation_residual_max: f64,
    pub recombination_defect_max: f64,
    pub recombination_defect_level: usize,
    pub non_monotone_nodes: usize,
}

fn rescale_rate(sys: &CoefficientSystem, lattice: &ScenarioLattice, policy: RescalePolicy) -> f64 {
    let k1 = sys.constants().k1;
    match policy {
        RescalePolicy::Never => 0.0,
        RescalePolicy::Always => k1,
        RescalePolicy::Auto => {
            if lattice.dt() * k1 * 0.5 >= 0.5 {
                k1
            } else {
                0.0
            }
        }
    }
}

/// Solves from `ṽ = 0`.
pub fn solve(sys: &CoefficientSystem, lattice: &ScenarioLattice, cfg: &SolverConfig) -> Result<DiscreteSolution> {
    solve_with(sys, lattice, cfg, None)
}

/// Solves from a given initial `ṽ` (levels `0..N`, dimension `n·dW`).
pub fn solve_with(
    sys: &CoefficientSystem,
    lattice: &ScenarioLattice,
    cfg: &SolverConfig,
    v_init: Option<&[AdaptedField]>,
) -> Result<DiscreteSolution> {
    cfg.validate()?;
    sys.check_lattice(lattice)?;
    let rate = rescale_rate(sys, lattice, cfg.rescale);
    let work = if rate != 0.0 { rescale(sys, rate) } else { sys.clone() };
    let theta = |level: usize| libm::exp(0.5 * rate * lattice.time(level));

    let n = sys.n();
    let zdim = n * sys.dw();
    let steps = lattice.steps();
    let mut v_prev: Vec<AdaptedField> = match v_init {
        Some(v) => {
            if v.len() != steps || v.iter().enumerate().any(|(i, f)| f.level() != i || f.dim() != zdim) {
                return Err(Error::Shape("initial v must hold levels 0..N of dimension n*dW".into()));
            }
            v.iter()
                .map(|f| {
                    let mut g = f.clone();
                    let th = theta(f.level());
                    g.values_mut().iter_mut().for_each(|x| *x *= th);
                    g
                })
                .collect()
        }
        None => (0..steps).map(|i| AdaptedField::zeros(lattice, i, zdim)).collect(),
    };
    let terminal = work.terminal_field(lattice)?;

    let mut diag = Diagnostics {
        rescale_rate: rate,
        ..Default::default()
    };
    let mut u_prev: Option<Vec<AdaptedField>> = None;
    let mut result = None;
    for k in 1..=cfg.picard_max {
        let (u, v, stats) = sweep(&work, lattice, cfg, &terminal, &v_prev)?;
        diag.resolvent_residual_max = diag.resolvent_residual_max.max(stats.resolvent_residual_max);
        diag.representation_residual_max = diag.representation_residual_max.max(stats.representation_residual_max);
        diag.recombination_defect_max = stats.recombination_defect_max;
        diag.non_monotone_nodes = diag.non_monotone_nodes.max(stats.non_monotone_nodes);
        let du = match &u_prev {
            Some(up) => max_level_distance(lattice, &u, up),
            None => {
                let zeros: Vec<AdaptedField> = u.iter().map(|f| AdaptedField::zeros(lattice, f.level(), n)).collect();
                max_level_distance(lattice, &u, &zeros)
            }
        };
        let dv = max_level_distance(lattice, &v, &v_prev);
        diag.u_deltas.push(du);
        diag.v_deltas.push(dv);
        diag.deltas.push(du.max(dv));
        diag.picard_iterations = k;
        if cfg.record_iterates {
            diag.v_iterates.push(v.clone());
        }
        let done = du.max(dv) < cfg.picard_tol;
        if done {
            if stats.recombination_defect_max > cfg.recombination_tol {
                return Err(Error::NotRecombinable {
                    level: stats.recombination_defect_level,
                    defect: stats.recombination_defect_max,
                });
            }
            result = Some(u);
            v_prev = v;
            break;
        }
        u_prev = Some(u);
        v_prev = v;
    }
    let Some(mut u) = result else {
        return Err(Error::PicardNonConvergence {
            iterations: cfg.picard_max,
            deltas: diag.deltas,
        });
    };
    let mut v = v_prev;
    if rate != 0.0 {
        for f in u.iter_mut().chain(v.iter_mut()) {
            let inv = 1.0 / theta(f.level());
            f.values_mut().iter_mut().for_each(|x| *x *= inv);
        }
        for it in diag.v_iterates.iter_mut() {
            for f in it.iter_mut() {
                let inv = 1.0 / theta(f.level());
                f.values_mut().iter_mut().for_each(|x| *x *= inv);
            }
        }
    }
    Ok(DiscreteSolution { u, v, diagnostics: diag })
}

fn max_level_distance(lattice: &ScenarioLattice, a: &[AdaptedField], b: &[AdaptedField]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.l2_distance(y, lattice))
        .fold(0.0, f64::max)
}

/// One outer iteration with the `v`-arguments frozen at `v_prev`. No
/// rescaling is applied; `sys` is used as given.
pub fn picard_step(
    sys: &CoefficientSystem,
    lattice: &ScenarioLattice,
    cfg: &SolverConfig,
    v_prev: &[AdaptedField],
) -> Result<(Vec<AdaptedField>, Vec<AdaptedField>, SweepStats)> {
    cfg.validate()?;
    sys.check_lattice(lattice)?;
    let zdim = sys.n() * sys.dw();
    if v_prev.len() != lattice.steps() || v_prev.iter().enumerate().any(|(i, f)| f.level() != i || f.dim() != zdim) {
        return Err(Error::Shape("v_prev must hold levels 0..N of dimension n*dW".into()));
    }
    let terminal = sys.terminal_field(lattice)?;
    sweep(sys, lattice, cfg, &terminal, v_prev)
}

struct StepScratch {
    j: Vec<f64>,
    x: Vec<f64>,
    ws: Workspace,
    y: Vec<f64>,
}

fn sweep(
    sys: &CoefficientSystem,
    lattice: &ScenarioLattice,
    cfg: &SolverConfig,
    terminal: &AdaptedField,
    v_prev: &[AdaptedField],
) -> Result<(Vec<AdaptedField>, Vec<AdaptedField>, SweepStats)> {
    let n = sys.n();
    let dw = sys.dw();
    let db = sys.db();
    let zdim = n * dw;
    let steps = lattice.steps();
    let kbr = lattice.branches();
    let dt = lattice.dt();
    let rcfg = ResolventConfig {
        eps: dt,
        ..cfg.resolvent
    };
    let mut stats = SweepStats::default();
    let mut u: Vec<Option<AdaptedField>> = (0..=steps).map(|_| None).collect();
    let mut v: Vec<Option<AdaptedField>> = (0..steps).map(|_| None).collect();
    u[steps] = Some(terminal.clone());
    let init = || StepScratch {
        j: vec![0.0; n * db],
        x: vec![0.0; kbr * n],
        ws: Workspace::new(n),
        y: vec![0.0; n],
    };

    for i in (0..steps).rev() {
        let u_next = u[i + 1].as_ref().expect("filled by the previous level");
        let t_next = lattice.time(i + 1);
        let states = lattice.states(i);
        // per state: m (n), v (n·dW), representation residual (1)
        let rec = n + zdim + 1;
        let mut records = vec![0.0; states * rec];
        let plan_nodes: Vec<usize> = par::map_range(states, |st| lattice.state_node(i, st));
        let plan_next: Vec<usize> = par::map_range(states * kbr, |c| lattice.state_next(i, c / kbr, c % kbr));
        records_init(&mut records, rec, init, |s, state, out| {
            let node = plan_nodes[state];
            let bbits = lattice.state_b_bits(i, state);
            for br in 0..kbr {
                let next = plan_next[state * kbr + br];
                let un = u_next.node(next);
                let z = if i + 1 < steps {
                    v_prev[i + 1].node(next)
                } else {
                    v_prev[steps - 1].node(node)
                };
                sys.diffusion(t_next, un, z, Omega { level: i + 1, node: next }, &mut s.j);
                let x = &mut s.x[br * n..(br + 1) * n];
                for c in 0..n {
                    let mut val = un[c];
                    for r in 0..db {
                        val += s.j[c * db + r] * lattice.increment(bbits, r);
                    }
                    x[c] = val;
                }
            }
            let (m, rest) = out.split_at_mut(n);
            let (vv, resid) = rest.split_at_mut(zdim);
            m.fill(0.0);
            vv.fill(0.0);
            for br in 0..kbr {
                let x = &s.x[br * n..(br + 1) * n];
                for c in 0..n {
                    m[c] += x[c];
                    for r in 0..dw {
                        vv[c * dw + r] += x[c] * lattice.increment(br, r);
                    }
                }
            }
            let inv_k = 1.0 / kbr as f64;
            m.iter_mut().for_each(|a| *a *= inv_k);
            vv.iter_mut().for_each(|a| *a *= inv_k / dt);
            let mut r_max: f64 = 0.0;
            for br in 0..kbr {
                let x = &s.x[br * n..(br + 1) * n];
                for c in 0..n {
                    let mut fit = m[c];
                    for r in 0..dw {
                        fit += vv[c * dw + r] * lattice.increment(br, r);
                    }
                    r_max = r_max.max((x[c] - fit).abs());
                }
            }
            resid[0] = r_max;
        });
        let mut per_state = Vec::with_capacity(states * (n + zdim));
        for chunk in records.chunks(rec) {
            stats.representation_residual_max = stats.representation_residual_max.max(chunk[n + zdim]);
            per_state.extend_from_slice(&chunk[..n + zdim]);
        }
        let (collapsed, defect) = match lattice.layout() {
            Layout::Paths => (per_state, 0.0),
            Layout::Recombining => {
                let weights: Vec<f64> = par::map_range(states, |st| lattice.state_weight(i, st));
                collapse_with(lattice.nodes(i), n + zdim, per_state, &plan_nodes, &weights)
            }
        };
        if defect > stats.recombination_defect_max {
            stats.recombination_defect_max = defect;
            stats.recombination_defect_level = i;
        }

        // implicit drift step, node by node: u (n), residual, non-monotone flag, failure flag
        let nodes = lattice.nodes(i);
        let t_i = lattice.time(i);
        let out_rec = n + 3;
        let mut solved = vec![0.0; nodes * out_rec];
        let v_frozen = &v_prev[i];
        records_init(&mut solved, out_rec, init, |s, node, out| {
            let m = &collapsed[node * (n + zdim)..node * (n + zdim) + n];
            let map = FrozenDrift {
                sys,
                t: t_i,
                z: v_frozen.node(node),
                omega: Omega { level: i, node },
            };
            match resolve_into(&map, &rcfg, m, &mut s.y, &mut s.ws) {
                Ok(res) => {
                    out[..n].copy_from_slice(&s.y);
                    out[n] = res.residual;
                    out[n + 1] = if res.non_monotone { 1.0 } else { 0.0 };
                    out[n + 2] = 0.0;
                }
                Err(Error::ResolventNonConvergence { residual, .. }) => {
                    out[n] = residual;
                    out[n + 2] = 1.0;
                }
                Err(_) => {
                    out[n] = f64::NAN;
                    out[n + 2] = 1.0;
                }
            }
        });
        let mut u_vals = Vec::with_capacity(nodes * n);
        let mut v_vals = Vec::with_capacity(nodes * zdim);
        for (node, chunk) in solved.chunks(out_rec).enumerate() {
            if chunk[n + 2] != 0.0 {
                return Err(Error::ResolventAt {
                    level: i,
                    node,
                    residual: chunk[n],
                });
            }
            stats.resolvent_residual_max = stats.resolvent_residual_max.max(chunk[n]);
            if chunk[n + 1] != 0.0 {
                stats.non_monotone_nodes += 1;
            }
            u_vals.extend_from_slice(&chunk[..n]);
            v_vals.extend_from_slice(&collapsed[node * (n + zdim) + n..(node + 1) * (n + zdim)]);
        }
        u[i] = Some(AdaptedField::from_values(lattice, i, n, u_vals)?);
        v[i] = Some(AdaptedField::from_values(lattice, i, zdim, v_vals)?);
    }
    Ok((
        u.into_iter().map(|f| f.expect("all levels filled")).collect(),
        v.into_iter().map(|f| f.expect("all levels filled")).collect(),
        stats,
    ))
}

/// Largest entry of
/// `u_i − u_{i+1} − F(t_i,u_i,v_i)dt − J(t_{i+1},u_{i+1},v_{i+1})ΔB_i + v_iΔW_i`
/// over all levels and `(state, W-branch)` cells, with `v_N := v_{N−1}` as in
/// the scheme. Zero up to rounding and solver tolerances when `dW = 1`.
pub fn discrete_residual(sol: &DiscreteSolution, sys: &CoefficientSystem, lattice: &ScenarioLattice) -> Result<f64> {
    sys.check_lattice(lattice)?;
    let n = sys.n();
    let dw = sys.dw();
    let db = sys.db();
    let steps = lattice.steps();
    check_solution_shape(sol, sys, lattice)?;
    let dt = lattice.dt();
    let kbr = lattice.branches();
    let mut worst: f64 = 0.0;
    let mut f = vec![0.0; n];
    let mut j = vec![0.0; n * db];
    for i in 0..steps {
        for state in 0..lattice.states(i) {
            let node = lattice.state_node(i, state);
            let ui = sol.u[i].node(node);
            let vi = sol.v[i].node(node);
            sys.drift(lattice.time(i), ui, vi, Omega { level: i, node }, &mut f);
            let bbits = lattice.state_b_bits(i, state);
            for br in 0..kbr {
                let next = lattice.state_next(i, state, br);
                let un = sol.u[i + 1].node(next);
                let vn = if i + 1 < steps { sol.v[i + 1].node(next) } else { vi };
                sys.diffusion(lattice.time(i + 1), un, vn, Omega { level: i + 1, node: next }, &mut j);
                for c in 0..n {
                    let mut r = ui[c] - un[c] - f[c] * dt;
                    for q in 0..db {
                        r -= j[c * db + q] * lattice.increment(bbits, q);
                    }
                    for q in 0..dw {
                        r += vi[c * dw + q] * lattice.increment(br, q);
                    }
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    Ok(worst)
}

pub(crate) fn check_solution_shape(sol: &DiscreteSolution, sys: &CoefficientSystem, lattice: &ScenarioLattice) -> Result<()> {
    let steps = lattice.steps();
    let ok = sol.u.len() == steps + 1
        && sol.v.len() == steps
        && sol.u.iter().enumerate().all(|(i, f)| f.level() == i && f.dim() == sys.n() && f.len() == lattice.nodes(i))
        && sol
            .v
            .iter()
            .enumerate()
            .all(|(i, f)| f.level() == i && f.dim() == sys.n() * sys.dw() && f.len() == lattice.nodes(i));
    if ok {
        Ok(())
    } else {
        Err(Error::Shape("solution does not match the system and lattice".into()))
    }
}

/// Empirical contraction of the outer iteration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contraction {
    /// `deltas[k+1] / deltas[k]` (omitted where `deltas[k]` is zero).
    pub ratios: Vec<f64>,
    /// `exp` of the least-squares slope of `log deltas` against the
    /// iteration index; `0` when an iteration reproduced its input exactly.
    pub fitted_ratio: f64,
}

impl Contraction {
    pub fn contracting(&self) -> bool {
        self.fitted_ratio < 1.0
    }
}

pub fn contraction_diagnostics(sol: &DiscreteSolution) -> Result<Contraction> {
    contraction_from_deltas(&sol.diagnostics.deltas)
}

/// Contraction fit from a delta history (also usable on the history carried
/// by [`Error::PicardNonConvergence`]).
pub fn contraction_from_deltas(deltas: &[f64]) -> Result<Contraction> {
    let ratios: Vec<f64> = deltas
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    if deltas.iter().skip(1).any(|d| *d == 0.0) {
        return Ok(Contraction {
            ratios,
            fitted_ratio: 0.0,
        });
    }
    if deltas.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "contraction fit needs at least 3 outer iterations, got {}",
            deltas.len()
        )));
    }
    let pts: Vec<(f64, f64)> = deltas
        .iter()
        .enumerate()
        .map(|(k, d)| (k as f64, libm::log(*d)))
        .collect();
    let slope = crate::linalg::least_squares_slope(&pts);
    Ok(Contraction {
        ratios,
        fitted_ratio: libm::exp(slope),
    })
}

/// Linear system `F(u) = a·u`, `J(u)[:, r] = j0[:, r] + L_r u` for the
/// oracle below. `a` and each `L_r` are `n x n`, `j0` is `n x dB`, all
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOracle {
    pub n: usize,
    pub db: usize,
    pub a: Vec<f64>,
    pub j0: Vec<f64>,
    pub jl: Vec<Vec<f64>>,
}

impl LinearOracle {
    /// Drift `a·u` and constant diffusion `j0`.
    pub fn affine(n: usize, db: usize, a: Vec<f64>, j0: Vec<f64>) -> Self {
        Self {
            n,
            db,
            a,
            j0,
            jl: vec![vec![0.0; n * n]; db],
        }
    }
}

/// Backward recursion `u_i = (I − a dt)^{-1} E[u_{i+1} + J(u_{i+1})ΔB_i | F_{t_i}]`
/// built on the generic lattice operations, with no Picard loop and no
/// nonlinear solve. Independent of [`solve`] by construction.
pub fn solve_linear_oracle(sys: &LinearOracle, g: &AdaptedField, lattice: &ScenarioLattice) -> Result<DiscreteSolution> {
    let n = sys.n;
    let steps = lattice.steps();
    if g.level() != steps || g.dim() != n || lattice.db() != sys.db {
        return Err(Error::Shape("oracle terminal value must be level N with dimension n".into()));
    }
    if sys.a.len() != n * n || sys.j0.len() != n * sys.db || sys.jl.len() != sys.db || sys.jl.iter().any(|l| l.len() != n * n) {
        return Err(Error::Shape("oracle matrices have the wrong sizes".into()));
    }
    let dt = lattice.dt();
    let mut step = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            step[r * n + c] = if r == c { 1.0 } else { 0.0 } - dt * sys.a[r * n + c];
        }
    }
    let lu = Lu::factor(step, n).ok_or(Error::SingularStep)?;
    let mut u = vec![g.clone()];
    let mut v = Vec::with_capacity(steps);
    let mut rep_max: f64 = 0.0;
    let mut defect_max: f64 = 0.0;
    for i in (0..steps).rev() {
        let next = u.last().expect("terminal pushed first");
        let x = TransitionField::from_fn(lattice, i, n, |cell, out| {
            let un = next.node(cell.next().index());
            for c in 0..n {
                let mut val = un[c];
                for r in 0..sys.db {
                    let mut jr = sys.j0[c * sys.db + r];
                    for k in 0..n {
                        jr += sys.jl[r][c * n + k] * un[k];
                    }
                    val += jr * cell.db(r);
                }
                out[c] = val;
            }
        });
        let rep = martingale_coefficient(lattice, &x)?;
        rep_max = rep_max.max(rep.residual);
        defect_max = defect_max.max(rep.defect);
        let mut ui = AdaptedField::zeros(lattice, i, n);
        let mut buf = vec![0.0; n];
        for node in 0..lattice.nodes(i) {
            lu.solve(rep.mean.node(node), &mut buf);
            ui.node_mut(node).copy_from_slice(&buf);
        }
        u.push(ui);
        v.push(rep.integrand);
    }
    u.reverse();
    v.reverse();
    Ok(DiscreteSolution {
        u,
        v,
        diagnostics: Diagnostics {
            representation_residual_max: rep_max,
            recombination_defect_max: defect_max,
            ..Default::default()
        },
    })
}
