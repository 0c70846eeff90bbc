//! Finite model of the two independent Brownian drivers.
//!
//! Each of the `N` steps draws `dW` increments for the forward driver `W` and
//! `dB` increments for the backward driver `B`, each `±√dt` with probability
//! one half. Information at level `i` is the mixed sigma-algebra
//! `F_{t_i} = F^W_{t_i} ∨ F^B_{t_i,T}`: the past of `W` and the future
//! increments of `B`.
//!
//! Two node layouts are available:
//!
//! * [`Layout::Paths`] enumerates every bit pattern. It is exact for any
//!   adapted data, including path-dependent terminal values, and is capped in
//!   size (default `2^26` entries per level table).
//! * [`Layout::Recombining`] stores only per-component up-move counts, so a
//!   level costs `(i+1)^dW · (N-i+1)^dB` entries. Conditioning is exact with
//!   respect to the counts; it reproduces the path solution exactly whenever
//!   the solution is a function of `(W_{t_i}, B_T - B_{t_i})`, which the
//!   solver verifies through the recombination defect.
//!
//! Path layout index packing: W bits in chronological order (step-major,
//! component-minor) occupy the low `i·dW` bits, followed by the B bits of
//! steps `i..N` in chronological order. A set bit is a `+√dt` move.

mod field;
mod ops;

pub use field::{AdaptedField, PathTable, TransitionField, TransitionView};
pub use ops::{
    backward_ito_integral, condexp, expectation, forward_ito_integral, martingale_coefficient,
    Representation,
};
pub(crate) use field::{adapted_node, path_branch};
pub(crate) use ops::collapse_with;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::binomial_prob;
use crate::{Error, Result};

/// Default cap on the number of entries of a single level table.
pub const DEFAULT_CAP: usize = 1 << 26;

/// Largest driver dimension supported by the recombining layout.
pub const MAX_RECOMBINING_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("at least one time step is required".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_i`; `t_N` is the horizon exactly.
    pub fn time(&self, level: usize) -> f64 {
        if level == self.steps {
            self.horizon
        } else {
            self.horizon * level as f64 / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Layout {
    #[default]
    Paths,
    Recombining,
}

#[derive(Debug, Clone)]
pub struct LatticeBuilder {
    horizon: f64,
    steps: usize,
    dw: usize,
    db: usize,
    layout: Layout,
    cap: usize,
}

impl LatticeBuilder {
    pub fn layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn build(self) -> Result<ScenarioLattice> {
        let grid = TimeGrid::new(self.horizon, self.steps)?;
        if self.dw == 0 || self.db == 0 {
            return Err(Error::InvalidArgument("driver dimensions must be at least 1".into()));
        }
        let n = self.steps;
        match self.layout {
            Layout::Paths => {
                for level in 0..=n {
                    let bits = level * self.dw + (n - level) * self.db;
                    if bits >= usize::BITS as usize - 1 || (1usize << bits) > self.cap {
                        return Err(Error::Sizing {
                            product: format!(
                                "2^(i*dW + (N-i)*dB) with i={level}, N={n}, dW={}, dB={}",
                                self.dw, self.db
                            ),
                            entries: libm::pow(2.0, bits as f64),
                            cap: self.cap,
                        });
                    }
                }
            }
            Layout::Recombining => {
                if self.dw > MAX_RECOMBINING_DIM || self.db > MAX_RECOMBINING_DIM {
                    return Err(Error::InvalidArgument(format!(
                        "recombining layout supports driver dimensions up to {MAX_RECOMBINING_DIM}"
                    )));
                }
                for level in 0..=n {
                    let entries = libm::pow((level + 1) as f64, self.dw as f64)
                        * libm::pow((n - level + 1) as f64, self.db as f64)
                        * libm::pow(2.0, self.db as f64);
                    if entries > self.cap as f64 {
                        return Err(Error::Sizing {
                            product: format!(
                                "(i+1)^dW * (N-i+1)^dB * 2^dB with i={level}, N={n}, dW={}, dB={}",
                                self.dw, self.db
                            ),
                            entries,
                            cap: self.cap,
                        });
                    }
                }
            }
        }
        let probs = match self.layout {
            Layout::Paths => Vec::new(),
            Layout::Recombining => (0..=n)
                .map(|m| (0..=m).map(|k| binomial_prob(m, k)).collect())
                .collect(),
        };
        Ok(ScenarioLattice {
            grid,
            dw: self.dw,
            db: self.db,
            layout: self.layout,
            sqrt_dt: libm::sqrt(grid.dt()),
            probs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioLattice {
    grid: TimeGrid,
    dw: usize,
    db: usize,
    layout: Layout,
    sqrt_dt: f64,
    /// `probs[m][k] = C(m, k) / 2^m`, recombining layout only.
    probs: Vec<Vec<f64>>,
}

impl ScenarioLattice {
    pub fn builder(horizon: f64, steps: usize, dw: usize, db: usize) -> LatticeBuilder {
        LatticeBuilder {
            horizon,
            steps,
            dw,
            db,
            layout: Layout::Paths,
            cap: DEFAULT_CAP,
        }
    }

    /// Path layout with the default size cap.
    pub fn build(horizon: f64, steps: usize, dw: usize, db: usize) -> Result<Self> {
        Self::builder(horizon, steps, dw, db).build()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, level: usize) -> f64 {
        self.grid.time(level)
    }

    pub fn dw(&self) -> usize {
        self.dw
    }

    pub fn db(&self) -> usize {
        self.db
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// The two-point martingale representation is exact iff `dW == 1`.
    pub fn exact_representation(&self) -> bool {
        self.dw == 1
    }

    pub(crate) fn check_level(&self, level: usize) -> Result<()> {
        if level > self.steps() {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_step(&self, level: usize) -> Result<()> {
        if level >= self.steps() {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.steps() - 1,
            });
        }
        Ok(())
    }

    /// Number of W-outcomes distinguished at `level`.
    pub fn w_len(&self, level: usize) -> usize {
        match self.layout {
            Layout::Paths => 1 << (level * self.dw),
            Layout::Recombining => pow_usize(level + 1, self.dw),
        }
    }

    /// Number of B-outcomes distinguished at `level`.
    pub fn b_len(&self, level: usize) -> usize {
        let rest = self.steps() - level;
        match self.layout {
            Layout::Paths => 1 << (rest * self.db),
            Layout::Recombining => pow_usize(rest + 1, self.db),
        }
    }

    /// Entries of an adapted table at `level`.
    pub fn nodes(&self, level: usize) -> usize {
        self.w_len(level) * self.b_len(level)
    }

    /// Per-level table sizes for levels `0..=N`.
    pub fn level_sizes(&self) -> Vec<usize> {
        (0..=self.steps()).map(|l| self.nodes(l)).collect()
    }

    /// W-branches per step, `2^dW`.
    pub fn branches(&self) -> usize {
        1 << self.dw
    }

    /// Information states entering the step from `level` to `level + 1`:
    /// an adapted node refined by the B increment of that step.
    pub fn states(&self, level: usize) -> usize {
        match self.layout {
            Layout::Paths => self.nodes(level),
            Layout::Recombining => {
                let rest = self.steps() - level;
                self.w_len(level) * pow_usize(rest, self.db) * (1 << self.db)
            }
        }
    }

    /// Adapted node at `level` that a state belongs to.
    pub fn state_node(&self, level: usize, state: usize) -> usize {
        match self.layout {
            Layout::Paths => state,
            Layout::Recombining => {
                let (wi, kb_next, bits) = self.split_state(level, state);
                let rest = self.steps() - level;
                let mut kb = [0usize; MAX_RECOMBINING_DIM];
                decode(kb_next, rest, self.db, &mut kb);
                for (c, k) in kb.iter_mut().enumerate().take(self.db) {
                    *k += (bits >> c) & 1;
                }
                wi + self.w_len(level) * encode(&kb[..self.db], rest + 1)
            }
        }
    }

    /// B-increment bits of step `level` carried by a state.
    pub fn state_b_bits(&self, level: usize, state: usize) -> usize {
        match self.layout {
            Layout::Paths => (state >> (level * self.dw)) & ((1 << self.db) - 1),
            Layout::Recombining => self.split_state(level, state).2,
        }
    }

    /// Node at `level + 1` reached from `state` along W-branch `branch`.
    pub fn state_next(&self, level: usize, state: usize, branch: usize) -> usize {
        match self.layout {
            Layout::Paths => {
                let wbits = level * self.dw;
                let w = state & ((1 << wbits) - 1);
                let b = state >> wbits;
                let w2 = w | (branch << wbits);
                let b2 = b >> self.db;
                w2 | (b2 << (wbits + self.dw))
            }
            Layout::Recombining => {
                let (wi, kb_next, _) = self.split_state(level, state);
                let mut kw = [0usize; MAX_RECOMBINING_DIM];
                decode(wi, level + 1, self.dw, &mut kw);
                for (c, k) in kw.iter_mut().enumerate().take(self.dw) {
                    *k += (branch >> c) & 1;
                }
                encode(&kw[..self.dw], level + 2) + self.w_len(level + 1) * kb_next
            }
        }
    }

    fn split_state(&self, level: usize, state: usize) -> (usize, usize, usize) {
        let nw = self.w_len(level);
        let nbn = pow_usize(self.steps() - level, self.db);
        let wi = state % nw;
        let rest = state / nw;
        (wi, rest % nbn, rest / nbn)
    }

    /// Probability of an adapted node.
    pub fn node_weight(&self, level: usize, node: usize) -> f64 {
        match self.layout {
            Layout::Paths => 1.0 / self.nodes(level) as f64,
            Layout::Recombining => {
                let nw = self.w_len(level);
                let rest = self.steps() - level;
                let mut k = [0usize; MAX_RECOMBINING_DIM];
                let mut p = 1.0;
                decode(node % nw, level + 1, self.dw, &mut k);
                for &kc in &k[..self.dw] {
                    p *= self.probs[level][kc];
                }
                decode(node / nw, rest + 1, self.db, &mut k);
                for &kc in &k[..self.db] {
                    p *= self.probs[rest][kc];
                }
                p
            }
        }
    }

    /// Probability of a state (node refined by the step's B bits).
    pub fn state_weight(&self, level: usize, state: usize) -> f64 {
        match self.layout {
            Layout::Paths => 1.0 / self.states(level) as f64,
            Layout::Recombining => {
                let (wi, kb_next, _) = self.split_state(level, state);
                let rest = self.steps() - level;
                let mut k = [0usize; MAX_RECOMBINING_DIM];
                let mut p = 1.0;
                decode(wi, level + 1, self.dw, &mut k);
                for &kc in &k[..self.dw] {
                    p *= self.probs[level][kc];
                }
                decode(kb_next, rest, self.db, &mut k);
                for &kc in &k[..self.db] {
                    p *= self.probs[rest - 1][kc];
                }
                p / (1 << self.db) as f64
            }
        }
    }

    /// Probability weights of all nodes of a level.
    pub fn node_weights(&self, level: usize) -> Vec<f64> {
        match self.layout {
            Layout::Paths => vec![1.0 / self.nodes(level) as f64; self.nodes(level)],
            Layout::Recombining => (0..self.nodes(level)).map(|n| self.node_weight(level, n)).collect(),
        }
    }

    /// Increment value of component `c` for a packed bit pattern.
    #[inline]
    pub fn increment(&self, bits: usize, c: usize) -> f64 {
        if (bits >> c) & 1 == 1 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    pub fn view(&self, level: usize, node: usize) -> NodeView<'_> {
        NodeView {
            lattice: self,
            level,
            node,
        }
    }
}

/// Read-only handle on one adapted node.
#[derive(Clone, Copy)]
pub struct NodeView<'a> {
    lattice: &'a ScenarioLattice,
    level: usize,
    node: usize,
}

impl<'a> NodeView<'a> {
    pub fn lattice(&self) -> &'a ScenarioLattice {
        self.lattice
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn index(&self) -> usize {
        self.node
    }

    pub fn time(&self) -> f64 {
        self.lattice.time(self.level)
    }

    pub fn w_index(&self) -> usize {
        self.node % self.lattice.w_len(self.level)
    }

    pub fn b_index(&self) -> usize {
        self.node / self.lattice.w_len(self.level)
    }

    /// `W_{t_i}` component `c`.
    pub fn w(&self, c: usize) -> f64 {
        let l = self.lattice;
        match l.layout {
            Layout::Paths => (0..self.level)
                .map(|j| l.increment(self.w_index() >> (j * l.dw), c))
                .sum(),
            Layout::Recombining => {
                let mut k = [0usize; MAX_RECOMBINING_DIM];
                decode(self.w_index(), self.level + 1, l.dw, &mut k);
                (2.0 * k[c] as f64 - self.level as f64) * l.sqrt_dt
            }
        }
    }

    /// `B_T - B_{t_i}` component `c`.
    pub fn b_future(&self, c: usize) -> f64 {
        let l = self.lattice;
        let rest = l.steps() - self.level;
        match l.layout {
            Layout::Paths => (0..rest)
                .map(|j| l.increment(self.b_index() >> (j * l.db), c))
                .sum(),
            Layout::Recombining => {
                let mut k = [0usize; MAX_RECOMBINING_DIM];
                decode(self.b_index(), rest + 1, l.db, &mut k);
                (2.0 * k[c] as f64 - rest as f64) * l.sqrt_dt
            }
        }
    }

    /// Increment `ΔW_step` component `c`, known when `step < level`.
    /// `None` on the recombining layout, which does not keep paths.
    pub fn w_step(&self, step: usize, c: usize) -> Option<f64> {
        let l = self.lattice;
        if l.layout != Layout::Paths || step >= self.level {
            return None;
        }
        Some(l.increment(self.w_index() >> (step * l.dw), c))
    }

    /// Increment `ΔB_step` component `c`, known when `step >= level`.
    pub fn b_step(&self, step: usize, c: usize) -> Option<f64> {
        let l = self.lattice;
        if l.layout != Layout::Paths || step < self.level || step >= l.steps() {
            return None;
        }
        Some(l.increment(self.b_index() >> ((step - self.level) * l.db), c))
    }
}

pub(crate) fn pow_usize(base: usize, exp: usize) -> usize {
    (0..exp).fold(1usize, |acc, _| acc * base)
}

fn decode(mut index: usize, radix: usize, digits: usize, out: &mut [usize]) {
    for d in out.iter_mut().take(digits) {
        *d = index % radix;
        index /= radix;
    }
}

fn encode(digits: &[usize], radix: usize) -> usize {
    digits.iter().rev().fold(0, |acc, &d| acc * radix + d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes_match_counting() {
        let l = ScenarioLattice::build(1.0, 2, 1, 1).unwrap();
        assert_eq!(l.level_sizes(), vec![4, 4, 4]);
        let l = ScenarioLattice::build(1.0, 1, 2, 1).unwrap();
        assert_eq!(l.level_sizes(), vec![2, 4]);
        assert!(!l.exact_representation());
    }

    #[test]
    fn increments_are_root_dt() {
        let l = ScenarioLattice::build(2.0, 4, 1, 1).unwrap();
        assert_eq!(l.dt(), 0.5);
        assert!((l.increment(1, 0) - libm::sqrt(0.5)).abs() < 1e-15);
        assert!((l.increment(0, 0) + libm::sqrt(0.5)).abs() < 1e-15);
        assert!((l.dt() * 4.0 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cap_violation_names_product() {
        let err = ScenarioLattice::builder(1.0, 20, 1, 1).cap(1 << 10).build().unwrap_err();
        match err {
            Error::Sizing { product, .. } => assert!(product.contains("N=20")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(ScenarioLattice::build(0.0, 2, 1, 1).is_err());
        assert!(ScenarioLattice::build(1.0, 0, 1, 1).is_err());
        assert!(ScenarioLattice::build(1.0, 2, 0, 1).is_err());
    }

    fn check_topology(l: &ScenarioLattice) {
        for level in 0..l.steps() {
            let ws: f64 = (0..l.states(level)).map(|s| l.state_weight(level, s)).sum();
            assert!((ws - 1.0).abs() < 1e-12);
            let mut node_mass = vec![0.0; l.nodes(level)];
            for s in 0..l.states(level) {
                node_mass[l.state_node(level, s)] += l.state_weight(level, s);
                let sv = l.view(level, l.state_node(level, s));
                for k in 0..l.branches() {
                    let next = l.view(level + 1, l.state_next(level, s, k));
                    for c in 0..l.dw() {
                        let dw = next.w(c) - sv.w(c);
                        assert!((dw - l.increment(k, c)).abs() < 1e-12);
                    }
                    for c in 0..l.db() {
                        let db = sv.b_future(c) - next.b_future(c);
                        assert!((db - l.increment(l.state_b_bits(level, s), c)).abs() < 1e-12);
                    }
                }
            }
            for (n, m) in node_mass.iter().enumerate() {
                assert!((m - l.node_weight(level, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn path_topology_consistent() {
        check_topology(&ScenarioLattice::build(1.0, 3, 2, 1).unwrap());
        check_topology(&ScenarioLattice::build(1.0, 3, 1, 2).unwrap());
    }

    #[test]
    fn recombining_topology_consistent() {
        let l = ScenarioLattice::builder(1.0, 5, 1, 1).layout(Layout::Recombining).build().unwrap();
        assert_eq!(l.nodes(0), 6);
        assert_eq!(l.nodes(2), 3 * 4);
        check_topology(&l);
        let l = ScenarioLattice::builder(1.0, 3, 2, 2).layout(Layout::Recombining).build().unwrap();
        check_topology(&l);
    }
}
