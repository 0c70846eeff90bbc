use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Layout, NodeView, ScenarioLattice};
use crate::{Error, Result};

/// An `F_{t_i}`-measurable random vector: one `dim`-vector per node of level
/// `i`. Storage is node-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptedField {
    level: usize,
    dim: usize,
    values: Vec<f64>,
}

impl AdaptedField {
    pub fn zeros(lattice: &ScenarioLattice, level: usize, dim: usize) -> Self {
        AdaptedField {
            level,
            dim,
            values: vec![0.0; lattice.nodes(level) * dim],
        }
    }

    pub fn constant(lattice: &ScenarioLattice, level: usize, value: &[f64]) -> Self {
        let nodes = lattice.nodes(level);
        let mut values = Vec::with_capacity(nodes * value.len());
        for _ in 0..nodes {
            values.extend_from_slice(value);
        }
        AdaptedField {
            level,
            dim: value.len(),
            values,
        }
    }

    pub fn from_fn<F>(lattice: &ScenarioLattice, level: usize, dim: usize, mut f: F) -> Self
    where
        F: FnMut(&NodeView<'_>, &mut [f64]),
    {
        let mut field = Self::zeros(lattice, level, dim);
        for node in 0..lattice.nodes(level) {
            let view = lattice.view(level, node);
            f(&view, &mut field.values[node * dim..(node + 1) * dim]);
        }
        field
    }

    pub fn from_values(lattice: &ScenarioLattice, level: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.nodes(level) * dim {
            return Err(Error::Shape(format!(
                "level {level} needs {} values, got {}",
                lattice.nodes(level) * dim,
                values.len()
            )));
        }
        Ok(AdaptedField { level, dim, values })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn node_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub(crate) fn check_on(&self, lattice: &ScenarioLattice) -> Result<()> {
        lattice.check_level(self.level)?;
        if self.values.len() != lattice.nodes(self.level) * self.dim {
            return Err(Error::Shape(format!(
                "field at level {} has {} values, lattice expects {}",
                self.level,
                self.values.len(),
                lattice.nodes(self.level) * self.dim
            )));
        }
        Ok(())
    }

    /// Probability-weighted `sqrt(E‖self - other‖²)`.
    pub fn l2_distance(&self, other: &AdaptedField, lattice: &ScenarioLattice) -> f64 {
        let mut acc = 0.0;
        for node in 0..lattice.nodes(self.level) {
            let d: f64 = self
                .node(node)
                .iter()
                .zip(other.node(node))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            acc += lattice.node_weight(self.level, node) * d;
        }
        libm::sqrt(acc)
    }

    pub fn max_abs_diff(&self, other: &AdaptedField) -> f64 {
        crate::linalg::max_abs_diff(&self.values, &other.values)
    }
}

/// A random vector measurable with respect to W up to `t_{i+1}` and B after
/// `t_i`: the class of `u_{i+1} + J·ΔB_i` inside one backward step. Indexed
/// by `(state, W-branch)` of level `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionField {
    level: usize,
    dim: usize,
    values: Vec<f64>,
}

/// One `(state, branch)` cell of a transition table.
#[derive(Clone, Copy)]
pub struct TransitionView<'a> {
    lattice: &'a ScenarioLattice,
    level: usize,
    state: usize,
    branch: usize,
}

impl<'a> TransitionView<'a> {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn branch(&self) -> usize {
        self.branch
    }

    /// The level-`i` node this cell conditions onto.
    pub fn node(&self) -> NodeView<'a> {
        self.lattice
            .view(self.level, self.lattice.state_node(self.level, self.state))
    }

    /// The level-`i+1` node this cell lands on.
    pub fn next(&self) -> NodeView<'a> {
        self.lattice.view(
            self.level + 1,
            self.lattice.state_next(self.level, self.state, self.branch),
        )
    }

    /// `ΔW_i` component `c`.
    pub fn dw(&self, c: usize) -> f64 {
        self.lattice.increment(self.branch, c)
    }

    /// `ΔB_i` component `c`.
    pub fn db(&self, c: usize) -> f64 {
        self.lattice
            .increment(self.lattice.state_b_bits(self.level, self.state), c)
    }
}

impl TransitionField {
    pub fn zeros(lattice: &ScenarioLattice, level: usize, dim: usize) -> Self {
        TransitionField {
            level,
            dim,
            values: vec![0.0; lattice.states(level) * lattice.branches() * dim],
        }
    }

    pub fn from_fn<F>(lattice: &ScenarioLattice, level: usize, dim: usize, mut f: F) -> Self
    where
        F: FnMut(&TransitionView<'_>, &mut [f64]),
    {
        let mut field = Self::zeros(lattice, level, dim);
        let k = lattice.branches();
        for state in 0..lattice.states(level) {
            for branch in 0..k {
                let view = TransitionView {
                    lattice,
                    level,
                    state,
                    branch,
                };
                let off = (state * k + branch) * dim;
                f(&view, &mut field.values[off..off + dim]);
            }
        }
        field
    }

    /// Lifts a level-`i+1` adapted field into the transition class of level `i`.
    pub fn lift(lattice: &ScenarioLattice, next: &AdaptedField) -> Result<Self> {
        next.check_on(lattice)?;
        if next.level() == 0 {
            return Err(Error::LevelOutOfRange { level: 0, max: lattice.steps() });
        }
        let level = next.level() - 1;
        Ok(Self::from_fn(lattice, level, next.dim(), |v, out| {
            out.copy_from_slice(next.node(v.next().index()))
        }))
    }

    /// Lifts a level-`i` adapted field; the result ignores the W-branch.
    pub fn lift_current(lattice: &ScenarioLattice, current: &AdaptedField) -> Result<Self> {
        current.check_on(lattice)?;
        lattice.check_step(current.level())?;
        Ok(Self::from_fn(lattice, current.level(), current.dim(), |v, out| {
            out.copy_from_slice(current.node(v.node().index()))
        }))
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell(&self, branches: usize, state: usize, branch: usize) -> &[f64] {
        let off = (state * branches + branch) * self.dim;
        &self.values[off..off + self.dim]
    }

    pub(crate) fn check_on(&self, lattice: &ScenarioLattice) -> Result<()> {
        lattice.check_step(self.level)?;
        if self.values.len() != lattice.states(self.level) * lattice.branches() * self.dim {
            return Err(Error::Shape(format!(
                "transition field at level {} has wrong size",
                self.level
            )));
        }
        Ok(())
    }
}

/// Full-scenario table over every W and B bit of every step (path layout
/// only). Index = W bits of all steps, then B bits of all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    dim: usize,
    values: Vec<f64>,
}

impl PathTable {
    fn check_layout(lattice: &ScenarioLattice) -> Result<usize> {
        if lattice.layout() != Layout::Paths {
            return Err(Error::LayoutUnsupported);
        }
        let bits = lattice.steps() * (lattice.dw() + lattice.db());
        if bits >= 40 {
            return Err(Error::Sizing {
                product: format!("2^(N*(dW+dB)) with N={}", lattice.steps()),
                entries: libm::pow(2.0, bits as f64),
                cap: 1 << 40,
            });
        }
        Ok(1usize << bits)
    }

    pub fn zeros(lattice: &ScenarioLattice, dim: usize) -> Result<Self> {
        let len = Self::check_layout(lattice)?;
        Ok(PathTable {
            dim,
            values: vec![0.0; len * dim],
        })
    }

    /// Lifts an adapted field to the full scenario space.
    pub fn from_adapted(lattice: &ScenarioLattice, field: &AdaptedField) -> Result<Self> {
        field.check_on(lattice)?;
        let mut table = Self::zeros(lattice, field.dim())?;
        let dim = field.dim();
        for idx in 0..table.len() {
            let node = adapted_node(lattice, field.level(), idx);
            table.values[idx * dim..(idx + 1) * dim].copy_from_slice(field.node(node));
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entry(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Uniform average over all scenarios.
    pub fn expectation(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for idx in 0..self.len() {
            for (o, v) in out.iter_mut().zip(self.entry(idx)) {
                *o += v;
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// `E[X | F_{t_level}]`.
    pub fn project(&self, lattice: &ScenarioLattice, level: usize) -> Result<AdaptedField> {
        lattice.check_level(level)?;
        let mut out = AdaptedField::zeros(lattice, level, self.dim);
        let mut counts = vec![0usize; lattice.nodes(level)];
        for idx in 0..self.len() {
            let node = adapted_node(lattice, level, idx);
            counts[node] += 1;
            for (o, v) in out.node_mut(node).iter_mut().zip(self.entry(idx)) {
                *o += v;
            }
        }
        for (node, &c) in counts.iter().enumerate() {
            out.node_mut(node).iter_mut().for_each(|o| *o /= c as f64);
        }
        Ok(out)
    }

    /// `E[X | W up to t_{level+1}, B after t_level]`.
    pub fn project_transition(&self, lattice: &ScenarioLattice, level: usize) -> Result<TransitionField> {
        lattice.check_step(level)?;
        let k = lattice.branches();
        let mut out = TransitionField::zeros(lattice, level, self.dim);
        let cells = lattice.states(level) * k;
        let mut counts = vec![0usize; cells];
        let dim = self.dim;
        for idx in 0..self.len() {
            let node = adapted_node(lattice, level, idx);
            let branch = (full_w(lattice, idx) >> (level * lattice.dw())) & (k - 1);
            let cell = node * k + branch;
            counts[cell] += 1;
            for (o, v) in out.values[cell * dim..(cell + 1) * dim].iter_mut().zip(self.entry(idx)) {
                *o += v;
            }
        }
        for (cell, &c) in counts.iter().enumerate() {
            out.values[cell * dim..(cell + 1) * dim]
                .iter_mut()
                .for_each(|o| *o /= c as f64);
        }
        Ok(out)
    }

    /// Largest deviation of the table from its `F_{t_level}` projection.
    pub fn measurability_defect(&self, lattice: &ScenarioLattice, level: usize) -> Result<f64> {
        let proj = self.project(lattice, level)?;
        let mut worst: f64 = 0.0;
        for idx in 0..self.len() {
            let node = adapted_node(lattice, level, idx);
            worst = worst.max(crate::linalg::max_abs_diff(self.entry(idx), proj.node(node)));
        }
        Ok(worst)
    }
}

fn full_w(lattice: &ScenarioLattice, idx: usize) -> usize {
    idx & ((1 << (lattice.steps() * lattice.dw())) - 1)
}

/// W-branch taken at step `level` by a full-scenario index.
pub(crate) fn path_branch(lattice: &ScenarioLattice, level: usize, idx: usize) -> usize {
    (full_w(lattice, idx) >> (level * lattice.dw())) & (lattice.branches() - 1)
}

/// Node of level `level` that a full-scenario index belongs to.
pub(crate) fn adapted_node(lattice: &ScenarioLattice, level: usize, idx: usize) -> usize {
    let n = lattice.steps();
    let wall = n * lattice.dw();
    let w = idx & ((1 << (level * lattice.dw())) - 1);
    let b = (idx >> wall) >> (level * lattice.db());
    w | (b << (level * lattice.dw()))
}
