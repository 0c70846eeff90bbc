use alloc::vec;
use alloc::vec::Vec;

use super::{assemble_bdspde, GalerkinModel, SineBasis};
use crate::lattice::{AdaptedField, ScenarioLattice};
use crate::solver::{solve, SolverConfig};
use crate::Result;

/// One Cauchy difference between Galerkin levels `n` and `2n`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefineRow {
    pub n: usize,
    /// `E‖u_0^{(n)} − u_0^{(2n)}‖²` with `u^{(n)}` zero-padded to `2n`.
    pub difference: f64,
}

/// Zero-pads each node vector of `f` to dimension `dim`.
pub fn pad(f: &AdaptedField, lattice: &ScenarioLattice, dim: usize) -> Result<AdaptedField> {
    let d = f.dim();
    let mut out = vec![0.0; f.len() * dim];
    for node in 0..f.len() {
        out[node * dim..node * dim + d.min(dim)].copy_from_slice(&f.node(node)[..d.min(dim)]);
    }
    AdaptedField::from_values(lattice, f.level(), dim, out)
}

/// Solves the model on bases of size `n` and `2n` for each `n` in `ns`
/// (default quadrature) and reports the squared mean difference at `t = 0`.
pub fn refine_study(model: &GalerkinModel, ns: &[usize], lattice: &ScenarioLattice, cfg: &SolverConfig) -> Result<Vec<RefineRow>> {
    let horizon = lattice.time(lattice.steps());
    let mut cache: Vec<(usize, AdaptedField)> = Vec::new();
    let mut u0 = |n: usize| -> Result<AdaptedField> {
        if let Some((_, f)) = cache.iter().find(|(k, _)| *k == n) {
            return Ok(f.clone());
        }
        let m = model.with_basis(SineBasis::new(n)?);
        let (sys, _) = assemble_bdspde(&m, horizon)?;
        let sol = solve(&sys, lattice, cfg)?;
        cache.push((n, sol.u[0].clone()));
        Ok(sol.u[0].clone())
    };
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let coarse = u0(n)?;
        let fine = u0(2 * n)?;
        let d = pad(&coarse, lattice, 2 * n)?.l2_distance(&fine, lattice);
        rows.push(RefineRow { n, difference: d * d });
    }
    Ok(rows)
}
