//! The subcommands. Each writes its reports under the output directory,
//! prints a short summary and returns whether a violation was found.

use std::fs;
use std::path::{Path, PathBuf};

use bdsde_core::analysis::{
    apriori_monitor, convergence_study, energy_identity_residual, fit_order, stability_gap, AprioriReport,
    ConvergenceReport, DecayRow, DiscreteLaw, EnergyDecay, EnergyReport, Reference, StabilityReport,
};
use bdsde_core::coefficients::{
    check_a6, check_all, check_b2, check_coercivity, check_diffusion_z_bound, check_growth, check_hemicontinuity,
    check_lipschitz, check_monotonicity, Assumption, CheckReport, Sampler,
};
use bdsde_core::lattice::{expectation, AdaptedField, ScenarioLattice};
use bdsde_core::solver::{contraction_diagnostics, discrete_residual, solve, Contraction, DiscreteSolution};
use bdsde_core::Error as CoreError;
use log::info;
use serde::Serialize;

use crate::config::{ExperimentConfig, ReferenceKind};
use crate::io::{write_convergence, write_csv, write_fields, write_json};
use crate::registry::{build, BuiltModel};
use crate::{stability_fixture, LabError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Solve,
    Converge,
    Energy,
    Stability,
    PicardDiag,
}

/// A loaded configuration with command-line overrides applied.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        let out = out.or_else(|| cfg.run.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let seed = seed.unwrap_or(cfg.run.seed);
        Self { cfg, out, seed }
    }

    fn horizon(&self) -> f64 {
        self.cfg.lattice.horizon
    }

    fn model(&self) -> Result<BuiltModel, LabError> {
        build(&self.cfg.model, self.horizon())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Runs `cmd`; `Ok(true)` means a violation was found.
pub fn run(cmd: Command, ctx: &Context) -> Result<bool, LabError> {
    fs::create_dir_all(&ctx.out).map_err(|e| LabError::Io(format!("{}: {e}", ctx.out.display())))?;
    match cmd {
        Command::Check => check(ctx),
        Command::Solve => solve_cmd(ctx),
        Command::Converge => converge(ctx),
        Command::Energy => energy(ctx),
        Command::Stability => stability(ctx),
        Command::PicardDiag => picard_diag(ctx),
    }
}

/// Maps a command result to the process exit code.
pub fn exit_code(result: &Result<bool, LabError>) -> i32 {
    match result {
        Ok(false) => 0,
        Ok(true) => 1,
        Err(e) => e.exit_code(),
    }
}

/// Human-readable detail for a failed run.
pub fn describe_error(e: &LabError) -> String {
    match e {
        LabError::Core(CoreError::PicardNonConvergence { iterations, deltas }) => {
            let tail: Vec<String> = deltas.iter().rev().take(3).rev().map(|d| format!("{d:.3e}")).collect();
            format!("picard iteration did not converge in {iterations} iterations; last deltas [{}]", tail.join(", "))
        }
        LabError::Core(CoreError::NonFinite { assumption, witness }) => {
            format!("non-finite coefficient output while checking {assumption} at {witness:?}")
        }
        other => other.to_string(),
    }
}

fn lattice(ctx: &Context, steps: usize) -> Result<ScenarioLattice, LabError> {
    ctx.cfg.lattice.build(steps)
}

fn solved(ctx: &Context, model: &BuiltModel, lat: &ScenarioLattice) -> Result<DiscreteSolution, LabError> {
    let cfg = ctx.cfg.solver.to_config()?;
    Ok(solve(&model.sys, lat, &cfg)?)
}

#[derive(Serialize)]
struct CheckOutput<'a> {
    model: &'a str,
    seed: u64,
    trials: usize,
    threshold: f64,
    reports: &'a [CheckReport],
    violated: Vec<&'static str>,
}

fn run_check(model: &BuiltModel, a: Assumption, sampler: &Sampler, trials: usize) -> Result<CheckReport, LabError> {
    let sys = &model.sys;
    Ok(match a {
        Assumption::A1 => check_hemicontinuity(sys, sampler, trials)?,
        Assumption::A2 => check_monotonicity(sys, sampler, trials)?,
        Assumption::A3 => check_coercivity(sys, sampler, trials)?,
        Assumption::A4 => check_growth(sys, sampler, trials)?,
        Assumption::A5 => check_lipschitz(sys, sampler, trials)?,
        Assumption::A6 => check_a6(sys, sampler, trials)?,
        Assumption::DiffusionZ => check_diffusion_z_bound(sys, sampler, trials)?,
        Assumption::B2 => {
            let (coefs, k) = model
                .b2
                .as_ref()
                .ok_or_else(|| LabError::Config("B2 needs a bdspde model with declared b2 constants".into()))?;
            check_b2(coefs, k, sampler, trials)?
        }
    })
}

fn check(ctx: &Context) -> Result<bool, LabError> {
    let model = ctx.model()?;
    let run = &ctx.cfg.run;
    let sampler = Sampler::new(ctx.seed).horizon(ctx.horizon()).radius(run.radius);
    let sys = &model.sys;
    let reports = match &run.assumptions {
        Some(ids) => ids
            .iter()
            .map(|id| {
                let a = Assumption::parse(id).ok_or_else(|| LabError::Config(format!("unknown assumption {id:?}")))?;
                run_check(&model, a, &sampler, run.trials)
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => {
            let mut all = check_all(sys, &sampler, run.trials)?;
            if model.b2.is_some() {
                all.push(run_check(&model, Assumption::B2, &sampler, run.trials)?);
            }
            all
        }
    };
    let violated: Vec<&'static str> = reports
        .iter()
        .filter(|r| r.worst_margin > run.threshold)
        .map(|r| r.assumption.id())
        .collect();
    for r in &reports {
        let status = if r.worst_margin > run.threshold { "VIOLATED" } else { "ok" };
        println!("{:<4} worst_margin = {:+.6e}  {status}", r.assumption.id(), r.worst_margin);
        if r.worst_margin > run.threshold {
            println!("     witness: {:?}", r.witness);
        }
    }
    write_json(
        &ctx.path("check.json"),
        &CheckOutput {
            model: sys.name(),
            seed: ctx.seed,
            trials: run.trials,
            threshold: run.threshold,
            reports: &reports,
            violated: violated.clone(),
        },
    )?;
    Ok(!violated.is_empty())
}

#[derive(Serialize)]
struct SolveOutput {
    model: String,
    horizon: f64,
    steps: usize,
    dt: f64,
    dw: usize,
    db: usize,
    layout: String,
    seed: u64,
    u0_mean: Vec<f64>,
    picard_iterations: usize,
    deltas: Vec<f64>,
    u_deltas: Vec<f64>,
    v_deltas: Vec<f64>,
    resolvent_residual_max: f64,
    representation_residual_max: f64,
    recombination_defect_max: f64,
    non_monotone_nodes: usize,
    rescale_rate: f64,
    discrete_residual: f64,
}

fn layout_name(lat: &ScenarioLattice) -> String {
    format!("{:?}", lat.layout()).to_lowercase()
}

fn solve_cmd(ctx: &Context) -> Result<bool, LabError> {
    let model = ctx.model()?;
    let lat = lattice(ctx, ctx.cfg.lattice.single_steps()?)?;
    let sol = solved(ctx, &model, &lat)?;
    let d = &sol.diagnostics;
    let out = SolveOutput {
        model: model.sys.name().to_string(),
        horizon: ctx.horizon(),
        steps: lat.steps(),
        dt: lat.dt(),
        dw: lat.dw(),
        db: lat.db(),
        layout: layout_name(&lat),
        seed: ctx.seed,
        u0_mean: expectation(&lat, &sol.u[0]),
        picard_iterations: d.picard_iterations,
        deltas: d.deltas.clone(),
        u_deltas: d.u_deltas.clone(),
        v_deltas: d.v_deltas.clone(),
        resolvent_residual_max: d.resolvent_residual_max,
        representation_residual_max: d.representation_residual_max,
        recombination_defect_max: d.recombination_defect_max,
        non_monotone_nodes: d.non_monotone_nodes,
        rescale_rate: d.rescale_rate,
        discrete_residual: discrete_residual(&sol, &model.sys, &lat)?,
    };
    write_fields(&ctx.path("u.csv"), &lat, &sol.u)?;
    write_fields(&ctx.path("v.csv"), &lat, &sol.v)?;
    write_json(&ctx.path("diagnostics.json"), &out)?;
    println!("{}: N = {}, {} picard iterations", out.model, out.steps, out.picard_iterations);
    println!("E[u_0] = {:?}", out.u0_mean);
    println!("discrete residual = {:.3e}", out.discrete_residual);
    Ok(false)
}

#[derive(Serialize)]
struct ConvergeOutput<'a> {
    model: &'a str,
    reference: String,
    report: &'a ConvergenceReport,
}

/// A fine run's `u_0`: its value when deterministic, else its law.
fn fine_reference(ctx: &Context, model: &BuiltModel) -> Result<Reference, LabError> {
    let steps = ctx.cfg.run.reference_steps;
    info!("reference run with N = {steps}");
    let lat = lattice(ctx, steps)?;
    let sol = solved(ctx, model, &lat)?;
    let u0 = &sol.u[0];
    let first = u0.node(0);
    let deterministic = (0..u0.len()).all(|k| u0.node(k).iter().zip(first).all(|(a, b)| (a - b).abs() <= 1e-12));
    if deterministic {
        Ok(Reference::Value(first.to_vec()))
    } else if u0.dim() == 1 {
        Ok(Reference::Law(DiscreteLaw::of_field(u0, &lat, 0)?))
    } else {
        Err(LabError::Config(
            "a random multi-component u_0 has no fine reference; use a scalar model".into(),
        ))
    }
}

fn converge(ctx: &Context) -> Result<bool, LabError> {
    let model = ctx.model()?;
    let ns = ctx.cfg.lattice.all_steps();
    if ns.len() < 3 {
        return Err(CoreError::InsufficientData(format!(
            "a convergence study needs at least 3 step counts in lattice.N_list, got {}",
            ns.len()
        ))
        .into());
    }
    let (reference, label) = match (ctx.cfg.run.reference, &model.closed_form_u0) {
        (ReferenceKind::Auto | ReferenceKind::ClosedForm, Some(u0)) => (Reference::Value(u0.clone()), "closed_form".to_string()),
        (ReferenceKind::ClosedForm, None) => {
            return Err(LabError::Config(format!("model {} has no closed-form u_0", ctx.cfg.model.name())))
        }
        _ => (
            fine_reference(ctx, &model)?,
            format!("fine run, N = {}", ctx.cfg.run.reference_steps),
        ),
    };
    let cfg = ctx.cfg.solver.to_config()?;
    let report = convergence_study(&ns, &reference, &cfg, |n| {
        info!("solving N = {n}");
        Ok((model.sys.clone(), ctx.cfg.lattice.build(n).map_err(|e| match e {
            LabError::Core(c) => c,
            other => CoreError::Config(other.to_string()),
        })?))
    })?;
    write_convergence(&ctx.path("convergence.csv"), &report)?;
    write_json(
        &ctx.path("convergence.json"),
        &ConvergeOutput {
            model: model.sys.name(),
            reference: label.clone(),
            report: &report,
        },
    )?;
    println!("reference: {label}");
    for r in &report.rows {
        println!("N = {:>5}  error = {:.6e}", r.n, r.error);
    }
    match report.fit.fitted_order {
        Some(o) => println!("fitted order = {o:.4}"),
        None => println!("fitted order: saturated (scheme exact on this family)"),
    }
    Ok(false)
}

#[derive(Serialize)]
struct EnergyRun {
    steps: usize,
    report: EnergyReport,
    /// `None` when the monitor is unavailable on this layout.
    apriori: Option<AprioriReport>,
}

#[derive(Serialize)]
struct EnergyOutput {
    model: String,
    runs: Vec<EnergyRun>,
    decay: Option<EnergyDecay>,
    min_decay_order: Option<f64>,
}

fn energy(ctx: &Context) -> Result<bool, LabError> {
    let model = ctx.model()?;
    let mut runs = Vec::new();
    let mut violated = false;
    for n in ctx.cfg.lattice.all_steps() {
        let lat = lattice(ctx, n)?;
        let sol = solved(ctx, &model, &lat)?;
        let report = energy_identity_residual(&sol, &model.sys, &lat)?;
        let apriori = apriori_monitor(&sol, &model.sys, &lat).ok();
        match report.balance_holds() {
            None => println!(
                "N = {n}: representation residual mode (dW = {} > 1), exact-balance assertion skipped; one-step balance {:.3e}",
                lat.dw(),
                report.exact_step_max
            ),
            Some(ok) => {
                violated |= !ok;
                println!(
                    "N = {n}: exact balance {:.3e} {}, expectation-form residual {:.3e}",
                    report.exact_balance(),
                    if ok { "ok" } else { "VIOLATED" },
                    report.max_residual
                );
            }
        }
        runs.push(EnergyRun { steps: n, report, apriori });
    }
    let decay = if runs.len() >= 3 {
        let rows: Vec<DecayRow> = runs
            .iter()
            .map(|r| DecayRow {
                n: r.steps,
                residual: r.report.max_residual,
            })
            .collect();
        let fit = fit_order(&rows.iter().map(|r| (r.n, r.residual)).collect::<Vec<_>>())?;
        Some(EnergyDecay { rows, fit })
    } else {
        None
    };
    let min = ctx.cfg.run.min_decay_order;
    if let Some(d) = &decay {
        match d.fit.fitted_order {
            Some(o) => {
                println!("residual decay order = {o:.4}");
                if min.is_some_and(|m| o < m) {
                    println!("decay order below the required {}", min.unwrap_or_default());
                    violated = true;
                }
            }
            None => println!("residual decay: saturated"),
        }
    } else if min.is_some() {
        return Err(CoreError::InsufficientData("min_decay_order needs at least 3 step counts in lattice.N_list".into()).into());
    }
    write_json(
        &ctx.path("energy.json"),
        &EnergyOutput {
            model: model.sys.name().to_string(),
            runs,
            decay,
            min_decay_order: min,
        },
    )?;
    Ok(violated)
}

#[derive(Serialize)]
struct StabilityRun {
    steps: usize,
    report: StabilityReport,
}

#[derive(Serialize)]
struct StabilityOutput {
    model: String,
    tol_const: f64,
    runs: Vec<StabilityRun>,
}

fn stability(ctx: &Context) -> Result<bool, LabError> {
    let model = ctx.model()?;
    let cfg = ctx.cfg.solver.to_config()?;
    let tol_const = ctx.cfg.run.tol_const.unwrap_or_else(|| stability_fixture().c_fit);
    let mut runs = Vec::new();
    for n in ctx.cfg.lattice.all_steps() {
        let lat = lattice(ctx, n)?;
        let g = model.sys.terminal_field(&lat)?;
        let g_prime = match ctx.cfg.run.terminal_prime {
            Some(t) => AdaptedField::from_fn(&lat, n, model.sys.n(), |v, out| out.fill(t.eval(v.w(0)))),
            None => {
                let k = ctx.cfg.run.terminal_prime_scale;
                let vals = g.values().iter().map(|x| k * x).collect();
                AdaptedField::from_values(&lat, n, model.sys.n(), vals)?
            }
        };
        let report = stability_gap(&model.sys, &lat, &cfg, &g, &g_prime, tol_const)?;
        println!(
            "N = {n}: margin = {:+.6e} (rhs {:.6e}, tol {:.3e}) {}",
            report.margin,
            report.rhs,
            report.tol,
            if report.holds() { "ok" } else { "VIOLATED" }
        );
        runs.push(StabilityRun { steps: n, report });
    }
    let violated = runs.iter().any(|r| !r.report.holds());
    write_json(
        &ctx.path("stability.json"),
        &StabilityOutput {
            model: model.sys.name().to_string(),
            tol_const,
            runs,
        },
    )?;
    Ok(violated)
}

#[derive(Serialize)]
struct PicardOutput {
    model: String,
    steps: usize,
    iterations: usize,
    deltas: Vec<f64>,
    u_deltas: Vec<f64>,
    v_deltas: Vec<f64>,
    contraction: Option<Contraction>,
}

fn picard_diag(ctx: &Context) -> Result<bool, LabError> {
    let model = ctx.model()?;
    let lat = lattice(ctx, ctx.cfg.lattice.single_steps()?)?;
    let sol = solved(ctx, &model, &lat)?;
    let d = &sol.diagnostics;
    let contraction = match contraction_diagnostics(&sol) {
        Ok(c) => Some(c),
        Err(CoreError::InsufficientData(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let rows = (0..d.deltas.len()).map(|k| {
        vec![
            (k + 1).to_string(),
            d.deltas[k].to_string(),
            d.u_deltas[k].to_string(),
            d.v_deltas[k].to_string(),
        ]
    });
    write_csv(&ctx.path("picard.csv"), &["iteration", "delta", "u_delta", "v_delta"], rows)?;
    println!("{} picard iterations", d.picard_iterations);
    let violated = match &contraction {
        Some(c) => {
            println!("fitted contraction ratio = {:.4}", c.fitted_ratio);
            !c.contracting()
        }
        None => {
            println!("too few iterations to fit a contraction ratio");
            false
        }
    };
    write_json(
        &ctx.path("picard.json"),
        &PicardOutput {
            model: model.sys.name().to_string(),
            steps: lat.steps(),
            iterations: d.picard_iterations,
            deltas: d.deltas.clone(),
            u_deltas: d.u_deltas.clone(),
            v_deltas: d.v_deltas.clone(),
            contraction,
        },
    )?;
    Ok(violated)
}

/// Loads `path`, applies overrides and runs `cmd`.
pub fn run_file(cmd: Command, path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<bool, LabError> {
    let cfg = ExperimentConfig::load(path)?;
    run(cmd, &Context::new(cfg, out, seed))
}
