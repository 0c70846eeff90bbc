//! Builds coefficient systems from model blocks.

use bdsde_core::coefficients::{B2Constants, CoefficientSystem, EllipticCoefficients};
use bdsde_core::galerkin::{
    assemble_bdspde, assemble_p_laplacian, assemble_power_drift, default_points, registry, GalerkinModel,
    SineBasis, QUAD_TOL,
};
use bdsde_core::models::{self, Cubic, Linear, Terminal};

use crate::config::{BdspdeConfig, ModelConfig};
use crate::LabError;

pub struct BuiltModel {
    pub sys: CoefficientSystem,
    /// `u_0` of the continuous equation, when it is deterministic and known.
    pub closed_form_u0: Option<Vec<f64>>,
    /// Elliptic coefficients and declared constants for the B2 check.
    pub b2: Option<(EllipticCoefficients, B2Constants)>,
}

impl BuiltModel {
    fn plain(sys: CoefficientSystem) -> Self {
        Self {
            sys,
            closed_form_u0: None,
            b2: None,
        }
    }
}

/// `E[G(W_T)]` for a standard Brownian `W_T` with variance `horizon`.
fn terminal_mean(terminal: Terminal, horizon: f64) -> f64 {
    match terminal {
        Terminal::Constant { value } => value,
        Terminal::Affine { offset, .. } => offset,
        Terminal::Sine { .. } => 0.0,
        Terminal::Square { scale } => scale * horizon,
    }
}

/// `model` as a system on `[0, horizon]`.
pub fn build(model: &ModelConfig, horizon: f64) -> Result<BuiltModel, LabError> {
    Ok(match model {
        ModelConfig::Zero { terminal } => BuiltModel {
            sys: models::zero(*terminal),
            closed_form_u0: Some(vec![terminal_mean(*terminal, horizon)]),
            b2: None,
        },
        ModelConfig::Martingale {} => BuiltModel {
            sys: models::martingale(),
            closed_form_u0: Some(vec![0.0]),
            b2: None,
        },
        ModelConfig::BackwardNoise { c, g0 } => BuiltModel::plain(models::backward_noise(*c, *g0)),
        ModelConfig::Linear {
            a,
            gamma,
            l,
            j0,
            terminal,
        } => {
            let m = Linear {
                a: *a,
                gamma: *gamma,
                l: *l,
                j0: *j0,
                terminal: *terminal,
            };
            BuiltModel {
                sys: m.system(),
                closed_form_u0: m.exact_u0(horizon).map(|u| vec![u]),
                b2: None,
            }
        }
        ModelConfig::Cubic { l, j0, terminal } => BuiltModel::plain(
            Cubic {
                l: *l,
                j0: *j0,
                terminal: *terminal,
            }
            .system(),
        ),
        ModelConfig::CubicBad {} => BuiltModel::plain(models::cubic_bad()),
        ModelConfig::PowerDrift { r, modes } => BuiltModel::plain(assemble_power_drift(*r, &SineBasis::new(*modes)?)?),
        ModelConfig::PLaplacian { r, modes } => BuiltModel::plain(assemble_p_laplacian(*r, &SineBasis::new(*modes)?)?),
        ModelConfig::Bdspde(cfg) => {
            let model = galerkin_model(cfg)?;
            let (sys, _) = assemble_bdspde(&model, horizon)?;
            BuiltModel {
                sys,
                closed_form_u0: None,
                b2: model.b2.map(|k| (model.coefs.clone(), k)),
            }
        }
    })
}

pub fn galerkin_model(cfg: &BdspdeConfig) -> Result<GalerkinModel, LabError> {
    let points = cfg.points.unwrap_or_else(|| default_points(cfg.modes));
    let basis = SineBasis::with_quadrature(cfg.modes, cfg.quadrature, points, QUAD_TOL)?;
    let coefs = |specs: &[String]| -> Result<Vec<_>, LabError> {
        specs.iter().map(|s| Ok(registry::coefficient(s)?)).collect()
    };
    Ok(GalerkinModel {
        basis,
        coefs: EllipticCoefficients {
            a: registry::coefficient(&cfg.a)?,
            sigma: coefs(&cfg.sigma)?,
            b: registry::coefficient(&cfg.b)?,
            c: registry::coefficient(&cfg.c)?,
            varsigma_coef: coefs(&cfg.varsigma_coef)?,
        },
        f: registry::nonlinearity(&cfg.f)?,
        g: registry::nonlinearity(&cfg.g)?,
        h: cfg
            .h
            .iter()
            .map(|s| Ok(registry::nonlinearity(s)?))
            .collect::<Result<_, LabError>>()?,
        terminal: registry::profile(&cfg.terminal)?,
        terminal_noise: cfg.terminal_noise,
        b2: cfg.b2,
    })
}
