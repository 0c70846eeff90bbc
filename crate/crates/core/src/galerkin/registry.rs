//! Named coefficient functions, nonlinearities and terminal profiles,
//! written `name` or `name:p1,p2,...`.
//!
//! | kind | entries |
//! |------|---------|
//! | coefficient `(t, x)` | `constant:v`, `affine:c0,c1` (`c0 + c1·x`), `affine_t:c0,c1` (`c0 + c1·t`), `cosine:c0,c1` (`c0 + c1·cos(πx)`) |
//! | nonlinearity `(t, x, ϑ, y, z)` | `zero`, `const:c`, `source:c` (`c·sin(πx)`), `linear:cθ,cy,cz` (`cθ·ϑ + cy·y + cz·z₁`), `sine:L` (`L·sin ϑ`), `tanh:L` (`L·tanh ϑ`) |
//! | profile `x` | `zero`, `mode:k[,amp]` (`amp·e_k`), `parabola[:amp]` (`amp·x(1−x)`), `hat[:amp]` (`amp·min(x, 1−x)`), `step[:amp]` (`amp` on `x < 1/2`) |

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::bdspde::{Nonlinearity, Profile};
use crate::coefficients::CoefFn;
use crate::{Error, Result};

fn split(spec: &str) -> Result<(&str, Vec<f64>)> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n.trim(), r),
        None => (spec.trim(), ""),
    };
    let params = rest
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("registry entry {spec:?}: {s:?} is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((name, params))
}

fn arity(spec: &str, params: &[f64], min: usize, max: usize) -> Result<()> {
    if params.len() < min || params.len() > max {
        return Err(Error::Config(format!(
            "registry entry {spec:?} takes {min}..={max} parameters, got {}",
            params.len()
        )));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Config(format!("registry entry {spec:?} has a non-finite parameter")));
    }
    Ok(())
}

pub fn coefficient(spec: &str) -> Result<CoefFn> {
    let (name, p) = split(spec)?;
    Ok(match name {
        "constant" => {
            arity(spec, &p, 1, 1)?;
            let v = p[0];
            Arc::new(move |_, _| v)
        }
        "affine" => {
            arity(spec, &p, 2, 2)?;
            let (c0, c1) = (p[0], p[1]);
            Arc::new(move |_, x| c0 + c1 * x)
        }
        "affine_t" => {
            arity(spec, &p, 2, 2)?;
            let (c0, c1) = (p[0], p[1]);
            Arc::new(move |t, _| c0 + c1 * t)
        }
        "cosine" => {
            arity(spec, &p, 2, 2)?;
            let (c0, c1) = (p[0], p[1]);
            Arc::new(move |_, x| c0 + c1 * libm::cos(PI * x))
        }
        _ => return Err(unknown("coefficient", spec)),
    })
}

pub fn nonlinearity(spec: &str) -> Result<Nonlinearity> {
    let (name, p) = split(spec)?;
    let label = String::from(spec.trim());
    Ok(match name {
        "zero" => {
            arity(spec, &p, 0, 0)?;
            Nonlinearity::new(&label, [0.0; 3], |_, _, _, _, _| 0.0)
        }
        "const" => {
            arity(spec, &p, 1, 1)?;
            let c = p[0];
            Nonlinearity::new(&label, [0.0; 3], move |_, _, _, _, _| c)
        }
        "source" => {
            arity(spec, &p, 1, 1)?;
            let c = p[0];
            Nonlinearity::new(&label, [0.0; 3], move |_, x, _, _, _| c * libm::sin(PI * x))
        }
        "linear" => {
            arity(spec, &p, 3, 3)?;
            let (ct, cy, cz) = (p[0], p[1], p[2]);
            Nonlinearity::new(&label, [ct.abs(), cy.abs(), cz.abs()], move |_, _, th, y, z: &[f64]| {
                ct * th + cy * y + cz * z.first().copied().unwrap_or(0.0)
            })
        }
        "sine" => {
            arity(spec, &p, 1, 1)?;
            let l = p[0];
            Nonlinearity::new(&label, [l.abs(), 0.0, 0.0], move |_, _, th, _, _| l * libm::sin(th))
        }
        "tanh" => {
            arity(spec, &p, 1, 1)?;
            let l = p[0];
            Nonlinearity::new(&label, [l.abs(), 0.0, 0.0], move |_, _, th, _, _| l * libm::tanh(th))
        }
        _ => return Err(unknown("nonlinearity", spec)),
    })
}

pub fn profile(spec: &str) -> Result<Profile> {
    let (name, p) = split(spec)?;
    let amp = |i: usize| p.get(i).copied().unwrap_or(1.0);
    let f: Arc<dyn Fn(f64) -> f64 + Send + Sync> = match name {
        "zero" => {
            arity(spec, &p, 0, 0)?;
            Arc::new(|_| 0.0)
        }
        "mode" => {
            arity(spec, &p, 1, 2)?;
            let k = p[0];
            if k < 1.0 || libm::trunc(k) != k {
                return Err(Error::Config(format!("profile {spec:?}: mode index must be a positive integer")));
            }
            let a = amp(1) * libm::sqrt(2.0);
            Arc::new(move |x| a * libm::sin(k * PI * x))
        }
        "parabola" => {
            arity(spec, &p, 0, 1)?;
            let a = amp(0);
            Arc::new(move |x| a * x * (1.0 - x))
        }
        "hat" => {
            arity(spec, &p, 0, 1)?;
            let a = amp(0);
            Arc::new(move |x| a * x.min(1.0 - x))
        }
        "step" => {
            arity(spec, &p, 0, 1)?;
            let a = amp(0);
            Arc::new(move |x| if x < 0.5 { a } else { 0.0 })
        }
        _ => return Err(unknown("profile", spec)),
    };
    Ok(Profile::new(spec.trim(), f))
}

fn unknown(kind: &str, spec: &str) -> Error {
    Error::Config(format!("unknown {kind} {spec:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries() {
        assert_eq!(coefficient("constant:1.5").unwrap()(0.3, 0.2), 1.5);
        assert!((coefficient("affine:0.5, 0.2").unwrap()(0.0, 0.5) - 0.6).abs() < 1e-15);
        assert_eq!(coefficient("affine_t:1,2").unwrap()(0.5, 0.9), 2.0);
        let s = nonlinearity("sine:0.3").unwrap();
        assert_eq!(s.lipschitz(), [0.3, 0.0, 0.0]);
        assert!((s.eval(0.0, 0.5, 1.0, 0.0, &[0.0]) - 0.3 * libm::sin(1.0)).abs() < 1e-15);
        let l = nonlinearity("linear:1,-2,0.5").unwrap();
        assert_eq!(l.eval(0.0, 0.0, 1.0, 1.0, &[2.0]), 0.0);
        assert!((profile("mode:2").unwrap().eval(0.25) - libm::sqrt(2.0)).abs() < 1e-15);
        assert_eq!(profile("step:3").unwrap().eval(0.2), 3.0);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(coefficient("wiggly:1").is_err());
        assert!(coefficient("constant").is_err());
        assert!(coefficient("constant:x").is_err());
        assert!(nonlinearity("sine:1,2").is_err());
        assert!(profile("mode:0.5").is_err());
    }
}
