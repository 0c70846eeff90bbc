//! Dense helpers on row-major slices. Systems here are small (state
//! dimension is a handful of Galerkin modes), so nothing fancier is needed.

use alloc::vec;
use alloc::vec::Vec;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// `out += m * x` for an `rows x cols` row-major matrix.
pub fn mat_vec_acc(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        *o += dot(&m[i * cols..(i + 1) * cols], x);
    }
}

/// `‖mᵀ x‖²` for an `rows x cols` row-major matrix, i.e. `⟨x, m mᵀ x⟩`.
pub fn quad_outer(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for c in 0..cols {
        let mut s = 0.0;
        for r in 0..rows {
            s += m[r * cols + c] * x[r];
        }
        acc += s * s;
    }
    acc
}

/// LU factorisation with partial pivoting, in place.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot underflows `1e-300` or is non-finite.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Option<Lu> {
        let mut piv = vec![0; n];
        lu_factor_in_place(&mut a, &mut piv, n).then_some(Lu { n, lu: a, piv })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        lu_solve(&self.lu, &self.piv, self.n, b, x)
    }
}

/// In-place form of [`Lu::factor`]: `a` becomes the packed factors.
pub fn lu_factor_in_place(a: &mut [f64], piv: &mut [usize], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    piv.iter_mut().enumerate().for_each(|(i, p)| *p = i);
    for k in 0..n {
        let mut p = k;
        let mut best = a[k * n + k].abs();
        for r in k + 1..n {
            let v = a[r * n + k].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if !(best > 1e-300) || !best.is_finite() {
            return false;
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            piv.swap(k, p);
        }
        let d = a[k * n + k];
        for r in k + 1..n {
            let f = a[r * n + k] / d;
            a[r * n + k] = f;
            for c in k + 1..n {
                a[r * n + c] -= f * a[k * n + c];
            }
        }
    }
    true
}

/// Solves with factors from [`lu_factor_in_place`].
pub fn lu_solve(lu: &[f64], piv: &[usize], n: usize, b: &[f64], x: &mut [f64]) {
    for i in 0..n {
        x[i] = b[piv[i]];
    }
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= lu[i * n + k] * x[k];
        }
        x[i] = s;
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= lu[i * n + k] * x[k];
        }
        x[i] = s / lu[i * n + i];
    }
}

/// True when the symmetric matrix `a` admits a Cholesky factorisation.
pub fn is_positive_definite(a: &[f64], n: usize) -> bool {
    is_positive_definite_with(a, n, &mut vec![0.0; n * n])
}

/// [`is_positive_definite`] with caller-provided `n x n` scratch.
pub fn is_positive_definite_with(a: &[f64], n: usize, l: &mut [f64]) -> bool {
    l.fill(0.0);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = libm::sqrt(d);
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    true
}

/// Binomial coefficient as a float; exact for the lattice sizes used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// `binomial(n, k) / 2^n` computed in log space so large `n` does not overflow.
pub fn binomial_prob(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let ln = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k) - n as f64 * core::f64::consts::LN_2;
    libm::exp(ln)
}

fn ln_factorial(n: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

/// Ordinary least-squares slope of `y` against `x`; `NaN` with fewer than
/// two distinct abscissae.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return f64::NAN;
    }
    sxy / sxx
}
