//! Numerical helpers shared by the estimators: standard normal functions,
//! sample moments and a few dense least-squares routines.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_pdf(x: f64) -> f64 {
    std_normal().pdf(x)
}

/// Standard normal quantile. Returns ±inf at the endpoints.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        std_normal().inverse_cdf(p)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the n-1 denominator.
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

/// Linear-interpolation sample quantile (Hyndman–Fan type 7).
pub fn sample_quantile(xs: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, p)
}

pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n as f64 - 1.0) * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Robust scale `min(sd, IQR / 1.34)`, falling back to whichever is positive.
pub fn robust_scale(xs: &[f64]) -> f64 {
    let sd = sample_sd(xs);
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let iqr = (sorted_quantile(&v, 0.75) - sorted_quantile(&v, 0.25)) / 1.34;
    match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        _ => 0.0,
    }
}

/// Indices of columns that are (numerically) linear combinations of earlier
/// columns, found by modified Gram–Schmidt.
pub fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let (n, p) = x.shape();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut dependent = Vec::new();
    for j in 0..p {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for q in &basis {
            let proj = q.dot(&v);
            v.axpy(-proj, q, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0.max(1e-300) * (n as f64).sqrt().max(1.0) {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}

/// Least-squares fit returning `(coefficients, fitted)`.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::Underdetermined { rows: n, columns: p });
    }
    let dep = dependent_columns(x);
    if !dep.is_empty() {
        return Err(Error::RankDeficient {
            columns: dep.iter().map(|j| format!("column {j}")).collect(),
        });
    }
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::Singular("least-squares triangular solve"))?;
    let fitted = x * &coef;
    Ok((coef, fitted))
}

/// Inverse of a symmetric positive (semi)definite matrix; Cholesky first,
/// LU as a fallback.
pub fn spd_inverse(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.inverse());
    }
    general_inverse(a, what)
}

pub fn general_inverse(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let inv = a.clone().try_inverse().ok_or(Error::Singular(what))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what))
    }
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Bartlett-weighted long-run outer product of the rows of `scores`
/// (n x k), summed rather than averaged. `lags = 0` gives `S'S`.
pub fn bartlett_long_run(scores: &DMatrix<f64>, lags: usize) -> DMatrix<f64> {
    let (n, k) = scores.shape();
    let mut out = scores.transpose() * scores;
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let mut gamma = DMatrix::<f64>::zeros(k, k);
        for t in l..n {
            let a = scores.row(t);
            let b = scores.row(t - l);
            for i in 0..k {
                for j in 0..k {
                    gamma[(i, j)] += a[i] * b[j];
                }
            }
        }
        out += (&gamma + gamma.transpose()) * w;
    }
    out
}
