//! Test-only oracles, independent of the library's solver paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use tailrisk_core::rng::SimRng;

pub fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum check loss over all basic solutions: every p-subset of rows whose
/// square system is nonsingular is solved exactly. Returns
/// `(objective, coefficients)` of the lexicographically smallest minimiser.
pub fn brute_force_qr(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> (f64, DVector<f64>) {
    let (n, p) = x.shape();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for s in subsets(n, p) {
        let a = DMatrix::from_fn(p, p, |r, c| x[(s[r], c)]);
        let rhs = DVector::from_fn(p, |r, _| y[s[r]]);
        let Some(lu) = a.clone().lu().solve(&rhs) else { continue };
        if a.determinant().abs() < 1e-12 {
            continue;
        }
        let obj: f64 = (0..n).map(|i| rho(y[i] - (x.row(i) * &lu)[0], tau)).sum();
        match &best {
            Some((b, _)) if obj > b * (1.0 + 1e-12) + 1e-14 => {}
            Some((b, c)) if obj >= b * (1.0 - 1e-12) - 1e-14 => {
                // tie: keep lexicographically smaller
                if lu.iter().zip(c.iter()).find(|(u, v)| (*u - *v).abs() > 1e-9).is_some_and(|(u, v)| u < v) {
                    best = Some((obj.min(*b), lu));
                }
            }
            _ => best = Some((obj, lu)),
        }
    }
    best.expect("at least one nonsingular basis")
}

/// Random design with an intercept column and `p - 1` standard normal
/// regressors; outcome linear plus heavy-ish noise.
pub fn random_instance(rng: &mut SimRng, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.normal() });
    let y = DVector::from_fn(n, |i, _| {
        let lin: f64 = (1..p).map(|j| 0.5 * j as f64 * x[(i, j)]).sum();
        1.0 + lin + rng.normal() * (1.0 + 0.5 * rng.uniform())
    });
    (x, y)
}

/// Dense hat-matrix projection `W (W'W)^{-1} W' v` computed with an explicit
/// inverse.
pub fn hat_projection(w: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let wtw = w.transpose() * w;
    let inv = wtw.try_inverse().expect("invertible");
    w * (inv * (w.transpose() * v))
}
