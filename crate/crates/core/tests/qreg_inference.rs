use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use tailrisk_core::qreg::{fit_quantile, qreg_cov, Bandwidth, CovarianceMode};
use tailrisk_core::rng::SimRng;
use tailrisk_core::stats::{norm_pdf, norm_ppf};

fn gaussian_design(seed: u64, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = SimRng::new(seed);
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.normal() });
    let y = DVector::from_fn(n, |i, _| 1.0 + 0.5 * x[(i, 1)] + rng.normal());
    (x, y)
}

#[test]
fn standard_errors_match_asymptotic_formula() {
    let n = 5000;
    let (x, y) = gaussian_design(7, n);
    for tau in [0.5, 0.8] {
        let fit = fit_quantile(&x, &y, tau).unwrap();
        let cov = qreg_cov(&fit, &x, Bandwidth::HallSheather, CovarianceMode::Robust).unwrap();
        let f = norm_pdf(norm_ppf(tau));
        let xtx_inv = (x.transpose() * &x / n as f64).try_inverse().unwrap();
        let avar = xtx_inv * (tau * (1.0 - tau) / (f * f) / n as f64);
        for j in 0..2 {
            let ratio = cov[(j, j)].sqrt() / avar[(j, j)].sqrt();
            assert!((ratio - 1.0).abs() < 0.15, "tau {tau} coef {j}: ratio {ratio}");
        }
    }
}

#[test]
fn doubling_outcome_quadruples_covariance() {
    let (x, y) = gaussian_design(3, 400);
    let a = fit_quantile(&x, &y, 0.7).unwrap();
    let b = fit_quantile(&x, &(&y * 2.0), 0.7).unwrap();
    assert!((b.coefficients.clone() - a.coefficients.clone() * 2.0).amax() < 1e-9);
    let ca = qreg_cov(&a, &x, Bandwidth::HallSheather, CovarianceMode::Robust).unwrap();
    let cb = qreg_cov(&b, &x, Bandwidth::HallSheather, CovarianceMode::Robust).unwrap();
    assert!((cb - ca.clone() * 4.0).amax() < 1e-9 * ca.amax());
}

#[test]
fn confidence_intervals_cover_at_nominal_rate() {
    let tau = 0.5;
    let truth = 0.5;
    let hits: usize = (0..1000u64)
        .into_par_iter()
        .map(|seed| {
            let (x, y) = gaussian_design(10_000 + seed, 200);
            let fit = fit_quantile(&x, &y, tau).unwrap();
            let cov = qreg_cov(&fit, &x, Bandwidth::HallSheather, CovarianceMode::Robust).unwrap();
            usize::from((fit.coefficients[1] - truth).abs() <= 1.96 * cov[(1, 1)].sqrt())
        })
        .sum();
    let coverage = hits as f64 / 1000.0;
    assert!((0.90..=0.98).contains(&coverage), "coverage {coverage}");
}

#[test]
fn nonpositive_fixed_bandwidth_is_rejected() {
    let (x, y) = gaussian_design(1, 50);
    let fit = fit_quantile(&x, &y, 0.5).unwrap();
    assert!(qreg_cov(&fit, &x, Bandwidth::Fixed(0.0), CovarianceMode::Robust).is_err());
    assert!(qreg_cov(&fit, &x, Bandwidth::Fixed(-1.0), CovarianceMode::Robust).is_err());
}
