mod common;

use common::{brute_force_qr, random_instance, rho};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tailrisk_core::qreg::{check_loss, fit_quantile, total_check_loss};
use tailrisk_core::rng::SimRng;

#[test]
fn matches_basic_solution_enumeration_n20_p2() {
    let mut rng = SimRng::new(20);
    for tau in [0.2, 0.5, 0.8] {
        let (x, y) = random_instance(&mut rng, 20, 2);
        let (obj, coef) = brute_force_qr(&x, &y, tau);
        let fit = fit_quantile(&x, &y, tau).unwrap();
        assert!((fit.objective - obj).abs() <= 1e-10 * obj.max(1.0));
        assert!((fit.coefficients.clone() - coef).amax() < 1e-8);
    }
}

#[test]
fn objective_is_sum_of_check_losses() {
    let mut rng = SimRng::new(3);
    let (x, y) = random_instance(&mut rng, 60, 3);
    let fit = fit_quantile(&x, &y, 0.7).unwrap();
    let direct: f64 = fit.residuals.iter().map(|&u| rho(u, 0.7)).sum();
    assert!((fit.objective - direct).abs() <= 1e-9 * direct);
    let recomputed = &y - &x * &fit.coefficients;
    assert!((recomputed - &fit.residuals).amax() < 1e-9);
}

#[test]
fn residuals_vanish_on_basis() {
    let mut rng = SimRng::new(4);
    let (x, y) = random_instance(&mut rng, 80, 3);
    let fit = fit_quantile(&x, &y, 0.35).unwrap();
    let zeros = fit.residuals.iter().filter(|r| r.abs() < 1e-10).count();
    assert!(zeros >= 3);
}

#[test]
fn fuzz_perturbations_never_improve() {
    let mut rng = SimRng::new(5);
    let (x, y) = random_instance(&mut rng, 100, 3);
    let tau = 0.8;
    let fit = fit_quantile(&x, &y, tau).unwrap();
    for k in 0..1000 {
        let scale = 10f64.powi(-(k % 6) as i32);
        let b = &fit.coefficients + DVector::from_fn(3, |_, _| scale * rng.normal());
        let obj = total_check_loss(&(&y - &x * b), tau);
        assert!(fit.objective <= obj * (1.0 + 1e-12));
    }
}

#[test]
fn intercept_subgradient_conditions() {
    let mut rng = SimRng::new(6);
    for n in [7usize, 30, 101] {
        let y = DVector::from_fn(n, |_, _| rng.normal());
        let x = DMatrix::from_element(n, 1, 1.0);
        for tau in [0.1, 0.37, 0.5, 0.9] {
            let b = fit_quantile(&x, &y, tau).unwrap().coefficients[0];
            let below = y.iter().filter(|&&v| v < b).count() as f64;
            let above = y.iter().filter(|&&v| v > b).count() as f64;
            assert!(below <= n as f64 * tau + 1e-9);
            assert!(above <= n as f64 * (1.0 - tau) + 1e-9);
        }
    }
}

#[test]
fn regressor_equivariance() {
    let mut rng = SimRng::new(8);
    let (x, y) = random_instance(&mut rng, 120, 3);
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 2.0, -1.0, 0.0, 0.3, 1.5]);
    let fit = fit_quantile(&x, &y, 0.6).unwrap();
    let fit_a = fit_quantile(&(&x * &a), &y, 0.6).unwrap();
    let expect = a.clone().try_inverse().unwrap() * &fit.coefficients;
    assert!((fit_a.coefficients - expect).amax() < 1e-8);
    assert!((fit_a.residuals - fit.residuals).amax() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn check_loss_reflection(u in -1e6f64..1e6, tau in 0.001f64..0.999) {
        let a = check_loss(u, tau);
        let b = check_loss(-u, 1.0 - tau);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn scale_equivariance(seed in 0u64..10_000, c in 0.1f64..50.0, tau in 0.05f64..0.95) {
        let mut rng = SimRng::new(seed);
        let (x, y) = random_instance(&mut rng, 40, 2);
        let fit = fit_quantile(&x, &y, tau).unwrap();
        let scaled = fit_quantile(&x, &(&y * c), tau).unwrap();
        prop_assert!((scaled.coefficients - &fit.coefficients * c).amax() <= 1e-8 * c * (1.0 + fit.coefficients.amax()));
        prop_assert!((scaled.objective - c * fit.objective).abs() <= 1e-9 * c * fit.objective.max(1.0));
    }
}
