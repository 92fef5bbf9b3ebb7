use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tailrisk_core::data::{EstimationDataset, Month};
use tailrisk_core::ivqr::{AlphaGrid, IvqrOptions};
use tailrisk_core::mc::{simulate_stream, DgpSpec};
use tailrisk_core::record::{estimate, EstimatorChoice};
use tailrisk_core::risk::*;
use tailrisk_core::rng::SimRng;
use tailrisk_core::stats::norm_ppf;
use tailrisk_core::Error;

fn location_model(seed: u64, n: usize, mu: f64, sigma: f64) -> EstimationDataset {
    let mut rng = SimRng::new(seed);
    let d = DVector::from_fn(n, |_, _| rng.normal());
    let y = DVector::from_fn(n, |i, _| mu + 0.5 * d[i] + sigma * rng.normal());
    let z = DMatrix::from_column_slice(n, 1, d.as_slice());
    EstimationDataset::from_arrays("loc", y, d, DMatrix::zeros(n, 0), z).unwrap()
}

#[test]
fn decile_intercepts_follow_normal_quantiles() {
    let ds = location_model(1, 5000, 2.0, 1.5);
    let taus: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
    let grid = fit_quantile_grid(&ds, &taus, EstimatorChoice::Qr, &IvqrOptions::default()).unwrap();
    assert_eq!(grid.fits.len(), 9);
    for f in &grid.fits {
        let expected = 2.0 + 1.5 * norm_ppf(f.tau);
        let got = f.coefficients[1];
        assert!((got - expected).abs() < 0.1, "tau {}: {got} vs {expected}", f.tau);
        assert!((got - expected).abs() < 4.0 * f.standard_errors[1]);
    }
}

#[test]
fn singleton_grid_equals_direct_fit() {
    let ds = simulate_stream(&DgpSpec::default(), 2).unwrap().dataset;
    let opts = IvqrOptions::default();
    let grid = fit_quantile_grid(&ds, &[0.8], EstimatorChoice::IvqrAuto, &opts).unwrap();
    let direct = estimate(&ds, 0.8, EstimatorChoice::IvqrAuto, &opts).unwrap();
    assert_eq!(grid.fits, vec![direct.clone()]);
    let full = fit_quantile_grid(&ds, &default_taus(), EstimatorChoice::IvqrAuto, &opts).unwrap();
    let report = tail_risk(&full, 0.8, "sim", 12, "z").unwrap();
    assert_eq!(report.inflation_coefficient, direct.alpha());
    assert_eq!(report.inflation_se, direct.alpha_se());
    assert_eq!(report.coefficients, direct.coefficients);
    assert!(report.standard_errors.iter().all(|s| *s > 0.0));
    assert!(tail_risk(&full, 0.83, "sim", 12, "z").is_err());
}

#[test]
fn exogenous_tail_coefficient_matches_truth() {
    let spec = DgpSpec {
        rho: 0.0,
        seed: 5,
        ..Default::default()
    };
    let ds = simulate_stream(&spec, 0).unwrap().dataset;
    let grid = fit_quantile_grid(&ds, &[0.8], EstimatorChoice::Qr, &IvqrOptions::default()).unwrap();
    let r = tail_risk(&grid, 0.8, "sim", 12, "z").unwrap();
    let truth = spec.true_alpha(0.8);
    assert!((r.inflation_coefficient - truth).abs() <= 2.0 * r.inflation_se, "{} vs {truth}", r.inflation_coefficient);
}

#[test]
fn too_many_failed_levels_is_an_error() {
    let ds = simulate_stream(&DgpSpec::default(), 3).unwrap().dataset;
    let opts = IvqrOptions {
        grid: Some(AlphaGrid::new(5.0, 6.0, 0.05, 1).unwrap()),
        ..Default::default()
    };
    let r = fit_quantile_grid(&ds, &[0.3, 0.5, 0.7], EstimatorChoice::IvqrGrid, &opts);
    assert!(matches!(r, Err(Error::QuantileGrid { total: 3, .. })), "{r:?}");
    assert!(fit_quantile_grid(&ds, &[0.5, 0.3], EstimatorChoice::Qr, &opts).is_err());
    assert!(fit_quantile_grid(&ds, &[0.0, 0.5], EstimatorChoice::Qr, &opts).is_err());
}

#[test]
fn predictive_density_from_grid_is_a_distribution() {
    let ds = location_model(4, 1000, 0.0, 1.0);
    let grid = fit_quantile_grid(&ds, &default_taus(), EstimatorChoice::Qr, &IvqrOptions::default()).unwrap();
    let dens = predictive_density(&grid, &[0.3, 1.0], Some(5.0), &DensityOptions::default()).unwrap();
    assert!((dens.integral() - 1.0).abs() < 1e-6);
    assert!(dens.density.iter().all(|f| *f >= 0.0));
    assert!(dens.quantile_values.windows(2).all(|w| w[0] <= w[1]));
    let shifted = dens.level_support().unwrap();
    assert!(shifted.iter().zip(&dens.support).all(|(a, b)| (a - b - 5.0).abs() < 1e-12));
    let mut csv = Vec::new();
    dens.write_density_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("support,density,level_support\n"));
    assert!(predictive_density(&grid, &[0.3], None, &DensityOptions::default()).is_err());
}

#[test]
fn block_bootstrap_contrast_runs_on_shared_months() {
    let n = 240;
    let months: Vec<Month> = (0..n).map(|i| Month::new(2000, 1).unwrap().offset(i as i64)).collect();
    let make = |seed: u64| {
        let mut ds = location_model(seed, n, 0.0, 1.0);
        ds.months = Some(months.clone());
        ds.horizon_months = 12;
        ds
    };
    let (a, b) = (make(10), make(11));
    let opts = IvqrOptions::default();
    let ra = TailRiskReport::from_record(&estimate(&a, 0.8, EstimatorChoice::Qr, &opts).unwrap(), "a", 12, "z");
    let rb = TailRiskReport::from_record(&estimate(&b, 0.8, EstimatorChoice::Qr, &opts).unwrap(), "b", 12, "z");
    let mode = ContrastMode::BlockBootstrap {
        reps: 60,
        block: None,
        seed: 3,
    };
    let c = bootstrap_contrast(&ra, &rb, &a, &b, EstimatorChoice::Qr, &opts, mode).unwrap();
    assert_eq!(c.mode, "block_bootstrap");
    assert!(c.gap_se > 0.0);
    assert!((c.z_score - c.coefficient_gap / c.gap_se).abs() < 1e-12);
    let again = bootstrap_contrast(&ra, &rb, &a, &b, EstimatorChoice::Qr, &opts, mode).unwrap();
    assert_eq!(c, again);
    let mut other = rb.clone();
    other.horizon_months = 36;
    assert!(matches!(group_contrast(&ra, &other), Err(Error::Mismatch(_))));
}

fn quantile_vectors() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 17)
}

proptest! {
    #[test]
    fn rearrangement_is_an_idempotent_sort(v in prop::collection::vec(-1e6f64..1e6, 0..40)) {
        let r = rearrange(&v);
        prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(rearrange(&r), r.clone());
        let mut a = v.clone();
        a.sort_by(f64::total_cmp);
        prop_assert_eq!(a, r);
    }

    #[test]
    fn density_integrates_and_inverts(q in quantile_vectors()) {
        let taus = default_taus();
        prop_assume!(rearrange(&q).windows(2).any(|w| w[1] > w[0]));
        let d = density_from_quantiles(&taus, &q, &DensityOptions::default()).unwrap();
        prop_assert!((d.integral() - 1.0).abs() < 1e-6);
        prop_assert!(d.density.iter().all(|f| *f >= 0.0 && f.is_finite()));
        let sorted = rearrange(&q);
        prop_assert_eq!(&d.quantile_values[1..d.quantile_values.len() - 1], &sorted[..]);
        for (t, v) in d.quantile_taus.iter().zip(&d.quantile_values) {
            let back = d.quantile_from_density(*t);
            let scale = 1.0 + v.abs();
            // flat stretches invert to their right end, like any quantile function
            let tie_ok = sorted.iter().filter(|s| *s == v).count() > 1;
            prop_assert!(tie_ok || (back - v).abs() <= 1e-6 * scale, "tau {} value {} back {}", t, v, back);
        }
    }
}
