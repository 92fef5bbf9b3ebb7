//! Monte Carlo laboratory with analytically known quantile coefficients.
//!
//! The structural model is
//!
//! ```text
//! z, v, w ~ N(0, 1) independent
//! U = Φ(ρ v + sqrt(1 - ρ²) w)
//! d = exp(π z + 0.3 v)
//! y = Φ⁻¹(U) + d (alpha_base + alpha_slope Φ⁻¹(U))
//! ```
//!
//! so that `y` is increasing in `U` and the `tau` quantile of `y` given
//! `(d, z)` under the structural model is `Φ⁻¹(tau) + d alpha(tau)` with
//! `alpha(tau) = alpha_base + alpha_slope Φ⁻¹(tau)`. With `ρ ≠ 0` the
//! regressor `d` is correlated with `U` and plain quantile regression is
//! inconsistent.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EstimationDataset;
use crate::error::{Error, Result};
use crate::ivqr::IvqrOptions;
use crate::qreg;
use crate::record::{self, EstimatorChoice};
use crate::rng::SimRng;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub rho: f64,
    pub pi: f64,
    pub alpha_base: f64,
    pub alpha_slope: f64,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n: 2000,
            rho: 0.5,
            pi: 0.5,
            alpha_base: 1.0,
            alpha_slope: 0.2,
            seed: 20240501,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Parameter(format!("|rho| must be below 1, got {}", self.rho)));
        }
        if self.n < 50 {
            return Err(Error::Parameter(format!("n must be at least 50, got {}", self.n)));
        }
        if ![self.pi, self.alpha_base, self.alpha_slope].iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("DGP parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn true_alpha(&self, tau: f64) -> f64 {
        self.alpha_base + self.alpha_slope * stats::norm_ppf(tau)
    }

    pub fn true_intercept(&self, tau: f64) -> f64 {
        stats::norm_ppf(tau)
    }
}

/// A simulated dataset together with its latent rank variable.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub dataset: EstimationDataset,
    pub rank: Vec<f64>,
}

/// Draws from stream `stream` of `spec.seed`. Each observation consumes
/// `z`, `v`, `w` in that order.
pub fn simulate_stream(spec: &DgpSpec, stream: u64) -> Result<Simulation> {
    spec.validate()?;
    let mut rng = SimRng::for_stream(spec.seed, stream);
    let n = spec.n;
    let mut y = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    let mut z = DMatrix::zeros(n, 1);
    let mut rank = Vec::with_capacity(n);
    let s = (1.0 - spec.rho * spec.rho).sqrt();
    for i in 0..n {
        let zi = rng.normal();
        let v = rng.normal();
        let w = rng.normal();
        let e = spec.rho * v + s * w;
        let di = (spec.pi * zi + 0.3 * v).exp();
        z[(i, 0)] = zi;
        d[i] = di;
        y[i] = e + di * (spec.alpha_base + spec.alpha_slope * e);
        rank.push(stats::norm_cdf(e));
    }
    let mut dataset = EstimationDataset::from_arrays("simulated", y, d, DMatrix::zeros(n, 0), z)?;
    dataset.instrument_names = vec!["z".into()];
    Ok(Simulation { dataset, rank })
}

pub fn simulate_dgp(spec: &DgpSpec) -> Result<EstimationDataset> {
    simulate_stream(spec, 0).map(|s| s.dataset)
}

/// Estimate and standard error of the coefficient on `d`.
pub fn estimate_alpha(
    ds: &EstimationDataset,
    tau: f64,
    estimator: EstimatorChoice,
    opts: &IvqrOptions,
) -> Result<(f64, f64)> {
    let rec = record::estimate(ds, tau, estimator, opts)?;
    Ok((rec.alpha(), rec.alpha_se()))
}

/// One replication: per-tau estimate and standard error, or the failure
/// message.
pub type Replication = Vec<std::result::Result<(f64, f64), String>>;

pub fn replicate(
    spec: &DgpSpec,
    rep: usize,
    taus: &[f64],
    estimator: EstimatorChoice,
    opts: &IvqrOptions,
) -> Result<Replication> {
    let sim = simulate_stream(spec, rep as u64)?;
    Ok(taus
        .iter()
        .map(|&t| estimate_alpha(&sim.dataset, t, estimator, opts).map_err(|e| e.to_string()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub tau: f64,
    pub true_alpha: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Share of successful replications whose 95% interval covers the truth.
    pub coverage_95: f64,
    /// Monte Carlo standard error of `bias`.
    pub bias_se: f64,
    pub mean_se: f64,
    pub reps: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McStudyResult {
    pub spec: DgpSpec,
    pub estimator: EstimatorChoice,
    pub rows: Vec<StudyRow>,
    /// `(rep, tau, message)` for every failed fit.
    pub failure_log: Vec<(usize, f64, String)>,
}

/// Replications run in parallel; replication `k` draws from stream `k`, so
/// the result does not depend on the number of threads.
pub fn run_study(
    spec: &DgpSpec,
    taus: &[f64],
    reps: usize,
    estimator: EstimatorChoice,
    opts: &IvqrOptions,
) -> Result<McStudyResult> {
    spec.validate()?;
    if reps < 50 {
        return Err(Error::Parameter(format!("a study needs at least 50 replications, got {reps}")));
    }
    for &t in taus {
        qreg::QuantileLevel::new(t)?;
    }
    let outcomes: Vec<Replication> = (0..reps)
        .into_par_iter()
        .map(|r| replicate(spec, r, taus, estimator, opts))
        .collect::<Result<_>>()?;

    let crit = stats::norm_ppf(0.975);
    let mut rows = Vec::with_capacity(taus.len());
    let mut failure_log = Vec::new();
    for (j, &tau) in taus.iter().enumerate() {
        let truth = spec.true_alpha(tau);
        let mut est = Vec::with_capacity(reps);
        let mut covered = 0usize;
        let mut se_sum = 0.0;
        for (r, out) in outcomes.iter().enumerate() {
            match &out[j] {
                Ok((a, se)) if a.is_finite() => {
                    est.push(*a);
                    se_sum += se;
                    if (a - truth).abs() <= crit * se {
                        covered += 1;
                    }
                }
                Ok((a, _)) => failure_log.push((r, tau, format!("non-finite estimate {a}"))),
                Err(msg) => failure_log.push((r, tau, msg.clone())),
            }
        }
        let failures = reps - est.len();
        if failures as f64 > 0.1 * reps as f64 {
            let first = failure_log
                .iter()
                .find(|f| f.1 == tau)
                .map(|f| format!("rep {} at tau {}: {}", f.0, f.1, f.2))
                .unwrap_or_default();
            return Err(Error::Study {
                failed: failures,
                total: reps,
                first,
            });
        }
        let m = est.len() as f64;
        let mean = stats::mean(&est);
        let mse = est.iter().map(|a| (a - truth).powi(2)).sum::<f64>() / m;
        rows.push(StudyRow {
            tau,
            true_alpha: truth,
            mean_estimate: mean,
            bias: mean - truth,
            rmse: mse.sqrt(),
            coverage_95: covered as f64 / m,
            bias_se: stats::sample_sd(&est) / m.sqrt(),
            mean_se: se_sum / m,
            reps: est.len(),
            failures,
        });
    }
    Ok(McStudyResult {
        spec: *spec,
        estimator,
        rows,
        failure_log,
    })
}

impl McStudyResult {
    /// Columns: `tau,true_alpha,mean_estimate,bias,rmse,coverage_95,bias_se,mean_se,reps,failures`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Input(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_at_eighty_percent() {
        let s = DgpSpec::default();
        assert!((s.true_alpha(0.8) - 1.16832).abs() < 1e-5);
        let flat = DgpSpec {
            alpha_slope: 0.0,
            ..s
        };
        for t in [0.1, 0.5, 0.9] {
            assert_eq!(flat.true_alpha(t), 1.0);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(DgpSpec { rho: 1.0, ..Default::default() }.validate().is_err());
        assert!(DgpSpec { n: 49, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn outcome_increasing_in_rank() {
        let sim = simulate_stream(&DgpSpec { n: 200, ..Default::default() }, 3).unwrap();
        let ds = &sim.dataset;
        for i in 0..ds.n() {
            let e = stats::norm_ppf(sim.rank[i]);
            let y = e + ds.d[i] * (1.0 + 0.2 * e);
            assert!((y - ds.y[i]).abs() < 1e-9 * (1.0 + y.abs()));
            assert!(ds.d[i] > 0.0);
        }
    }
}
