//! Two-stage least squares and the residual diagnostics used to judge
//! whether a linear model describes the tails of the outcome.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::EstimationDataset;
use crate::error::{Error, Result};
use crate::qreg::CovarianceMode;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearIvOptions {
    pub covariance: CovarianceMode,
    /// First-stage F below this attaches a weak-instrument warning.
    pub weak_f_threshold: f64,
}

impl Default for LinearIvOptions {
    fn default() -> Self {
        LinearIvOptions {
            covariance: CovarianceMode::Robust,
            weak_f_threshold: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirstStage {
    /// Coefficients on `[X, Z]`.
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    /// Homoskedastic F statistic for excluding `Z` from the first stage.
    pub f_statistic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearIvFit {
    pub alpha: f64,
    pub beta: DVector<f64>,
    /// `y - d alpha - X beta`, using the observed `d`.
    pub residuals: DVector<f64>,
    /// Covariance of `[alpha, beta]`.
    pub covariance: DMatrix<f64>,
    pub first_stage: FirstStage,
    pub warning: Option<String>,
}

impl LinearIvFit {
    pub fn coefficients(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.beta.len() + 1);
        c[0] = self.alpha;
        c.rows_mut(1, self.beta.len()).copy_from(&self.beta);
        c
    }

    pub fn standard_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn alpha_se(&self) -> f64 {
        self.covariance[(0, 0)].max(0.0).sqrt()
    }
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn named_rank_check(m: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let dep = stats::dependent_columns(m);
    if dep.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient {
            columns: dep.iter().map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("column {j}"))).collect(),
        })
    }
}

/// Least-squares projection of `d` on `[X, Z]`.
pub fn first_stage(ds: &EstimationDataset) -> Result<FirstStage> {
    let w = hstack(&ds.x, &ds.z);
    let names: Vec<String> = ds.control_names.iter().chain(&ds.instrument_names).cloned().collect();
    named_rank_check(&w, &names)?;
    let (coefficients, fitted) = stats::least_squares(&w, &ds.d)?;
    let (_, restricted) = stats::least_squares(&ds.x, &ds.d)?;
    let rss_u = (&ds.d - &fitted).norm_squared();
    let rss_r = (&ds.d - &restricted).norm_squared();
    let q = ds.p_z() as f64;
    let dof = ds.n() as f64 - w.ncols() as f64;
    let f_statistic = if rss_u <= 1e-14 * rss_r.max(1e-300) {
        f64::INFINITY
    } else {
        (((rss_r - rss_u) / q) / (rss_u / dof)).max(0.0)
    };
    Ok(FirstStage {
        coefficients,
        fitted,
        f_statistic,
    })
}

fn sandwich_ls(bread_inv: &DMatrix<f64>, design: &DMatrix<f64>, resid: &DVector<f64>, mode: CovarianceMode) -> DMatrix<f64> {
    let mut scores = design.clone();
    for i in 0..design.nrows() {
        scores.row_mut(i).scale_mut(resid[i]);
    }
    let meat = match mode {
        CovarianceMode::Robust => stats::bartlett_long_run(&scores, 0),
        CovarianceMode::Hac(lags) => stats::bartlett_long_run(&scores, lags),
    };
    let mut cov = bread_inv * meat * bread_inv;
    stats::symmetrize(&mut cov);
    cov
}

pub fn fit_2sls(ds: &EstimationDataset) -> Result<LinearIvFit> {
    fit_2sls_with(ds, &LinearIvOptions::default())
}

/// Classical 2SLS: `d` is replaced by its first-stage fit, and the robust
/// (HC0 or Bartlett HAC) sandwich is built from the projected regressors.
pub fn fit_2sls_with(ds: &EstimationDataset, opts: &LinearIvOptions) -> Result<LinearIvFit> {
    if ds.p_z() < ds.p_d() {
        return Err(Error::Parameter("fewer instruments than endogenous regressors".into()));
    }
    let fs = first_stage(ds)?;
    let mut projected = ds.x.clone().insert_column(0, 0.0);
    projected.set_column(0, &fs.fitted);
    named_rank_check(&projected, &ds.regressor_names())?;
    let (coef, _) = stats::least_squares(&projected, &ds.y)?;
    let regressors = ds.regressors();
    let residuals = &ds.y - &regressors * &coef;
    let bread_inv = stats::spd_inverse(&(projected.transpose() * &projected), "2SLS bread")?;
    let covariance = sandwich_ls(&bread_inv, &projected, &residuals, opts.covariance);
    let warning = (fs.f_statistic < opts.weak_f_threshold).then(|| {
        format!(
            "weak instruments: first-stage F = {:.3} below {}",
            fs.f_statistic, opts.weak_f_threshold
        )
    });
    Ok(LinearIvFit {
        alpha: coef[0],
        beta: coef.rows(1, coef.len() - 1).into_owned(),
        residuals,
        covariance,
        first_stage: fs,
        warning,
    })
}

/// Ordinary least squares of `y` on `[d, X]` with the same robust
/// covariance as 2SLS.
pub fn fit_ols(ds: &EstimationDataset, mode: CovarianceMode) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    let regressors = ds.regressors();
    named_rank_check(&regressors, &ds.regressor_names())?;
    let (coef, fitted) = stats::least_squares(&regressors, &ds.y)?;
    let residuals = &ds.y - fitted;
    let bread_inv = stats::spd_inverse(&(regressors.transpose() * &regressors), "OLS bread")?;
    let cov = sandwich_ls(&bread_inv, &regressors, &residuals, mode);
    Ok((coef, residuals, cov))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualMoments {
    pub n: usize,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Standardised third moment and fourth moment minus three, using
/// population (1/n) central moments.
pub fn residual_moments(residuals: &[f64]) -> Result<ResidualMoments> {
    let n = residuals.len();
    if n < 4 {
        return Err(Error::Parameter(format!("need at least 4 residuals, got {n}")));
    }
    let m = stats::mean(residuals);
    let nf = n as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &r in residuals {
        let d = r - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 1e-300 {
        return Err(Error::Parameter("residual variance is zero".into()));
    }
    Ok(ResidualMoments {
        n,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// `(normal quantile at (i - 0.5)/n, i-th order statistic of the
/// standardised residuals)`.
pub fn qq_data(residuals: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = residuals.len();
    if n < 3 {
        return Err(Error::Parameter(format!("need at least 3 residuals, got {n}")));
    }
    let m = stats::mean(residuals);
    let sd = stats::sample_sd(residuals);
    let mut z: Vec<f64> = residuals
        .iter()
        .map(|r| if sd > 0.0 { (r - m) / sd } else { 0.0 })
        .collect();
    z.sort_by(f64::total_cmp);
    Ok(z
        .into_iter()
        .enumerate()
        .map(|(i, v)| (stats::norm_ppf((i as f64 + 0.5) / n as f64), v))
        .collect())
}
