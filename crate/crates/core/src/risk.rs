//! Quantile grids, predictive densities, tail-risk reports and group
//! contrasts.
//!
//! A predictive density is built from the fitted quantiles at a
//! conditioning row: the per-tau predictions are sorted (monotone
//! rearrangement), linearly interpolated as a quantile function, extended
//! linearly to the tail levels with the slope of the outermost segment, and
//! differentiated. Linear interpolation of the quantile function makes the
//! density piecewise constant, so the support lists every knot twice (once
//! closing the segment on its left, once opening the one on its right) and
//! trapezoid integration over the support is exact.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EstimationDataset;
use crate::error::{Error, Result};
use crate::ivqr::IvqrOptions;
use crate::qreg::QuantileLevel;
use crate::record::{self, EstimatorChoice, FitRecord};
use crate::rng::SimRng;
use crate::stats;

/// 0.10, 0.15, ..., 0.90.
pub fn default_taus() -> Vec<f64> {
    (2..=18).map(|k| k as f64 / 20.0).collect()
}

fn validate_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::Parameter("quantile grid is empty".into()));
    }
    for &t in taus {
        QuantileLevel::new(t)?;
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("quantile levels must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileGridFit {
    pub dataset_id: String,
    pub estimator: EstimatorChoice,
    pub taus: Vec<f64>,
    /// Successful fits, in tau order.
    pub fits: Vec<FitRecord>,
    /// `(tau, error)` for each level that failed.
    pub failures: Vec<(f64, String)>,
}

impl QuantileGridFit {
    pub fn fit_at(&self, tau: f64) -> Option<&FitRecord> {
        self.fits.iter().find(|f| (f.tau - tau).abs() < 1e-9)
    }

    /// Columns: `tau,method,term,estimate,se`.
    pub fn write_coefficients_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "method", "term", "estimate", "se"]).map_err(csv_err)?;
        for f in &self.fits {
            for (k, name) in f.names.iter().enumerate() {
                w.write_record([
                    fmt(f.tau),
                    f.method.clone(),
                    name.clone(),
                    fmt(f.coefficients[k]),
                    fmt(f.standard_errors[k]),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("CSV write failed: {e}"))
}

/// Shortest representation that round-trips.
fn fmt(v: f64) -> String {
    format!("{v}")
}

/// One fit per level. Levels are fitted in parallel and collected in order.
/// Individual failures are recorded; more than 20% failing is an error.
pub fn fit_quantile_grid(
    ds: &EstimationDataset,
    taus: &[f64],
    choice: EstimatorChoice,
    opts: &IvqrOptions,
) -> Result<QuantileGridFit> {
    validate_taus(taus)?;
    let results: Vec<Result<FitRecord>> = taus.par_iter().map(|&t| record::estimate(ds, t, choice, opts)).collect();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (&t, r) in taus.iter().zip(results) {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((t, e.to_string())),
        }
    }
    if failures.len() as f64 > 0.2 * taus.len() as f64 {
        let detail = failures
            .iter()
            .map(|(t, e)| format!("tau {t}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::QuantileGrid {
            failed: failures.len(),
            total: taus.len(),
            detail,
        });
    }
    Ok(QuantileGridFit {
        dataset_id: ds.label.clone(),
        estimator: choice,
        taus: taus.to_vec(),
        fits,
        failures,
    })
}

/// Monotone rearrangement: the values sorted ascending.
pub fn rearrange(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityOptions {
    pub tail_lower: f64,
    pub tail_upper: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            tail_lower: 0.02,
            tail_upper: 0.98,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDensity {
    /// Outcome values, nondecreasing; interior knots appear twice.
    pub support: Vec<f64>,
    pub density: Vec<f64>,
    /// Levels of the quantile function knots, including the tail levels.
    pub quantile_taus: Vec<f64>,
    /// Rearranged quantile function at `quantile_taus`.
    pub quantile_values: Vec<f64>,
    pub conditioning_names: Vec<String>,
    pub conditioning: Vec<f64>,
    /// Current level of the outcome, for the level-shifted density.
    pub level: Option<f64>,
}

impl PredictiveDensity {
    /// Trapezoid integral of the density over the support.
    pub fn integral(&self) -> f64 {
        self.support
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, f)| 0.5 * (f[0] + f[1]) * (x[1] - x[0]))
            .sum()
    }

    /// Density at `x` (right-continuous at knots, zero off the support).
    pub fn density_at(&self, x: f64) -> f64 {
        let n = self.support.len();
        if n < 2 || x < self.support[0] || x > self.support[n - 1] {
            return 0.0;
        }
        // last segment [s_i, s_{i+1}] of positive width with s_i <= x
        let mut best = 0.0;
        for i in 0..n - 1 {
            if self.support[i] <= x && x <= self.support[i + 1] && self.support[i + 1] > self.support[i] {
                best = self.density[i];
            }
        }
        best
    }

    /// Distribution function implied by the density.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.support.len().saturating_sub(1) {
            let (a, b) = (self.support[i], self.support[i + 1]);
            if x <= a {
                break;
            }
            let hi = x.min(b);
            acc += self.density[i] * (hi - a);
        }
        acc
    }

    /// Value at which the density accumulates the normalized mass of level
    /// `tau`.
    pub fn quantile_from_density(&self, tau: f64) -> f64 {
        let lo = self.quantile_taus[0];
        let hi = *self.quantile_taus.last().unwrap();
        let target = ((tau - lo) / (hi - lo)).clamp(0.0, 1.0);
        let mut acc = 0.0;
        for i in 0..self.support.len().saturating_sub(1) {
            let (a, b) = (self.support[i], self.support[i + 1]);
            let mass = self.density[i] * (b - a);
            if mass > 0.0 && acc + mass >= target {
                return a + (target - acc) / self.density[i];
            }
            acc += mass;
        }
        *self.support.last().unwrap()
    }

    /// Support shifted by the current level.
    pub fn level_support(&self) -> Option<Vec<f64>> {
        self.level.map(|l| self.support.iter().map(|s| s + l).collect())
    }

    /// Columns: `support,density` plus `level_support` when a level is set.
    pub fn write_density_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let shifted = self.level_support();
        if shifted.is_some() {
            w.write_record(["support", "density", "level_support"]).map_err(csv_err)?;
        } else {
            w.write_record(["support", "density"]).map_err(csv_err)?;
        }
        for i in 0..self.support.len() {
            let mut row = vec![fmt(self.support[i]), fmt(self.density[i])];
            if let Some(s) = &shifted {
                row.push(fmt(s[i]));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }

    /// Columns: `tau,quantile`.
    pub fn write_quantile_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "quantile"]).map_err(csv_err)?;
        for (t, q) in self.quantile_taus.iter().zip(&self.quantile_values) {
            w.write_record([fmt(*t), fmt(*q)]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }
}

/// Density from quantile levels and (possibly crossing) predictions.
pub fn density_from_quantiles(taus: &[f64], predictions: &[f64], opts: &DensityOptions) -> Result<PredictiveDensity> {
    if taus.len() != predictions.len() {
        return Err(Error::Parameter("levels and predictions differ in length".into()));
    }
    if taus.len() < 4 {
        return Err(Error::Parameter(format!(
            "a predictive density needs at least 4 fitted quantiles, got {}",
            taus.len()
        )));
    }
    validate_taus(taus)?;
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite quantile prediction".into()));
    }
    if !(0.0 < opts.tail_lower && opts.tail_lower <= taus[0] && taus[taus.len() - 1] <= opts.tail_upper && opts.tail_upper < 1.0) {
        return Err(Error::Parameter(format!(
            "tail levels [{}, {}] must lie in (0, 1) and bracket the grid",
            opts.tail_lower, opts.tail_upper
        )));
    }
    let q = rearrange(predictions);
    let k = q.len();
    let mut kt = Vec::with_capacity(k + 2);
    let mut kq = Vec::with_capacity(k + 2);
    if opts.tail_lower < taus[0] {
        let slope = (q[1] - q[0]) / (taus[1] - taus[0]);
        kt.push(opts.tail_lower);
        kq.push(q[0] - slope * (taus[0] - opts.tail_lower));
    }
    kt.extend_from_slice(taus);
    kq.extend_from_slice(&q);
    if opts.tail_upper > taus[k - 1] {
        let slope = (q[k - 1] - q[k - 2]) / (taus[k - 1] - taus[k - 2]);
        kt.push(opts.tail_upper);
        kq.push(q[k - 1] + slope * (opts.tail_upper - taus[k - 1]));
    }
    let total = kt[kt.len() - 1] - kt[0];
    let width = kq[kq.len() - 1] - kq[0];
    if !(width > 0.0) {
        return Err(Error::Parameter("degenerate predictive distribution: all quantiles coincide".into()));
    }

    // segments of zero width carry no density; their mass joins the next
    // segment of positive width (or the previous one at the top)
    let nseg = kt.len() - 1;
    let mut mass: Vec<f64> = (0..nseg).map(|j| (kt[j + 1] - kt[j]) / total).collect();
    let widths: Vec<f64> = (0..nseg).map(|j| kq[j + 1] - kq[j]).collect();
    let mut carry = 0.0;
    for j in 0..nseg {
        if widths[j] > 0.0 {
            mass[j] += carry;
            carry = 0.0;
        } else {
            carry += mass[j];
            mass[j] = 0.0;
        }
    }
    if carry > 0.0 {
        let j = (0..nseg).rev().find(|&j| widths[j] > 0.0).unwrap();
        mass[j] += carry;
    }

    let mut support = vec![kq[0]];
    let mut density = vec![0.0];
    for j in 0..nseg {
        if widths[j] > 0.0 {
            let f = mass[j] / widths[j];
            support.push(kq[j]);
            density.push(f);
            support.push(kq[j + 1]);
            density.push(f);
        }
    }
    support.push(kq[kq.len() - 1]);
    density.push(0.0);

    Ok(PredictiveDensity {
        support,
        density,
        quantile_taus: kt,
        quantile_values: kq,
        conditioning_names: Vec::new(),
        conditioning: Vec::new(),
        level: None,
    })
}

/// Density of the outcome at a conditioning row laid out as
/// `[d, controls..., const]`.
pub fn predictive_density(
    grid: &QuantileGridFit,
    conditioning: &[f64],
    level: Option<f64>,
    opts: &DensityOptions,
) -> Result<PredictiveDensity> {
    if let Some(f) = grid.fits.first() {
        if f.coefficients.len() != conditioning.len() {
            return Err(Error::Parameter(format!(
                "conditioning row has {} entries, the fits have {} coefficients",
                conditioning.len(),
                f.coefficients.len()
            )));
        }
    }
    let taus: Vec<f64> = grid.fits.iter().map(|f| f.tau).collect();
    let preds: Vec<f64> = grid.fits.iter().map(|f| f.predict(conditioning)).collect();
    let mut dens = density_from_quantiles(&taus, &preds, opts)?;
    dens.conditioning = conditioning.to_vec();
    dens.conditioning_names = grid.fits.first().map(|f| f.names.clone()).unwrap_or_default();
    dens.level = level;
    Ok(dens)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRiskReport {
    pub group: String,
    pub horizon_months: u32,
    pub tau: f64,
    pub instrument: String,
    pub method: String,
    pub inflation_coefficient: f64,
    pub inflation_se: f64,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub n: usize,
}

impl TailRiskReport {
    pub fn from_record(rec: &FitRecord, group: &str, horizon_months: u32, instrument: &str) -> Self {
        TailRiskReport {
            group: group.to_string(),
            horizon_months,
            tau: rec.tau,
            instrument: instrument.to_string(),
            method: rec.method.clone(),
            inflation_coefficient: rec.alpha(),
            inflation_se: rec.alpha_se(),
            names: rec.names.clone(),
            coefficients: rec.coefficients.clone(),
            standard_errors: rec.standard_errors.clone(),
            n: rec.n,
        }
    }
}

/// Report at `tau` taken from a grid fit.
pub fn tail_risk(grid: &QuantileGridFit, tau: f64, group: &str, horizon_months: u32, instrument: &str) -> Result<TailRiskReport> {
    let rec = grid
        .fit_at(tau)
        .ok_or_else(|| Error::Parameter(format!("no successful fit at tau {tau} in grid for {}", grid.dataset_id)))?;
    Ok(TailRiskReport::from_record(rec, group, horizon_months, instrument))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ContrastMode {
    #[default]
    Independent,
    /// Moving-block bootstrap over shared months; block length defaults to
    /// the horizon.
    BlockBootstrap {
        reps: usize,
        block: Option<usize>,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupContrast {
    pub group_a: String,
    pub group_b: String,
    pub instrument: String,
    pub horizon_months: u32,
    pub tau: f64,
    pub coefficient_gap: f64,
    pub gap_se: f64,
    pub z_score: f64,
    pub mode: String,
}

fn check_comparable(a: &TailRiskReport, b: &TailRiskReport) -> Result<()> {
    if a.instrument != b.instrument || (a.tau - b.tau).abs() > 1e-12 || a.horizon_months != b.horizon_months {
        return Err(Error::Mismatch(format!(
            "cannot contrast {} ({}, tau {}, {}m) with {} ({}, tau {}, {}m)",
            a.group, a.instrument, a.tau, a.horizon_months, b.group, b.instrument, b.tau, b.horizon_months
        )));
    }
    Ok(())
}

fn contrast_with_se(a: &TailRiskReport, b: &TailRiskReport, gap_se: f64, mode: &str) -> GroupContrast {
    let gap = a.inflation_coefficient - b.inflation_coefficient;
    let z_score = if gap == 0.0 { 0.0 } else { gap / gap_se };
    GroupContrast {
        group_a: a.group.clone(),
        group_b: b.group.clone(),
        instrument: a.instrument.clone(),
        horizon_months: a.horizon_months,
        tau: a.tau,
        coefficient_gap: gap,
        gap_se,
        z_score,
        mode: mode.into(),
    }
}

/// Contrast treating the two group regressions as independent.
pub fn group_contrast(a: &TailRiskReport, b: &TailRiskReport) -> Result<GroupContrast> {
    check_comparable(a, b)?;
    let se = (a.inflation_se.powi(2) + b.inflation_se.powi(2)).sqrt();
    Ok(contrast_with_se(a, b, se, "independent"))
}

/// The given rows of `ds`, in the given order.
fn select_rows(ds: &EstimationDataset, rows: &[usize]) -> EstimationDataset {
    let pick_v = |v: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
    let pick_m = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)]);
    EstimationDataset {
        label: ds.label.clone(),
        y: pick_v(&ds.y),
        d: pick_v(&ds.d),
        x: pick_m(&ds.x),
        z: pick_m(&ds.z),
        months: ds.months.as_ref().map(|m| rows.iter().map(|&i| m[i]).collect()),
        endogenous_name: ds.endogenous_name.clone(),
        control_names: ds.control_names.clone(),
        instrument_names: ds.instrument_names.clone(),
        horizon_months: ds.horizon_months,
    }
}

/// Contrast with the gap standard error from a moving-block bootstrap that
/// resamples the months both datasets share, refitting both groups on each
/// draw so cross-group dependence is kept.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_contrast(
    a: &TailRiskReport,
    b: &TailRiskReport,
    ds_a: &EstimationDataset,
    ds_b: &EstimationDataset,
    choice: EstimatorChoice,
    opts: &IvqrOptions,
    mode: ContrastMode,
) -> Result<GroupContrast> {
    check_comparable(a, b)?;
    let ContrastMode::BlockBootstrap { reps, block, seed } = mode else {
        return group_contrast(a, b);
    };
    if reps < 2 {
        return Err(Error::Parameter("bootstrap needs at least 2 replications".into()));
    }
    let (ma, mb) = match (&ds_a.months, &ds_b.months) {
        (Some(ma), Some(mb)) => (ma, mb),
        _ => return Err(Error::Parameter("block bootstrap needs month-indexed datasets".into())),
    };
    let mut ia = Vec::new();
    let mut ib = Vec::new();
    for (i, m) in ma.iter().enumerate() {
        if let Ok(j) = mb.binary_search(m) {
            ia.push(i);
            ib.push(j);
        }
    }
    let t = ia.len();
    let block = block.unwrap_or(a.horizon_months as usize).max(1);
    if t < block + 2 {
        return Err(Error::Parameter(format!("only {t} shared months for blocks of {block}")));
    }
    let tau = a.tau;
    let gaps: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = SimRng::for_stream(seed, r as u64);
            let mut rows = Vec::with_capacity(t);
            while rows.len() < t {
                let start = rng.below(t - block + 1);
                rows.extend((start..start + block).take(t - rows.len()));
            }
            let sa: Vec<usize> = rows.iter().map(|&k| ia[k]).collect();
            let sb: Vec<usize> = rows.iter().map(|&k| ib[k]).collect();
            let fa = record::estimate(&select_rows(ds_a, &sa), tau, choice, opts)?;
            let fb = record::estimate(&select_rows(ds_b, &sb), tau, choice, opts)?;
            Ok(fa.alpha() - fb.alpha())
        })
        .collect();
    let ok: Vec<f64> = gaps.into_iter().filter_map(|g| g.ok()).filter(|g| g.is_finite()).collect();
    if (ok.len() as f64) < 0.8 * reps as f64 {
        return Err(Error::Study {
            failed: reps - ok.len(),
            total: reps,
            first: "bootstrap refits failed".into(),
        });
    }
    Ok(contrast_with_se(a, b, stats::sample_sd(&ok), "block_bootstrap"))
}

/// Columns: `group,horizon_months,tau,instrument,method,inflation_coefficient,inflation_se,n`.
pub fn write_tail_risk_csv<W: Write>(reports: &[TailRiskReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "horizon_months", "tau", "instrument", "method", "inflation_coefficient", "inflation_se", "n"])
        .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.group.clone(),
            r.horizon_months.to_string(),
            fmt(r.tau),
            r.instrument.clone(),
            r.method.clone(),
            fmt(r.inflation_coefficient),
            fmt(r.inflation_se),
            r.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}

pub fn write_contrast_csv<W: Write>(contrasts: &[GroupContrast], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in contrasts {
        w.serialize(c).map_err(csv_err)?;
    }
    if contrasts.is_empty() {
        w.write_record([
            "group_a",
            "group_b",
            "instrument",
            "horizon_months",
            "tau",
            "coefficient_gap",
            "gap_se",
            "z_score",
            "mode",
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}
