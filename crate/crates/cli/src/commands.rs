use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use tailrisk_core::config::{GroupConfig, RunConfig};
use tailrisk_core::data::{self, build_design, conditioning_row};
use tailrisk_core::linear_iv;
use tailrisk_core::mc;
use tailrisk_core::record::{self, EstimatorChoice};
use tailrisk_core::risk::{self, ContrastMode, TailRiskReport};
use tailrisk_core::{EstimationDataset, Month, TimeSeriesPanel};

use crate::run::{verify_manifest_inputs, Outputs, RunContext};
use crate::{Cli, Command, Target};

/// Invalid invocation rather than a failed computation.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| UsageError("no configuration given (use --config or set TAILRISK_CONFIG)".into()))?;
    if !path.exists() {
        return Err(UsageError(format!("configuration {} not found", path.display())).into());
    }
    let mut config = RunConfig::load(path)?;
    verify_manifest_inputs(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }

    let (command, outputs) = match &cli.command {
        Command::Summarize => (vec!["summarize".into()], summarize(&config)?),
        Command::Estimate { target, tau, method } => {
            let (t, g, h, i) = resolve(&config, target)?;
            let tau = tau.unwrap_or(config.estimator.tail_tau);
            let method = method.unwrap_or(config.estimator.method);
            let cmd = with_target("estimate", &g, h, &i, &[("tau", tau.to_string()), ("method", method.label().into())]);
            (cmd, estimate(&config, &t, tau, method)?)
        }
        Command::Grid { target, method } => {
            let (t, g, h, i) = resolve(&config, target)?;
            let method = method.unwrap_or(config.estimator.method);
            let cmd = with_target("grid", &g, h, &i, &[("method", method.label().into())]);
            (cmd, grid(&config, &t, method)?)
        }
        Command::Density { target, method, date } => {
            let (t, g, h, i) = resolve(&config, target)?;
            let method = method.unwrap_or(config.estimator.method);
            let date = date.or(config.density.conditioning_date);
            let mut extra = vec![("method", method.label().to_string())];
            if let Some(d) = date {
                extra.push(("date", d.to_string()));
            }
            let cmd = with_target("density", &g, h, &i, &extra);
            (cmd, density(&config, &t, method, date)?)
        }
        Command::Tailrisk { method } => {
            let method = method.unwrap_or(config.estimator.method);
            let cmd = vec!["tailrisk".into(), "--method".into(), method.label().into()];
            (cmd, tailrisk(&config, method)?)
        }
        Command::Mc { reps, estimator } => {
            let mut mc_cfg = config.mc.clone();
            if let Some(r) = reps {
                mc_cfg.reps = *r;
            }
            if let Some(e) = estimator {
                mc_cfg.estimator = *e;
            }
            let cmd = vec![
                "mc".into(),
                "--reps".into(),
                mc_cfg.reps.to_string(),
                "--estimator".into(),
                mc_cfg.estimator.label().into(),
            ];
            (cmd, monte_carlo(&config, &mc_cfg)?)
        }
        Command::Diagnostics { target } => {
            let (t, g, h, i) = resolve(&config, target)?;
            (with_target("diagnostics", &g, h, &i, &[]), diagnostics(&config, &t)?)
        }
    };

    let out_root = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    RunContext {
        config: &config,
        command,
        out_root,
        timestamped: !cli.no_timestamp,
    }
    .finish(outputs)
}

fn with_target(verb: &str, group: &str, horizon: usize, instrument: &str, extra: &[(&str, String)]) -> Vec<String> {
    let mut v = vec![
        verb.to_string(),
        "--group".into(),
        group.into(),
        "--horizon".into(),
        horizon.to_string(),
        "--instrument".into(),
        instrument.into(),
    ];
    for (k, val) in extra {
        v.push(format!("--{k}"));
        v.push(val.clone());
    }
    v
}

/// Resolved dataset target.
struct Resolved {
    panel: TimeSeriesPanel,
    group: GroupConfig,
    spec: tailrisk_core::DatasetSpec,
    dataset: EstimationDataset,
}

fn load_panel(config: &RunConfig) -> Result<TimeSeriesPanel> {
    let panel = config.load_panel()?;
    config.validate_against(&panel)?;
    Ok(panel)
}

fn resolve(config: &RunConfig, target: &Target) -> Result<(Resolved, String, usize, String)> {
    let group = match &target.group {
        Some(name) => config.group(name)?.clone(),
        None => config
            .groups
            .first()
            .cloned()
            .ok_or_else(|| UsageError("configuration defines no groups".into()))?,
    };
    let horizon = target.horizon.unwrap_or(group.horizons[0]);
    let instrument = match &target.instrument {
        Some(i) => i.clone(),
        None => group.instruments.keys().next().cloned().expect("validated non-empty"),
    };
    let spec = group.dataset_spec(horizon, &instrument)?;
    let panel = load_panel(config)?;
    let dataset = build_design(&panel, &spec).with_context(|| format!("building dataset {}", spec.label))?;
    let name = group.name.clone();
    Ok((
        Resolved {
            panel,
            group,
            spec,
            dataset,
        },
        name,
        horizon,
        instrument,
    ))
}

fn summarize(config: &RunConfig) -> Result<Outputs> {
    let panel = config.load_panel()?;
    let rows = data::summarize(&panel);
    let mut out = Outputs::default();
    out.add_with("summary.csv", |w| data::write_summary_csv(&rows, w))?;
    Ok(out)
}

fn estimate(config: &RunConfig, t: &Resolved, tau: f64, method: EstimatorChoice) -> Result<Outputs> {
    let opts = config.estimator.ivqr_options(t.spec.horizon_months);
    let rec = record::estimate(&t.dataset, tau, method, &opts)?;
    eprintln!(
        "{} tau {}: {} = {:.4} (se {:.4}), method {}",
        t.spec.label,
        tau,
        rec.names[0],
        rec.alpha(),
        rec.alpha_se(),
        rec.method
    );
    let mut out = Outputs::default();
    out.add_json("fit.json", &rec)?;
    Ok(out)
}

#[derive(Serialize)]
struct LinearSummary {
    alpha: f64,
    alpha_se: f64,
    first_stage_f: f64,
    warning: Option<String>,
    n: usize,
}

fn grid(config: &RunConfig, t: &Resolved, method: EstimatorChoice) -> Result<Outputs> {
    let h = t.spec.horizon_months;
    let opts = config.estimator.ivqr_options(h);
    let g = risk::fit_quantile_grid(&t.dataset, &config.estimator.taus, method, &opts)?;
    let lin = linear_iv::fit_2sls_with(&t.dataset, &config.estimator.linear_iv_options(h))?;
    let mut out = Outputs::default();
    out.add_with("coefficients.csv", |w| g.write_coefficients_csv(w))?;
    out.add_json("grid.json", &g)?;
    out.add_json(
        "linear_iv.json",
        &LinearSummary {
            alpha: lin.alpha,
            alpha_se: lin.alpha_se(),
            first_stage_f: lin.first_stage.f_statistic,
            warning: lin.warning.clone(),
            n: t.dataset.n(),
        },
    )?;
    Ok(out)
}

/// Latest month at which the endogenous regressor and all controls are
/// observed.
fn last_conditioning_month(t: &Resolved) -> Result<Month> {
    let dates = t.panel.dates();
    for &m in dates.iter().rev() {
        if conditioning_row(&t.panel, &t.spec, m).is_ok() {
            return Ok(m);
        }
    }
    anyhow::bail!("no month has every regressor of {} observed", t.spec.label)
}

#[derive(Serialize)]
struct DensityMeta<'a> {
    group: &'a str,
    horizon_months: usize,
    conditioning_month: Month,
    conditioning_names: &'a [String],
    conditioning: &'a [f64],
    level_series: &'a str,
    level: Option<f64>,
    failed_taus: Vec<f64>,
    integral: f64,
}

fn density(config: &RunConfig, t: &Resolved, method: EstimatorChoice, date: Option<Month>) -> Result<Outputs> {
    let opts = config.estimator.ivqr_options(t.spec.horizon_months);
    let month = match date {
        Some(m) => m,
        None => last_conditioning_month(t)?,
    };
    let row = conditioning_row(&t.panel, &t.spec, month)?;
    let level_name = t.group.level_series.as_deref().unwrap_or(&t.group.dependent);
    let level = t.panel.series(level_name)?.get(month);
    let g = risk::fit_quantile_grid(&t.dataset, &config.estimator.taus, method, &opts)?;
    let dens = risk::predictive_density(&g, &row, level, &config.density.options())?;
    let mut out = Outputs::default();
    out.add_with("density.csv", |w| dens.write_density_csv(w))?;
    out.add_with("quantiles.csv", |w| dens.write_quantile_csv(w))?;
    out.add_json(
        "density.json",
        &DensityMeta {
            group: &t.group.name,
            horizon_months: t.spec.horizon_months,
            conditioning_month: month,
            conditioning_names: &dens.conditioning_names,
            conditioning: &dens.conditioning,
            level_series: level_name,
            level,
            failed_taus: g.failures.iter().map(|f| f.0).collect(),
            integral: dens.integral(),
        },
    )?;
    Ok(out)
}

struct TailJob {
    group: GroupConfig,
    horizon: usize,
    instrument: String,
}

struct TailOutcome {
    report: TailRiskReport,
    dataset: EstimationDataset,
    fitted: Vec<u8>,
}

/// In-sample fitted tail quantile at each estimation month.
fn fitted_series(ds: &EstimationDataset, rec: &record::FitRecord) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["month", "fitted_in_sample", "realized_change"])?;
    let x = ds.regressors();
    let months = ds.months.clone().unwrap_or_default();
    for i in 0..ds.n() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let label = months.get(i).map(|m| m.to_string()).unwrap_or_else(|| i.to_string());
        w.write_record([label, rec.predict(&row).to_string(), ds.y[i].to_string()])?;
    }
    Ok(w.into_inner()?)
}

fn tailrisk(config: &RunConfig, method: EstimatorChoice) -> Result<Outputs> {
    if config.groups.is_empty() {
        return Err(UsageError("configuration defines no groups".into()).into());
    }
    let panel = load_panel(config)?;
    let tau = config.estimator.tail_tau;
    let mut jobs = Vec::new();
    for g in &config.groups {
        for &h in &g.horizons {
            for i in g.instruments.keys() {
                jobs.push(TailJob {
                    group: g.clone(),
                    horizon: h,
                    instrument: i.clone(),
                });
            }
        }
    }
    let outcomes: Vec<TailOutcome> = jobs
        .par_iter()
        .map(|j| -> Result<TailOutcome> {
            let spec = j.group.dataset_spec(j.horizon, &j.instrument)?;
            let ds = build_design(&panel, &spec).with_context(|| format!("building dataset {}", spec.label))?;
            let opts = config.estimator.ivqr_options(j.horizon);
            let rec = record::estimate(&ds, tau, method, &opts).with_context(|| format!("estimating {}", spec.label))?;
            let fitted = fitted_series(&ds, &rec)?;
            let report = TailRiskReport::from_record(&rec, &j.group.name, j.horizon as u32, &j.instrument);
            Ok(TailOutcome {
                report,
                dataset: ds,
                fitted,
            })
        })
        .collect::<Result<_>>()?;

    let mut contrasts = Vec::new();
    for a in 0..jobs.len() {
        for b in a + 1..jobs.len() {
            let (ja, jb) = (&jobs[a], &jobs[b]);
            if ja.group.category != jb.group.category
                || ja.group.name == jb.group.name
                || ja.horizon != jb.horizon
                || ja.instrument != jb.instrument
            {
                continue;
            }
            let (oa, ob) = (&outcomes[a], &outcomes[b]);
            let mode = config.contrast.mode(config.seed);
            let c = match mode {
                ContrastMode::Independent => risk::group_contrast(&oa.report, &ob.report)?,
                ContrastMode::BlockBootstrap { .. } => risk::bootstrap_contrast(
                    &oa.report,
                    &ob.report,
                    &oa.dataset,
                    &ob.dataset,
                    method,
                    &config.estimator.ivqr_options(ja.horizon),
                    mode,
                )?,
            };
            contrasts.push(c);
        }
    }

    let reports: Vec<TailRiskReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let mut out = Outputs::default();
    out.add_with("tailrisk.csv", |w| risk::write_tail_risk_csv(&reports, w))?;
    out.add_with("contrasts.csv", |w| risk::write_contrast_csv(&contrasts, w))?;
    out.add_json("tailrisk.json", &reports)?;
    for (j, o) in jobs.iter().zip(&outcomes) {
        out.add(format!("fitted_{}_h{}_{}.csv", j.group.name, j.horizon, j.instrument), o.fitted.clone());
    }
    Ok(out)
}

fn monte_carlo(config: &RunConfig, mc_cfg: &tailrisk_core::config::McConfig) -> Result<Outputs> {
    let spec = mc_cfg.dgp(config.seed);
    let opts = config.estimator.ivqr_options(1);
    let result = mc::run_study(&spec, &mc_cfg.taus, mc_cfg.reps, mc_cfg.estimator, &opts)?;
    let mut out = Outputs::default();
    out.add_with("mc.csv", |w| result.write_csv(w))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rep", "tau", "error"])?;
    for (r, t, e) in &result.failure_log {
        w.write_record([r.to_string(), t.to_string(), e.clone()])?;
    }
    out.add("mc_failures.csv", w.into_inner()?);
    Ok(out)
}

#[derive(Serialize)]
struct DiagnosticsRecord {
    dataset: String,
    n: usize,
    alpha: f64,
    alpha_se: f64,
    first_stage_f: f64,
    warning: Option<String>,
    skewness: f64,
    excess_kurtosis: f64,
}

fn diagnostics(config: &RunConfig, t: &Resolved) -> Result<Outputs> {
    let lin = linear_iv::fit_2sls_with(&t.dataset, &config.estimator.linear_iv_options(t.spec.horizon_months))?;
    let resid: Vec<f64> = lin.residuals.iter().copied().collect();
    let moments = linear_iv::residual_moments(&resid)?;
    let qq = linear_iv::qq_data(&resid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["normal_quantile", "standardized_residual"])?;
    for (a, b) in &qq {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    let mut out = Outputs::default();
    out.add("qq.csv", w.into_inner()?);
    out.add_json(
        "moments.json",
        &DiagnosticsRecord {
            dataset: t.spec.label.clone(),
            n: moments.n,
            alpha: lin.alpha,
            alpha_se: lin.alpha_se(),
            first_stage_f: lin.first_stage.f_statistic,
            warning: lin.warning,
            skewness: moments.skewness,
            excess_kurtosis: moments.excess_kurtosis,
        },
    )?;
    Ok(out)
}
