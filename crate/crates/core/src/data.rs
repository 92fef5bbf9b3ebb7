//! Monthly time-series ingestion and construction of aligned estimation
//! datasets.
//!
//! A [`TimeSeriesPanel`] holds every input series on one contiguous monthly
//! calendar. Missing observations are `None`, never zero. Datasets are built
//! by listwise deletion: a month enters the sample only when the horizon
//! change of the dependent series, the endogenous regressor, every control
//! and every instrument are all present.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stats;

/// Calendar month, stored as `year * 12 + (month - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month(i32);

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Input(format!("month {month} out of range")));
        }
        Ok(Month(year * 12 + month as i32 - 1))
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn offset(self, months: i64) -> Month {
        Month(self.0 + months as i32)
    }

    /// Signed number of months from `other` to `self`.
    pub fn since(self, other: Month) -> i64 {
        i64::from(self.0 - other.0)
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = Error;

    /// Accepts `YYYY-MM`, `YYYY-MM-DD` (day ignored), `YYYY/MM[/DD]` and
    /// `YYYYMm`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Input(format!("unparseable date '{s}'"));
        let (y, m) = if let Some((y, m)) = s.split_once(['M', 'm']) {
            (y, m)
        } else {
            let mut parts = s.split(['-', '/']);
            let y = parts.next().ok_or_else(bad)?;
            let m = parts.next().ok_or_else(bad)?;
            if let Some(d) = parts.next() {
                d.trim().parse::<u32>().map_err(|_| bad())?;
            }
            if parts.next().is_some() {
                return Err(bad());
            }
            (y, m)
        };
        let year: i32 = y.trim().parse().map_err(|_| bad())?;
        let month: u32 = m.trim().parse().map_err(|_| bad())?;
        if y.trim().len() != 4 {
            return Err(bad());
        }
        Month::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A monthly series anchored at `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub start: Month,
    pub values: Vec<Option<f64>>,
}

impl Series {
    pub fn new(start: Month, values: Vec<Option<f64>>) -> Self {
        Series { start, values }
    }

    pub fn from_values(start: Month, values: &[f64]) -> Self {
        Series::new(start, values.iter().copied().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, month: Month) -> Option<f64> {
        let k = month.since(self.start);
        if k < 0 {
            return None;
        }
        self.values.get(k as usize).copied().flatten()
    }

    pub fn month_at(&self, index: usize) -> Month {
        self.start.offset(index as i64)
    }

    pub fn observed(&self) -> impl Iterator<Item = (Month, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (self.month_at(i), v)))
    }
}

/// Output at month `t` is `value(t + h) - value(t)`; missing when either
/// endpoint is missing, so the last `h` months are always missing.
pub fn diff_horizon(series: &Series, h: usize) -> Result<Series> {
    if h == 0 {
        return Err(Error::Parameter("horizon must be at least one month".into()));
    }
    let n = series.len();
    let values = (0..n)
        .map(|i| match (series.values[i], series.values.get(i + h).copied().flatten()) {
            (Some(now), Some(later)) => Some(later - now),
            _ => None,
        })
        .collect();
    Ok(Series::new(series.start, values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YoyMode {
    /// `v_t - v_{t-12}`, for series already expressed as rates.
    RateDifference,
    /// `100 (v_t / v_{t-12} - 1)`, for index levels.
    PercentChange,
}

pub fn yoy_change(series: &Series, mode: YoyMode) -> Result<Series> {
    let n = series.len();
    let mut values = vec![None; n];
    for i in 12..n {
        let (Some(now), Some(then)) = (series.values[i], series.values[i - 12]) else {
            continue;
        };
        values[i] = Some(match mode {
            YoyMode::RateDifference => now - then,
            YoyMode::PercentChange => {
                for (v, k) in [(then, i - 12), (now, i)] {
                    if v <= 0.0 {
                        return Err(Error::Input(format!(
                            "nonpositive index level {v} at {} in percent-change mode",
                            series.month_at(k)
                        )));
                    }
                }
                100.0 * (now / then - 1.0)
            }
        });
    }
    Ok(Series::new(series.start, values))
}

/// Named monthly series on a shared contiguous calendar.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesPanel {
    start: Month,
    len: usize,
    names: Vec<String>,
    series: BTreeMap<String, Vec<Option<f64>>>,
}

impl TimeSeriesPanel {
    pub fn new(start: Month, len: usize) -> Self {
        TimeSeriesPanel {
            start,
            len,
            names: Vec::new(),
            series: BTreeMap::new(),
        }
    }

    pub fn start(&self) -> Month {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dates(&self) -> Vec<Month> {
        (0..self.len).map(|i| self.start.offset(i as i64)).collect()
    }

    /// Series names in insertion (CSV column) order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn series(&self, name: &str) -> Result<Series> {
        self.series
            .get(name)
            .map(|v| Series::new(self.start, v.clone()))
            .ok_or_else(|| Error::Input(format!("series '{name}' not found in panel")))
    }

    /// Inserts or replaces a series, realigning it to the panel calendar.
    /// Values falling outside the calendar are dropped.
    pub fn insert(&mut self, name: &str, series: &Series) {
        let values = (0..self.len)
            .map(|i| series.get(self.start.offset(i as i64)))
            .collect();
        if !self.series.contains_key(name) {
            self.names.push(name.to_string());
        }
        self.series.insert(name.to_string(), values);
    }
}

fn parse_cell(raw: &str) -> std::result::Result<Option<f64>, ()> {
    let s = raw.trim();
    if s.is_empty() || s == "." || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| ())
}

/// Reads a CSV whose `date_column` holds months and whose remaining columns
/// are numeric series. Blank, `.`, `NA` and `NaN` cells are missing values.
pub fn load_csv(path: impl AsRef<Path>, date_column: &str) -> Result<TimeSeriesPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_csv(file, date_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, date_column: &str) -> Result<TimeSeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input(format!("cannot read CSV header: {e}")))?
        .clone();
    let date_idx = headers
        .iter()
        .position(|h| h == date_column)
        .ok_or_else(|| Error::Input(format!("date column '{date_column}' not in header")))?;
    let names: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != date_idx)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut rows: BTreeMap<Month, Vec<Option<f64>>> = BTreeMap::new();
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::Input(format!("row {line}: {e}")))?;
        let raw_date = record.get(date_idx).unwrap_or("");
        let month: Month = raw_date
            .parse()
            .map_err(|_| Error::Input(format!("row {line}: unparseable date '{raw_date}'")))?;
        let mut values = Vec::with_capacity(names.len());
        for (i, name) in &names {
            let cell = record.get(*i).unwrap_or("");
            let v = parse_cell(cell).map_err(|_| {
                Error::Input(format!("row {line}: non-numeric value '{cell}' in column '{name}'"))
            })?;
            values.push(v);
        }
        if rows.insert(month, values).is_some() {
            return Err(Error::Input(format!("row {line}: duplicate month {month}")));
        }
    }

    let (Some(first), Some(last)) = (rows.keys().next().copied(), rows.keys().next_back().copied())
    else {
        return Err(Error::Input("CSV has no data rows".into()));
    };
    let len = (last.since(first) + 1) as usize;
    let mut panel = TimeSeriesPanel::new(first, len);
    for (j, (_, name)) in names.iter().enumerate() {
        let mut values = vec![None; len];
        for (m, row) in &rows {
            values[m.since(first) as usize] = row[j];
        }
        panel.insert(name, &Series::new(first, values));
    }
    Ok(panel)
}

/// Which series make up one estimation problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub label: String,
    pub dependent: String,
    pub horizon_months: usize,
    pub endogenous: String,
    pub controls: Vec<String>,
    pub instruments: Vec<String>,
    pub sample_start: Option<Month>,
    pub sample_end: Option<Month>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_months == 0 {
            return Err(Error::Parameter("horizon_months must be at least 1".into()));
        }
        if self.instruments.is_empty() {
            return Err(Error::Parameter(format!(
                "dataset '{}' needs at least one instrument",
                self.label
            )));
        }
        if let (Some(a), Some(b)) = (self.sample_start, self.sample_end) {
            if a > b {
                return Err(Error::Parameter(format!("sample_start {a} after sample_end {b}")));
            }
        }
        Ok(())
    }
}

pub const INTERCEPT: &str = "const";

/// Aligned arrays for one group and horizon. Controls carry the intercept
/// as their last column.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationDataset {
    pub label: String,
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub months: Option<Vec<Month>>,
    pub endogenous_name: String,
    pub control_names: Vec<String>,
    pub instrument_names: Vec<String>,
    pub horizon_months: usize,
}

impl EstimationDataset {
    /// Builds a dataset from raw arrays, appending the intercept to `controls`.
    pub fn from_arrays(
        label: &str,
        y: DVector<f64>,
        d: DVector<f64>,
        controls: DMatrix<f64>,
        z: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if d.len() != n || controls.nrows() != n || z.nrows() != n {
            return Err(Error::Input("dataset arrays disagree on row count".into()));
        }
        let x = controls.clone().insert_column(controls.ncols(), 1.0);
        let control_names = (0..controls.ncols())
            .map(|j| format!("x{j}"))
            .chain(std::iter::once(INTERCEPT.to_string()))
            .collect();
        let instrument_names = (0..z.ncols()).map(|j| format!("z{j}")).collect();
        let ds = EstimationDataset {
            label: label.to_string(),
            y,
            d,
            x,
            z,
            months: None,
            endogenous_name: "d".into(),
            control_names,
            instrument_names,
            horizon_months: 1,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn p_d(&self) -> usize {
        1
    }

    pub fn p_z(&self) -> usize {
        self.z.ncols()
    }

    /// `[d, X]`, the regressor layout of every fit record.
    pub fn regressors(&self) -> DMatrix<f64> {
        let mut r = self.x.clone().insert_column(0, 0.0);
        r.set_column(0, &self.d);
        r
    }

    pub fn regressor_names(&self) -> Vec<String> {
        std::iter::once(self.endogenous_name.clone())
            .chain(self.control_names.iter().cloned())
            .collect()
    }

    /// Replaces the instrument matrix, e.g. for `Z = d` reductions.
    pub fn with_instruments(&self, z: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let mut out = self.clone();
        out.z = z;
        out.instrument_names = names;
        out.check()?;
        Ok(out)
    }

    /// Multiplies the outcome by `c`.
    pub fn scale_outcome(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.y *= c;
        out
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        let all_finite = self.y.iter().chain(self.d.iter()).chain(self.x.iter()).chain(self.z.iter());
        if all_finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        let ones = (0..self.p_x())
            .filter(|&j| self.x.column(j).iter().all(|&v| v == 1.0))
            .count();
        if ones != 1 {
            return Err(Error::Input(format!(
                "expected exactly one intercept column, found {ones}"
            )));
        }
        let need = self.p_x() + self.p_d() + 2;
        if n < need {
            return Err(Error::Underdetermined { rows: n, columns: need });
        }
        Ok(())
    }
}

/// Builds the dataset for `spec` by intersecting availability of every
/// referenced series inside the sample window.
pub fn build_design(panel: &TimeSeriesPanel, spec: &DatasetSpec) -> Result<EstimationDataset> {
    spec.validate()?;
    let y = diff_horizon(&panel.series(&spec.dependent)?, spec.horizon_months)?;
    let d = panel.series(&spec.endogenous)?;
    let controls = spec
        .controls
        .iter()
        .map(|n| panel.series(n))
        .collect::<Result<Vec<_>>>()?;
    let instruments = spec
        .instruments
        .iter()
        .map(|n| panel.series(n))
        .collect::<Result<Vec<_>>>()?;

    let mut months = Vec::new();
    let mut rows: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for month in panel.dates() {
        if spec.sample_start.is_some_and(|s| month < s) || spec.sample_end.is_some_and(|e| month > e) {
            continue;
        }
        let (Some(yv), Some(dv)) = (y.get(month), d.get(month)) else {
            continue;
        };
        let xs: Option<Vec<f64>> = controls.iter().map(|s| s.get(month)).collect();
        let zs: Option<Vec<f64>> = instruments.iter().map(|s| s.get(month)).collect();
        if let (Some(xs), Some(zs)) = (xs, zs) {
            months.push(month);
            rows.push((yv, dv, xs, zs));
        }
    }

    if rows.is_empty() {
        let mut report = vec![format!("{} (h={}) horizon change: {}", spec.dependent, spec.horizon_months, availability(&y))];
        report.push(format!("{}: {}", spec.endogenous, availability(&d)));
        for (name, s) in spec.controls.iter().zip(&controls).chain(spec.instruments.iter().zip(&instruments)) {
            report.push(format!("{name}: {}", availability(s)));
        }
        return Err(Error::EmptyDataset(format!("{}; availability: {}", spec.label, report.join("; "))));
    }

    let n = rows.len();
    let p_c = spec.controls.len();
    let mut x = DMatrix::from_element(n, p_c + 1, 1.0);
    let mut z = DMatrix::zeros(n, spec.instruments.len());
    let mut yv = DVector::zeros(n);
    let mut dv = DVector::zeros(n);
    for (i, (yi, di, xs, zs)) in rows.into_iter().enumerate() {
        yv[i] = yi;
        dv[i] = di;
        for (j, v) in xs.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        for (j, v) in zs.into_iter().enumerate() {
            z[(i, j)] = v;
        }
    }
    let ds = EstimationDataset {
        label: spec.label.clone(),
        y: yv,
        d: dv,
        x,
        z,
        months: Some(months),
        endogenous_name: spec.endogenous.clone(),
        control_names: spec
            .controls
            .iter()
            .cloned()
            .chain(std::iter::once(INTERCEPT.to_string()))
            .collect(),
        instrument_names: spec.instruments.clone(),
        horizon_months: spec.horizon_months,
    };
    ds.check()?;
    Ok(ds)
}

fn availability(s: &Series) -> String {
    let mut obs = s.observed();
    match obs.next() {
        None => "no observations".into(),
        Some((first, _)) => {
            let last = s.observed().last().map(|(m, _)| m).unwrap_or(first);
            format!("{first}..{last}")
        }
    }
}

/// Values of `[d, X]` (with intercept) at `month`, for conditioning a
/// predictive density. The outcome need not be observed.
pub fn conditioning_row(panel: &TimeSeriesPanel, spec: &DatasetSpec, month: Month) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(spec.controls.len() + 2);
    for name in std::iter::once(&spec.endogenous).chain(&spec.controls) {
        let v = panel
            .series(name)?
            .get(month)
            .ok_or_else(|| Error::Input(format!("series '{name}' missing at {month}")))?;
        row.push(v);
    }
    row.push(1.0);
    Ok(row)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub name: String,
    pub first: Option<Month>,
    pub last: Option<Month>,
    pub obs: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl SeriesSummary {
    pub fn is_empty(&self) -> bool {
        self.obs == 0
    }
}

pub fn summarize_series(name: &str, series: &Series) -> SeriesSummary {
    let obs: Vec<(Month, f64)> = series.observed().collect();
    let values: Vec<f64> = obs.iter().map(|(_, v)| *v).collect();
    let nonempty = !values.is_empty();
    SeriesSummary {
        name: name.to_string(),
        first: obs.first().map(|(m, _)| *m),
        last: obs.last().map(|(m, _)| *m),
        obs: values.len(),
        mean: nonempty.then(|| stats::mean(&values)),
        sd: (values.len() >= 2).then(|| stats::sample_sd(&values)),
        min: values.iter().copied().reduce(f64::min),
        max: values.iter().copied().reduce(f64::max),
    }
}

/// Per-series descriptive statistics over non-missing entries, in panel
/// column order.
pub fn summarize(panel: &TimeSeriesPanel) -> Vec<SeriesSummary> {
    panel
        .names()
        .iter()
        .map(|name| {
            let s = panel.series(name).expect("name from panel");
            summarize_series(name, &s)
        })
        .collect()
}

/// Columns: `series,first,last,obs,mean,sd,min,max,empty`; statistics of
/// an all-missing series are blank and `empty` is `true`.
pub fn write_summary_csv<W: std::io::Write>(rows: &[SeriesSummary], out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let werr = |e: csv::Error| Error::Input(format!("CSV write failed: {e}"));
    w.write_record(["series", "first", "last", "obs", "mean", "sd", "min", "max", "empty"])
        .map_err(werr)?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.first.map(|m| m.to_string()).unwrap_or_default(),
            r.last.map(|m| m.to_string()).unwrap_or_default(),
            r.obs.to_string(),
            opt(r.mean),
            opt(r.sd),
            opt(r.min),
            opt(r.max),
            r.is_empty().to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}
