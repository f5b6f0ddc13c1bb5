//! Time-series containers, the fixed-scheme sample split, lag feature
//! construction and CSV ingestion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transform applied to raw prices at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `y_t = p_t - p_{t-1}`.
    #[default]
    Increments,
    /// `y_t = ln(p_t / p_{t-1})`.
    LogReturns,
    None,
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increments" => Ok(Transform::Increments),
            "log_returns" | "log-returns" => Ok(Transform::LogReturns),
            "none" => Ok(Transform::None),
            other => Err(Error::Config(format!("unknown transform '{other}'"))),
        }
    }
}

/// An ordered, strictly indexed univariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: Vec<f64>,
    name: String,
    frequency: String,
    transform: Transform,
    dates: Option<Vec<String>>,
}

impl Series {
    /// Builds a series, rejecting fewer than two values or non-finite entries.
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self {
            values,
            name: name.into(),
            frequency: String::new(),
            transform: Transform::None,
            dates: None,
        })
    }

    pub fn with_frequency(mut self, frequency: impl Into<String>) -> Self {
        self.frequency = frequency.into();
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frequency(&self) -> &str {
        &self.frequency
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn dates(&self) -> Option<&[String]> {
        self.dates.as_deref()
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }
}

/// How to size the in-sample window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// Out-of-sample to in-sample ratio π = P/R.
    Ratio(f64),
    /// Explicit in-sample size R.
    InSample(usize),
}

/// The fixed-scheme partition: estimation on `0..r`, evaluation on `r..r+p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    r: usize,
    p: usize,
    pi: f64,
}

impl SplitPlan {
    /// Split a sample of size `t` by ratio: `R = round(T/(1+π))`, ties down.
    pub fn from_ratio(t: usize, pi: f64) -> Result<Self> {
        if !(pi.is_finite() && pi > 0.0) {
            return Err(Error::InvalidSplit(format!("pi must be in (0, inf), got {pi}")));
        }
        let x = t as f64 / (1.0 + pi);
        let r = (x - 0.5).ceil().max(0.0) as usize;
        Self::from_in_sample(t, r)
    }

    pub fn from_in_sample(t: usize, r: usize) -> Result<Self> {
        if r < 1 || r >= t {
            return Err(Error::InvalidSplit(format!(
                "in-sample size R={r} must satisfy 1 <= R < T={t}"
            )));
        }
        let p = t - r;
        if p < 2 {
            return Err(Error::InvalidSplit(format!(
                "out-of-sample size P={p} is below 2"
            )));
        }
        Ok(Self {
            r,
            p,
            pi: p as f64 / r as f64,
        })
    }

    pub fn in_sample(&self) -> usize {
        self.r
    }

    pub fn out_of_sample(&self) -> usize {
        self.p
    }

    pub fn total(&self) -> usize {
        self.r + self.p
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }
}

/// Split a series under the fixed forecasting scheme.
pub fn split(series: &Series, rule: SplitRule) -> Result<SplitPlan> {
    match rule {
        SplitRule::Ratio(pi) => SplitPlan::from_ratio(series.len(), pi),
        SplitRule::InSample(r) => SplitPlan::from_in_sample(series.len(), r),
    }
}

/// Regressors paired with their targets.
///
/// Row `i` holds the predictors for the target observed at time
/// `origin + i`; for lag designs every entry of that row is dated strictly
/// before the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: DMatrix<f64>,
    target: DVector<f64>,
    column_names: Vec<String>,
    has_intercept: bool,
    origin: usize,
}

impl DesignMatrix {
    pub fn new(
        rows: DMatrix<f64>,
        target: DVector<f64>,
        column_names: Vec<String>,
        has_intercept: bool,
        origin: usize,
    ) -> Result<Self> {
        if rows.nrows() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.nrows(),
                got: target.len(),
            });
        }
        if column_names.len() != rows.ncols() {
            return Err(Error::DimensionMismatch {
                expected: rows.ncols(),
                got: column_names.len(),
            });
        }
        if rows.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries("design contains non-finite entries".into()));
        }
        Ok(Self {
            rows,
            target,
            column_names,
            has_intercept,
            origin,
        })
    }

    /// A design with generic column names `x1..xp` and no intercept.
    pub fn from_parts(rows: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        let names = (1..=rows.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(rows, target, names, false, 0)
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// When true, column 0 is the constant regressor.
    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    /// Time index of the target in row 0.
    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).iter().copied().collect()
    }

    /// Number of rows whose target falls inside the estimation window.
    pub fn train_rows(&self, plan: &SplitPlan) -> Result<usize> {
        if self.origin + self.n_rows() != plan.total() {
            return Err(Error::DimensionMismatch {
                expected: plan.total(),
                got: self.origin + self.n_rows(),
            });
        }
        if plan.in_sample() <= self.origin {
            return Err(Error::InvalidSplit(format!(
                "in-sample size {} leaves no training rows after {} lags",
                plan.in_sample(),
                self.origin
            )));
        }
        Ok(plan.in_sample() - self.origin)
    }

    /// Training rows (targets dated `< R`) and evaluation rows (targets `>= R`).
    pub fn split(&self, plan: &SplitPlan) -> Result<(DesignMatrix, DesignMatrix)> {
        let n_train = self.train_rows(plan)?;
        Ok((self.slice_rows(0, n_train), self.slice_rows(n_train, self.n_rows())))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> DesignMatrix {
        DesignMatrix {
            rows: self.rows.rows(start, end - start).into_owned(),
            target: self.target.rows(start, end - start).into_owned(),
            column_names: self.column_names.clone(),
            has_intercept: self.has_intercept,
            origin: self.origin + start,
        }
    }

    /// Standardize non-intercept columns with the mean and standard
    /// deviation of the first `n_train` rows, applied to every row.
    /// Constant training columns are centered but left unscaled.
    pub fn standardized(&self, n_train: usize) -> Result<DesignMatrix> {
        if n_train < 2 || n_train > self.n_rows() {
            return Err(Error::InsufficientData {
                needed: 2,
                got: n_train,
            });
        }
        let mut rows = self.rows.clone();
        let first = usize::from(self.has_intercept);
        for j in first..rows.ncols() {
            let train = rows.view((0, j), (n_train, 1));
            let mean = train.mean();
            let var = train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_train as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            rows.column_mut(j).apply(|v| *v = (*v - mean) / sd);
        }
        Ok(DesignMatrix {
            rows,
            ..self.clone()
        })
    }
}

/// Lag feature set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub lags: usize,
    pub interactions: bool,
    pub power_degrees: Vec<u32>,
}

impl FeatureConfig {
    /// 30 lags, pairwise interactions, and powers 2 to 4.
    pub fn mdh_default() -> Self {
        Self {
            lags: 30,
            interactions: true,
            power_degrees: vec![2, 3, 4],
        }
    }

    pub fn lags_only(lags: usize) -> Self {
        Self {
            lags,
            interactions: false,
            power_degrees: Vec::new(),
        }
    }

    /// `1 + L + C(L,2)·[interactions] + |powers|·L`.
    pub fn column_count(&self) -> usize {
        let l = self.lags;
        let pairs = if self.interactions { l * l.saturating_sub(1) / 2 } else { 0 };
        1 + l + pairs + self.normalized_powers().len() * l
    }

    fn normalized_powers(&self) -> Vec<u32> {
        let mut p = self.power_degrees.clone();
        p.sort_unstable();
        p.dedup();
        p
    }
}

/// Build intercept, lags, unordered lag pairs and lag powers.
///
/// Row `i` pairs the target `y[L + i]` with `y[L+i-1], …, y[i]`.
pub fn build_features(series: &Series, config: &FeatureConfig) -> Result<DesignMatrix> {
    let l = config.lags;
    if l < 1 {
        return Err(Error::Config("lags must be at least 1".into()));
    }
    let powers = config.normalized_powers();
    if let Some(d) = powers.iter().find(|d| !(2..=4).contains(*d)) {
        return Err(Error::Config(format!("power degree {d} outside {{2,3,4}}")));
    }
    let y = series.values();
    if y.len() < l + 2 {
        return Err(Error::InsufficientData {
            needed: l + 2,
            got: y.len(),
        });
    }
    let n = y.len() - l;

    let mut names = vec!["const".to_string()];
    names.extend((1..=l).map(|k| format!("y_lag{k}")));
    if config.interactions {
        for a in 1..=l {
            for b in a + 1..=l {
                names.push(format!("y_lag{a}*y_lag{b}"));
            }
        }
    }
    for &d in &powers {
        names.extend((1..=l).map(|k| format!("y_lag{k}^{d}")));
    }
    let p = names.len();

    let mut rows = DMatrix::<f64>::zeros(n, p);
    let mut lagbuf = vec![0.0; l];
    for i in 0..n {
        let t = l + i;
        for k in 0..l {
            lagbuf[k] = y[t - 1 - k];
        }
        let mut c = 0;
        rows[(i, c)] = 1.0;
        c += 1;
        for &v in &lagbuf {
            rows[(i, c)] = v;
            c += 1;
        }
        if config.interactions {
            for a in 0..l {
                for b in a + 1..l {
                    rows[(i, c)] = lagbuf[a] * lagbuf[b];
                    c += 1;
                }
            }
        }
        for &d in &powers {
            for &v in &lagbuf {
                rows[(i, c)] = v.powi(d as i32);
                c += 1;
            }
        }
    }
    let target = DVector::from_iterator(n, y[l..].iter().copied());
    DesignMatrix::new(rows, target, names, true, l)
}

/// Which CSV column holds the prices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelector {
    Name(String),
    Index(usize),
}

impl From<&str> for ColumnSelector {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ColumnSelector::Index(i),
            Err(_) => ColumnSelector::Name(s.to_string()),
        }
    }
}

/// Read one numeric column from a headed CSV file and apply `transform`.
///
/// Column 0 is kept as date metadata unless it is the selected column.
/// Data row numbers in errors are 1-based and exclude the header.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    column: &ColumnSelector,
    transform: Transform,
) -> Result<Series> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = match column {
        ColumnSelector::Index(i) if *i < headers.len() => *i,
        ColumnSelector::Index(i) => {
            return Err(Error::Config(format!(
                "column index {i} out of range ({} columns)",
                headers.len()
            )))
        }
        ColumnSelector::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column '{name}' not found")))?,
    };

    let mut prices = Vec::new();
    let mut dates = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = record.get(idx).ok_or_else(|| Error::Parse {
            row: row + 1,
            message: "missing cell".into(),
        })?;
        let value: f64 = cell.parse().map_err(|_| Error::Parse {
            row: row + 1,
            message: format!("non-numeric value '{cell}'"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                row: row + 1,
                message: format!("non-finite value '{cell}'"),
            });
        }
        prices.push(value);
        if idx != 0 {
            dates.push(record.get(0).unwrap_or_default().to_string());
        }
    }
    if prices.is_empty() {
        return Err(Error::Parse {
            row: 0,
            message: "file contains no data rows".into(),
        });
    }

    let values = apply_transform(&prices, transform)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut series = Series::new(name, values)?;
    series.transform = transform;
    if !dates.is_empty() {
        let skip = dates.len() - series.len();
        series.dates = Some(dates.split_off(skip));
    }
    if series.is_constant() {
        log::warn!("series '{}' is constant after {transform:?}", series.name);
    }
    Ok(series)
}

pub fn apply_transform(prices: &[f64], transform: Transform) -> Result<Vec<f64>> {
    match transform {
        Transform::None => Ok(prices.to_vec()),
        Transform::Increments => Ok(prices.windows(2).map(|w| w[1] - w[0]).collect()),
        Transform::LogReturns => prices
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if w[0] > 0.0 && w[1] > 0.0 {
                    Ok((w[1] / w[0]).ln())
                } else {
                    Err(Error::Parse {
                        row: i + 2,
                        message: "log returns need strictly positive prices".into(),
                    })
                }
            })
            .collect(),
    }
}
