use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use oos_infer::dgp::report::{self, Manifest};
use oos_infer::dgp::study::{
    run_coverage_study, run_power_study, CoverageOptions, McConfig, PowerMethod, PowerOptions, THREADS_ENV,
};
use oos_infer::dgp::DgpKind;
use oos_infer::inference::Bandwidth;
use oos_infer::learners::LambdaRule;
use oos_infer::losses::{zero_mean_score_diagnostic, LossSpec};
use oos_infer::mdh::{auto_portmanteau, mdh_test, MdhLearner, MdhOptions};
use oos_infer::series::{ingest_csv, ColumnSelector, FeatureConfig, SplitPlan, Transform};

use crate::settings::{Settings, UsageError};

pub enum CliError {
    Usage(UsageError),
    Data(oos_infer::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<oos_infer::Error> for CliError {
    fn from(e: oos_infer::Error) -> Self {
        CliError::Data(e)
    }
}

fn usage(key: &str, message: impl Into<String>) -> CliError {
    CliError::Usage(UsageError::new(key, message))
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Csv,
    Json,
}

fn format(s: &Settings) -> Result<Format, CliError> {
    match s.string("format", "csv").as_str() {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        other => Err(usage("format", format!("'{other}' is not csv or json"))),
    }
}

fn mc_config(s: &Settings) -> Result<McConfig, CliError> {
    let pi_grid: Vec<f64> = s.list("pi", "1,0.25")?;
    if let Some(bad) = pi_grid.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(usage("pi", format!("{bad} is not > 0")));
    }
    let alpha_grid: Vec<f64> = s.list("alpha", "0.1,0.05,0.01")?;
    if let Some(bad) = alpha_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(usage("alpha", format!("{bad} is not in (0, 1)")));
    }
    let n_reps: usize = s.parse("reps", 500)?;
    if n_reps == 0 {
        return Err(usage("reps", "must be >= 1"));
    }
    let threads = match s.optional::<usize>("threads")? {
        Some(0) => return Err(usage("threads", "must be >= 1")),
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Some(n),
                _ => return Err(usage(THREADS_ENV, format!("'{v}' is not a positive integer"))),
            },
            Err(_) => None,
        },
    };
    Ok(McConfig {
        n_reps,
        pi_grid,
        alpha_grid,
        master_seed: s.parse("seed", 0)?,
        threads,
    })
}

fn sample_sizes(s: &Settings, default: &str, min: usize) -> Result<Vec<usize>, CliError> {
    let ts: Vec<usize> = s.list("T", default)?;
    if let Some(bad) = ts.iter().find(|t| **t < min) {
        return Err(usage("T", format!("{bad} is below the minimum of {min}")));
    }
    Ok(ts)
}

fn designs(s: &Settings, default: &str, want_series: bool) -> Result<Vec<DgpKind>, CliError> {
    let names: Vec<String> = s.list("dgp", default)?;
    names
        .iter()
        .map(|n| {
            let kind = DgpKind::from_name(n).map_err(|_| usage("dgp", format!("unknown design '{n}'")))?;
            let fits = if want_series { kind.is_series() } else { kind.is_linear() };
            if fits {
                Ok(kind)
            } else {
                Err(usage("dgp", format!("'{n}' is not available for this command")))
            }
        })
        .collect()
}

fn out_dir(s: &Settings) -> PathBuf {
    PathBuf::from(s.string("out", "out"))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<String, CliError> {
    fs::create_dir_all(dir).map_err(oos_infer::Error::from)?;
    let mut text = serde_json::to_string_pretty(value).map_err(oos_infer::Error::from)?;
    text.push('\n');
    fs::write(dir.join(name), text).map_err(oos_infer::Error::from)?;
    Ok(name.to_string())
}

fn finish(command: &str, seed: u64, settings: &Settings, dir: &Path, files: Vec<String>, started: Instant) -> Result<(), CliError> {
    // the worker count never changes results, so it stays out of the manifest
    let mut config = settings.to_json();
    if let Some(map) = config.as_object_mut() {
        map.remove("threads");
    }
    let manifest = Manifest::new(command, seed, config, files, started.elapsed().as_secs_f64());
    manifest.write(dir)?;
    Ok(())
}

pub fn coverage(s: Settings, samples_only: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let command = if samples_only { "er-hist" } else { "coverage" };
    let fmt = format(&s)?;
    let cfg = mc_config(&s)?;
    let dgps = designs(&s, "fast-rates", false)?;
    let ts = sample_sizes(&s, "1000", 20)?;
    for &t in &ts {
        for &pi in &cfg.pi_grid {
            SplitPlan::from_ratio(t, pi).map_err(|e| usage("pi", e.to_string()))?;
        }
    }
    let scale: f64 = s.parse("lambda-scale", 2.0)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(usage("lambda-scale", "must be > 0"));
    }
    let bandwidth = match s.string("bandwidth", "auto").as_str() {
        "auto" => Bandwidth::Auto,
        v => Bandwidth::Fixed(v.parse().map_err(|_| usage("bandwidth", format!("'{v}' is not auto or an integer")))?),
    };
    let opt = CoverageOptions {
        lambda_rule: LambdaRule::Scaled(scale),
        bandwidth,
        ..CoverageOptions::default()
    };
    let study = run_coverage_study(&cfg, &dgps, &ts, &opt)?;
    let dir = out_dir(&s);
    let files = match (fmt, samples_only) {
        (Format::Json, _) => vec![write_json(&dir, &format!("{command}.json"), &study)?],
        (Format::Csv, false) => report::write_coverage(&study, &dir)?,
        (Format::Csv, true) => report::write_samples(&study, &dir)?,
    };
    if samples_only {
        println!("dgp,T,pi,n,mean_delta,mean_er");
        for kind in &dgps {
            for &t in &ts {
                for &pi in &cfg.pi_grid {
                    let rows: Vec<_> = study
                        .samples
                        .iter()
                        .filter(|r| r.dgp == kind.name() && r.t == t && r.pi == pi)
                        .collect();
                    let n = rows.len().max(1) as f64;
                    let md = rows.iter().map(|r| r.delta).sum::<f64>() / n;
                    let me = rows.iter().map(|r| r.er).sum::<f64>() / n;
                    println!("{},{t},{pi},{},{md},{me}", kind.name(), rows.len());
                }
            }
        }
    } else {
        let (header, rows) = report::coverage_table(&study);
        println!("{}", header.join(","));
        for row in rows {
            println!("{}", row.join(","));
        }
    }
    if !study.failures.is_empty() {
        log::warn!("{} replications failed; see failures.csv", study.failures.len());
    }
    finish(command, cfg.master_seed, &s, &dir, files, started)
}

pub fn power(s: Settings) -> Result<(), CliError> {
    let started = Instant::now();
    let fmt = format(&s)?;
    let cfg = mc_config(&s)?;
    let dgps = designs(&s, "garch", true)?;
    let lags: usize = s.parse("lags", 30)?;
    if lags == 0 {
        return Err(usage("lags", "must be >= 1"));
    }
    let ts = sample_sizes(&s, "1000", 2 * lags + 60)?;
    for &t in &ts {
        for &pi in &cfg.pi_grid {
            SplitPlan::from_ratio(t, pi).map_err(|e| usage("pi", e.to_string()))?;
        }
    }
    let method_names: Vec<String> = s.list("methods", "ols,ridge,ap")?;
    let methods = method_names
        .iter()
        .map(|m| PowerMethod::from_name(m).map_err(|_| usage("methods", format!("unknown method '{m}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    let opt = PowerOptions {
        ols_features: FeatureConfig::lags_only(lags),
        ridge_features: FeatureConfig {
            lags,
            ..FeatureConfig::mdh_default()
        },
        standardize: s.bool("standardize", true)?,
        ap_max_lag: s.optional("ap-max-lag")?,
        ..PowerOptions::default()
    };
    let study = run_power_study(&cfg, &dgps, &ts, &methods, &opt)?;
    let dir = out_dir(&s);
    let files = match fmt {
        Format::Json => vec![write_json(&dir, "power.json", &study)?],
        Format::Csv => report::write_power(&study, &dir)?,
    };
    let (header, rows) = report::power_table(&study);
    println!("{}", header.join(","));
    for row in rows {
        println!("{}", row.join(","));
    }
    if !study.failures.is_empty() {
        log::warn!("{} replications failed; see failures.csv", study.failures.len());
    }
    finish("power", cfg.master_seed, &s, &dir, files, started)
}

#[derive(serde::Serialize)]
struct MdhRow {
    pair: String,
    method: String,
    pi: f64,
    p_value: f64,
    statistic: f64,
    reject: bool,
}

pub fn mdh(s: Settings) -> Result<(), CliError> {
    let started = Instant::now();
    let input = PathBuf::from(s.required("input")?);
    if !input.is_file() {
        return Err(usage("input", format!("{} is not a readable file", input.display())));
    }
    let column = ColumnSelector::from(s.required("column")?.as_str());
    let transform: Transform = s
        .string("transform", "increments")
        .parse()
        .map_err(|e: oos_infer::Error| usage("transform", e.to_string()))?;
    let pi: f64 = s.parse("pi", 1.0)?;
    if !(pi > 0.0 && pi.is_finite()) {
        return Err(usage("pi", format!("{pi} is not > 0")));
    }
    let alpha: f64 = s.parse("alpha", 0.05)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage("alpha", format!("{alpha} is not in (0, 1)")));
    }
    let lags: usize = s.parse("lags", 30)?;
    if lags == 0 {
        return Err(usage("lags", "must be >= 1"));
    }
    let learners: Vec<String> = s.list("learner", "ridge")?;
    for l in &learners {
        if !matches!(l.as_str(), "ols" | "ridge" | "ap") {
            return Err(usage("learner", format!("unknown learner '{l}'")));
        }
    }
    let opt = MdhOptions {
        alpha,
        standardize: s.bool("standardize", true)?,
    };
    let fmt = format(&s)?;
    let pair = s.string(
        "pair",
        &input.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default(),
    );

    let series = ingest_csv(&input, &column, transform)?;
    let plan = SplitPlan::from_ratio(series.len(), pi)?;
    let mut rows = Vec::new();
    for l in &learners {
        let report = match l.as_str() {
            "ap" => auto_portmanteau(&series.values()[plan.in_sample()..], None, alpha)?,
            "ols" => mdh_test(&series, &plan, &FeatureConfig::lags_only(lags), &MdhLearner::Ols, &opt)?,
            _ => mdh_test(
                &series,
                &plan,
                &FeatureConfig {
                    lags,
                    ..FeatureConfig::mdh_default()
                },
                &MdhLearner::ridge_cv(),
                &opt,
            )?,
        };
        rows.push(MdhRow {
            pair: pair.clone(),
            method: report.method.name().into(),
            pi,
            p_value: report.p_value,
            statistic: report.statistic,
            reject: report.reject,
        });
    }
    println!("pair,method,pi,p_value");
    for r in &rows {
        println!("{},{},{},{:.3}", r.pair, r.method, r.pi, r.p_value);
    }
    if let Some(out) = s.raw("out") {
        let dir = PathBuf::from(out);
        let files = match fmt {
            Format::Json => vec![write_json(&dir, "mdh.json", &rows)?],
            Format::Csv => {
                fs::create_dir_all(&dir).map_err(oos_infer::Error::from)?;
                vec![report::write_rows(&dir, "mdh.csv", &rows)?]
            }
        };
        finish("mdh", 0, &s, &dir, files, started)?;
    }
    Ok(())
}

pub fn diagnose_score(s: Settings) -> Result<(), CliError> {
    let started = Instant::now();
    let input = PathBuf::from(s.required("input")?);
    if !input.is_file() {
        return Err(usage("input", format!("{} is not a readable file", input.display())));
    }
    let column = ColumnSelector::from(s.required("column")?.as_str());
    let name = s.string("loss", "mspe");
    let loss = LossSpec::from_name(
        &name,
        s.optional("delta")?,
        s.optional("asym-alpha")?,
        s.optional("asym-beta")?,
    )
    .map_err(|e| usage("loss", e.to_string()))?;
    let threshold: f64 = s.parse("threshold", 3.0)?;
    if !(threshold > 0.0) {
        return Err(usage("threshold", "must be > 0"));
    }
    let residuals = ingest_csv(&input, &column, Transform::None)?;
    let diag = zero_mean_score_diagnostic(&loss, residuals.values(), None, threshold)?;
    let text = serde_json::to_string_pretty(&diag).map_err(oos_infer::Error::from)?;
    println!("{text}");
    if let Some(out) = s.raw("out") {
        let dir = PathBuf::from(out);
        let files = vec![write_json(&dir, "diagnostic.json", &diag)?];
        finish("diagnose-score", 0, &s, &dir, files, started)?;
    }
    Ok(())
}
