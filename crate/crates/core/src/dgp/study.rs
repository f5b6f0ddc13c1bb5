//! Monte Carlo studies: interval coverage, MDH size and power, and the
//! network convergence check.
//!
//! Every replication draws from its own seed (see [`super::substream_seed`])
//! and results are collected in replication order, so tables do not depend
//! on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, substream_seed, binary_logit, DgpKind, DgpSpec, SimDraw};
use crate::error::{Error, Result};
use crate::inference::{delta_and_er, oos_losses, Bandwidth, OosRiskReport};
use crate::learners::{dnn, fast_rate_diagnostic, lasso, DnnArchitecture, DnnOptions, LambdaRule, LassoConfig, LassoPenalty, RidgePenalty};
use crate::losses::LossSpec;
use crate::mdh::{auto_portmanteau, mdh_test, MdhLearner, MdhOptions};
use crate::series::{FeatureConfig, Series, SplitPlan};
use crate::stats::mean;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "OOS_INFER_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_reps: usize,
    pub pi_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub master_seed: u64,
    /// Worker count; `None` reads [`THREADS_ENV`], then uses every core.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_reps: 500,
            pi_grid: vec![1.0, 0.25],
            alpha_grid: vec![0.1, 0.05, 0.01],
            master_seed: 0,
            threads: None,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.pi_grid.is_empty() || self.pi_grid.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Config("pi must be > 0".into()));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolved worker count.
    pub fn workers(&self) -> Result<usize> {
        if let Some(n) = self.threads {
            return Ok(n);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
            Err(_) => Ok(rayon::current_num_threads()),
        }
    }

    /// `f(0), …, f(n−1)` on the configured pool, in index order.
    pub fn run_indexed<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers()?)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
    }
}

/// A replication that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub dgp: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub pi: f64,
    pub rep: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub lambda_rule: LambdaRule,
    pub lasso: LassoConfig,
    pub bandwidth: Bandwidth,
    /// Level of the interval written to the per-replication samples.
    pub sample_alpha: f64,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        Self {
            lambda_rule: LambdaRule::Scaled(2.0),
            lasso: LassoConfig::default(),
            bandwidth: Bandwidth::Auto,
            sample_alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub dgp: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub pi: f64,
    pub nominal: f64,
    pub coverage: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// One replication's Δ, ER and interval, ready for histogramming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepSample {
    pub rep: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub pi: f64,
    pub dgp: String,
    pub delta: f64,
    pub er: f64,
    pub risk: f64,
    pub omega: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub cells: Vec<CoverageCell>,
    pub samples: Vec<RepSample>,
    pub failures: Vec<RepFailure>,
}

impl CoverageStudy {
    pub fn cell(&self, dgp: &str, t: usize, pi: f64, nominal: f64) -> Option<&CoverageCell> {
        self.cells
            .iter()
            .find(|c| c.dgp == dgp && c.t == t && c.pi == pi && (c.nominal - nominal).abs() < 1e-12)
    }

    /// Replication mean of ER for one `(dgp, T, π)`.
    pub fn mean_er(&self, dgp: &str, t: usize, pi: f64) -> Option<f64> {
        let ers: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| s.dgp == dgp && s.t == t && s.pi == pi)
            .map(|s| s.er)
            .collect();
        (!ers.is_empty()).then(|| mean(&ers))
    }
}

struct CoverageRep {
    report: OosRiskReport,
    covered: Vec<bool>,
}

fn coverage_rep(kind: &DgpKind, t: usize, plan: &SplitPlan, seed: u64, cfg: &McConfig, opt: &CoverageOptions) -> Result<CoverageRep> {
    let SimDraw::Linear(draw) = generate(&DgpSpec { kind: *kind, t, seed }, plan)? else {
        return Err(Error::Config(format!("{} is not a regression design", kind.name())));
    };
    let model = lasso::fit(&draw.train, LassoPenalty::Rule(opt.lambda_rule), &opt.lasso)?;
    let loss = LossSpec::squared_error();
    let report = delta_and_er(&model, &loss, &draw.test, &draw.theta0, draw.true_risk, opt.bandwidth, opt.sample_alpha)?;
    let covered = cfg
        .alpha_grid
        .iter()
        .map(|&a| {
            let (lo, hi) = report.interval_at(a)?;
            Ok(lo <= draw.true_risk && draw.true_risk <= hi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageRep { report, covered })
}

/// Lasso interval coverage of the true risk for each `(dgp, T, π, 1 − α)`.
pub fn run_coverage_study(cfg: &McConfig, dgps: &[DgpKind], ts: &[usize], opt: &CoverageOptions) -> Result<CoverageStudy> {
    cfg.validate()?;
    for kind in dgps {
        kind.validate()?;
        if !kind.is_linear() {
            return Err(Error::Config(format!("coverage study needs a regression design, got {}", kind.name())));
        }
    }
    let mut study = CoverageStudy::default();
    for kind in dgps {
        let name = kind.name();
        for &t in ts {
            for (pi_index, &pi) in cfg.pi_grid.iter().enumerate() {
                let plan = SplitPlan::from_ratio(t, pi)?;
                let reps = cfg.run_indexed(cfg.n_reps, |rep| {
                    let seed = substream_seed(cfg.master_seed, &name, t, pi_index, rep);
                    coverage_rep(kind, t, &plan, seed, cfg, opt)
                })?;
                let mut hits = vec![0usize; cfg.alpha_grid.len()];
                let mut n_ok = 0;
                for (rep, outcome) in reps.into_iter().enumerate() {
                    match outcome {
                        Ok(r) => {
                            n_ok += 1;
                            for (h, c) in hits.iter_mut().zip(&r.covered) {
                                *h += usize::from(*c);
                            }
                            study.samples.push(RepSample {
                                rep,
                                t,
                                pi,
                                dgp: name.clone(),
                                delta: r.report.delta.unwrap_or(f64::NAN),
                                er: r.report.er.unwrap_or(f64::NAN),
                                risk: r.report.empirical_risk,
                                omega: r.report.omega_hat,
                                ci_lo: r.report.ci.0,
                                ci_hi: r.report.ci.1,
                                covered: r.report.covers(1.0),
                            });
                        }
                        Err(e) => study.failures.push(RepFailure {
                            dgp: name.clone(),
                            t,
                            pi,
                            rep,
                            method: "lasso".into(),
                            message: e.to_string(),
                        }),
                    }
                }
                let n_failed = cfg.n_reps - n_ok;
                for (&alpha, &h) in cfg.alpha_grid.iter().zip(&hits) {
                    study.cells.push(CoverageCell {
                        dgp: name.clone(),
                        t,
                        pi,
                        nominal: 1.0 - alpha,
                        coverage: if n_ok > 0 { h as f64 / n_ok as f64 } else { f64::NAN },
                        n_ok,
                        n_failed,
                    });
                }
            }
        }
    }
    Ok(study)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMethod {
    Ols,
    Ridge,
    Ap,
}

impl PowerMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PowerMethod::Ols => "ols",
            PowerMethod::Ridge => "ridge",
            PowerMethod::Ap => "ap",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ols" => Ok(PowerMethod::Ols),
            "ridge" => Ok(PowerMethod::Ridge),
            "ap" => Ok(PowerMethod::Ap),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub ols_features: FeatureConfig,
    pub ridge_features: FeatureConfig,
    pub ridge_penalty: RidgePenalty,
    pub standardize: bool,
    pub ap_max_lag: Option<usize>,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            ols_features: FeatureConfig::lags_only(30),
            ridge_features: FeatureConfig::mdh_default(),
            ridge_penalty: RidgePenalty::Cv(Default::default()),
            standardize: true,
            ap_max_lag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub dgp: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub pi: f64,
    pub method: String,
    pub alpha: f64,
    pub rejection_rate: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub rep: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub pi: f64,
    pub dgp: String,
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerStudy {
    pub cells: Vec<PowerCell>,
    pub samples: Vec<PowerSample>,
    pub failures: Vec<RepFailure>,
}

impl PowerStudy {
    pub fn cell(&self, dgp: &str, t: usize, pi: f64, method: PowerMethod, alpha: f64) -> Option<&PowerCell> {
        self.cells.iter().find(|c| {
            c.dgp == dgp && c.t == t && c.pi == pi && c.method == method.name() && (c.alpha - alpha).abs() < 1e-12
        })
    }

    /// Statistics of one `(dgp, T, π, method)` in replication order.
    pub fn statistics(&self, dgp: &str, t: usize, pi: f64, method: PowerMethod) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.dgp == dgp && s.t == t && s.pi == pi && s.method == method.name())
            .map(|s| s.statistic)
            .collect()
    }
}

/// Statistic and p-value of one method on one simulated series.
pub fn power_statistic(values: &[f64], plan: &SplitPlan, method: PowerMethod, opt: &PowerOptions) -> Result<(f64, f64)> {
    if method == PowerMethod::Ap {
        let r = auto_portmanteau(&values[plan.in_sample()..], opt.ap_max_lag, 0.05)?;
        return Ok((r.statistic, r.p_value));
    }
    let series = Series::new("sim", values.to_vec())?;
    let (features, learner) = match method {
        PowerMethod::Ols => (&opt.ols_features, MdhLearner::Ols),
        _ => (
            &opt.ridge_features,
            MdhLearner::Ridge {
                penalty: opt.ridge_penalty.clone(),
            },
        ),
    };
    let mdh_opt = MdhOptions {
        alpha: 0.05,
        standardize: opt.standardize,
    };
    let r = mdh_test(&series, plan, features, &learner, &mdh_opt)?;
    Ok((r.statistic, r.p_value))
}

/// Rejection frequencies of the MDH tests for each `(dgp, T, π, method, α)`.
pub fn run_power_study(
    cfg: &McConfig,
    dgps: &[DgpKind],
    ts: &[usize],
    methods: &[PowerMethod],
    opt: &PowerOptions,
) -> Result<PowerStudy> {
    cfg.validate()?;
    for kind in dgps {
        kind.validate()?;
        if !kind.is_series() {
            return Err(Error::Config(format!("power study needs a time-series design, got {}", kind.name())));
        }
    }
    let mut study = PowerStudy::default();
    for kind in dgps {
        let name = kind.name();
        for &t in ts {
            for (pi_index, &pi) in cfg.pi_grid.iter().enumerate() {
                let plan = SplitPlan::from_ratio(t, pi)?;
                let reps = cfg.run_indexed(cfg.n_reps, |rep| {
                    let seed = substream_seed(cfg.master_seed, &name, t, pi_index, rep);
                    let values = match generate(&DgpSpec { kind: *kind, t, seed }, &plan) {
                        Ok(SimDraw::Series(v)) => v,
                        Ok(_) => unreachable!("series design checked above"),
                        Err(e) => return methods.iter().map(|_| Err(e.to_string())).collect::<Vec<_>>(),
                    };
                    methods
                        .iter()
                        .map(|&m| power_statistic(&values, &plan, m, opt).map_err(|e| e.to_string()))
                        .collect()
                })?;
                for (mi, method) in methods.iter().enumerate() {
                    let mut rejections = vec![0usize; cfg.alpha_grid.len()];
                    let mut n_ok = 0;
                    for (rep, outcomes) in reps.iter().enumerate() {
                        match &outcomes[mi] {
                            Ok((stat, p)) => {
                                n_ok += 1;
                                for (r, &a) in rejections.iter_mut().zip(&cfg.alpha_grid) {
                                    *r += usize::from(*p < a);
                                }
                                study.samples.push(PowerSample {
                                    rep,
                                    t,
                                    pi,
                                    dgp: name.clone(),
                                    method: method.name().into(),
                                    statistic: *stat,
                                    p_value: *p,
                                });
                            }
                            Err(message) => study.failures.push(RepFailure {
                                dgp: name.clone(),
                                t,
                                pi,
                                rep,
                                method: method.name().into(),
                                message: message.clone(),
                            }),
                        }
                    }
                    for (&alpha, &r) in cfg.alpha_grid.iter().zip(&rejections) {
                        study.cells.push(PowerCell {
                            dgp: name.clone(),
                            t,
                            pi,
                            method: method.name().into(),
                            alpha,
                            rejection_rate: if n_ok > 0 { r as f64 / n_ok as f64 } else { f64::NAN },
                            n_ok,
                            n_failed: cfg.n_reps - n_ok,
                        });
                    }
                }
            }
        }
    }
    Ok(study)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnStudyConfig {
    pub n_reps: usize,
    /// In-sample sizes compared on a common test window.
    pub r_values: Vec<usize>,
    pub n_test: usize,
    pub d: usize,
    pub arch: DnnArchitecture,
    pub options: DnnOptions,
    pub lambda: f64,
    pub master_seed: u64,
    pub threads: Option<usize>,
}

impl DnnStudyConfig {
    pub fn new(d: usize) -> Self {
        Self {
            n_reps: 50,
            r_values: vec![500, 2000],
            n_test: 500,
            d,
            arch: DnnArchitecture::uniform(d, 2, 16),
            options: DnnOptions::default(),
            lambda: 0.0,
            master_seed: 0,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnStudyRow {
    #[serde(rename = "R")]
    pub r: usize,
    pub mean_cross_entropy: f64,
    pub baseline_cross_entropy: f64,
    pub mean_fast_rate: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Network against the constant `Λ(0)` forecaster on the binary design.
///
/// Each replication simulates `max(R) + n_test` observations; the last
/// `n_test` are the common test window and each fit uses the `R`
/// observations just before it.
pub fn run_dnn_study(cfg: &DnnStudyConfig) -> Result<Vec<DnnStudyRow>> {
    let kind = DgpKind::binary_logistic(cfg.d);
    let r_max = *cfg
        .r_values
        .iter()
        .max()
        .ok_or_else(|| Error::Config("r_values must be non-empty".into()))?;
    if cfg.n_test < 1 || cfg.n_reps < 1 || cfg.r_values.contains(&0) {
        return Err(Error::Config("dnn study needs reps, R and test size >= 1".into()));
    }
    let mc = McConfig {
        n_reps: cfg.n_reps,
        master_seed: cfg.master_seed,
        threads: cfg.threads,
        ..McConfig::default()
    };
    let loss = LossSpec::CrossEntropy;
    let total = r_max + cfg.n_test;
    let name = kind.name();
    let reps = mc.run_indexed(cfg.n_reps, |rep| -> Vec<Result<(f64, f64, f64)>> {
        let seed = substream_seed(cfg.master_seed, &name, total, 0, rep);
        let plan = match SplitPlan::from_in_sample(total, r_max) {
            Ok(p) => p,
            Err(e) => return vec![Err(e)],
        };
        let design = match generate(&DgpSpec { kind, t: total, seed }, &plan) {
            Ok(SimDraw::Binary(b)) => b.design,
            Ok(_) => unreachable!("binary design"),
            Err(e) => return vec![Err(e)],
        };
        let test = design.slice_rows(r_max, total);
        cfg.r_values
            .iter()
            .map(|&r| {
                let train = design.slice_rows(r_max - r, r_max);
                let opts = DnnOptions { seed, ..cfg.options };
                let model = dnn::fit(&train, &cfg.arch, &loss, &opts, cfg.lambda)?;
                let ce = mean(&oos_losses(&model, &loss, &test)?);
                let baseline = test
                    .target()
                    .iter()
                    .map(|&y| loss.value(y, 0.0))
                    .collect::<Result<Vec<_>>>()?;
                let fast = fast_rate_diagnostic(&model, &binary_logit, &test)?;
                Ok((ce, mean(&baseline), fast))
            })
            .collect()
    })?;
    let mut rows = Vec::with_capacity(cfg.r_values.len());
    for (i, &r) in cfg.r_values.iter().enumerate() {
        let ok: Vec<(f64, f64, f64)> = reps
            .iter()
            .filter_map(|v| v.get(i).or(v.first()).and_then(|x| x.as_ref().ok()).copied())
            .collect();
        let n_ok = ok.len();
        let avg = |f: fn(&(f64, f64, f64)) -> f64| {
            if n_ok == 0 {
                f64::NAN
            } else {
                ok.iter().map(f).sum::<f64>() / n_ok as f64
            }
        };
        rows.push(DnnStudyRow {
            r,
            mean_cross_entropy: avg(|x| x.0),
            baseline_cross_entropy: avg(|x| x.1),
            mean_fast_rate: avg(|x| x.2),
            n_ok,
            n_failed: cfg.n_reps - n_ok,
        });
    }
    Ok(rows)
}
