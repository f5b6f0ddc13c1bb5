//! Tests of the martingale difference hypothesis `E[Y_t | F_{t−1}] = 0`.
//!
//! [`mdh_test`] fits a learner on the in-sample segment and studentizes the
//! out-of-sample products `g_t = Y_t·m̂(X_t)` by their own second moment.
//! [`auto_portmanteau`] is the heteroskedasticity-robust Box–Pierce
//! benchmark with data-driven lag choice.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learners::{ols, ridge, FittedModel, LearnerKind, RidgePenalty};
use crate::series::{build_features, FeatureConfig, Series, SplitPlan};
use crate::stats::{chi2_1_sf, normal_quantile, normal_sf};

/// Smallest out-of-sample size accepted by [`mdh_test`].
pub const MIN_OOS: usize = 30;
/// Smallest segment accepted by [`auto_portmanteau`].
pub const MIN_AP_LEN: usize = 50;
const ZERO_COEF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MdhLearner {
    Ols,
    Ridge { penalty: RidgePenalty },
}

impl MdhLearner {
    pub fn ridge_cv() -> Self {
        MdhLearner::Ridge {
            penalty: RidgePenalty::Cv(Default::default()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            MdhLearner::Ols => LearnerKind::Ols,
            MdhLearner::Ridge { .. } => LearnerKind::Ridge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdhOptions {
    pub alpha: f64,
    /// Scale non-intercept features by their in-sample moments before fitting.
    pub standardize: bool,
}

impl Default for MdhOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdhMethod {
    Ols,
    Ridge,
    AutoPortmanteau,
}

impl MdhMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MdhMethod::Ols => "ols",
            MdhMethod::Ridge => "ridge",
            MdhMethod::AutoPortmanteau => "ap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdhTestReport {
    pub method: MdhMethod,
    /// `t̂` for learner-based tests, `Q_p̃` for the portmanteau test.
    pub statistic: f64,
    pub p_value: f64,
    pub n_oos: usize,
    pub feature_dim: Option<usize>,
    pub lambda_used: Option<f64>,
    /// Lag chosen by the portmanteau penalty.
    pub selected_lag: Option<usize>,
    pub alpha: f64,
    pub reject: bool,
    pub seed: Option<u64>,
    pub config_hash: String,
}

/// `(t̂, p)` with `t̂ = √P·mean(g)/√mean(g²)` and `p = 1 − Φ(t̂)`.
pub fn self_normalized_statistic(g: &[f64]) -> Result<(f64, f64)> {
    if g.is_empty() {
        return Err(Error::Domain("empty product sequence".into()));
    }
    let n = g.len() as f64;
    let m = g.iter().sum::<f64>() / n;
    let m2 = g.iter().map(|v| v * v).sum::<f64>() / n;
    if !(m2 > 0.0) || !m2.is_finite() {
        return Err(Error::DegenerateEstimator);
    }
    let t = n.sqrt() * m / m2.sqrt();
    Ok((t, normal_sf(t)))
}

/// Fit the MDH learner on the in-sample rows. The returned design carries
/// the (possibly standardized) features for every row.
pub fn fit_mdh_learner(
    series: &Series,
    plan: &SplitPlan,
    features: &FeatureConfig,
    learner: &MdhLearner,
    opt: &MdhOptions,
) -> Result<(FittedModel, crate::series::DesignMatrix)> {
    if plan.total() != series.len() {
        return Err(Error::InvalidSplit(format!(
            "plan covers {} observations, series has {}",
            plan.total(),
            series.len()
        )));
    }
    let mut design = build_features(series, features)?;
    let n_train = design.train_rows(plan)?;
    if opt.standardize {
        design = design.standardized(n_train)?;
    }
    let train = design.slice_rows(0, n_train);
    let model = match learner {
        MdhLearner::Ols => ols::fit(&train)?,
        MdhLearner::Ridge { penalty } => ridge::fit(&train, penalty)?,
    };
    Ok((model, design))
}

pub fn mdh_test(
    series: &Series,
    plan: &SplitPlan,
    features: &FeatureConfig,
    learner: &MdhLearner,
    opt: &MdhOptions,
) -> Result<MdhTestReport> {
    validate_alpha(opt.alpha)?;
    if plan.out_of_sample() < MIN_OOS {
        return Err(Error::InsufficientData {
            needed: MIN_OOS,
            got: plan.out_of_sample(),
        });
    }
    let (model, design) = fit_mdh_learner(series, plan, features, learner, opt)?;
    let theta = model.theta().expect("linear learner");
    if theta.iter().all(|t| t.abs() < ZERO_COEF) {
        return Err(Error::DegenerateEstimator);
    }
    let n_train = design.n_rows() - plan.out_of_sample();
    let test = design.slice_rows(n_train, design.n_rows());
    let fitted = model.predict_design(&test)?;
    let g: Vec<f64> = test
        .target()
        .iter()
        .zip(&fitted)
        .map(|(y, m)| y * m)
        .collect();
    let (t, p) = self_normalized_statistic(&g)?;
    let hash = config_hash(&serde_json::json!({
        "test": "mdh",
        "features": features,
        "learner": learner,
        "options": opt,
        "r": plan.in_sample(),
        "p": plan.out_of_sample(),
    }));
    Ok(MdhTestReport {
        method: match learner.kind() {
            LearnerKind::Ols => MdhMethod::Ols,
            _ => MdhMethod::Ridge,
        },
        statistic: t,
        p_value: p,
        n_oos: g.len(),
        feature_dim: Some(design.n_cols()),
        lambda_used: Some(model.lambda_used),
        selected_lag: None,
        alpha: opt.alpha,
        reject: t > normal_quantile(1.0 - opt.alpha),
        seed: None,
        config_hash: hash,
    })
}

/// Default lag search bound `min(⌊10·log₁₀ n⌋, 50)`.
pub fn ap_max_lag(n: usize) -> usize {
    ((10.0 * (n as f64).log10()).floor() as usize).clamp(1, 50)
}

/// Robust squared autocorrelations `ρ̃_j² = γ̂_j²/τ̂_j`, `j = 1..=d`.
pub fn robust_autocorrelations(xs: &[f64], d: usize) -> Vec<f64> {
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    let a: Vec<f64> = xs.iter().map(|x| x - m).collect();
    (1..=d.min(n - 1))
        .map(|j| {
            let k = (n - j) as f64;
            let (mut gamma, mut tau) = (0.0, 0.0);
            for t in j..n {
                let prod = a[t] * a[t - j];
                gamma += prod;
                tau += prod * prod;
            }
            gamma /= k;
            tau /= k;
            if tau > 0.0 {
                gamma * gamma / tau
            } else {
                0.0
            }
        })
        .collect()
}

/// Automatic portmanteau test on `segment`, `max_lag` defaulting to [`ap_max_lag`].
pub fn auto_portmanteau(segment: &[f64], max_lag: Option<usize>, alpha: f64) -> Result<MdhTestReport> {
    validate_alpha(alpha)?;
    let n = segment.len();
    if n < MIN_AP_LEN {
        return Err(Error::InsufficientData {
            needed: MIN_AP_LEN,
            got: n,
        });
    }
    if segment.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidSeries("segment contains non-finite values".into()));
    }
    if segment.iter().all(|&x| x == segment[0]) {
        return Err(Error::DegenerateVariance("constant segment".into()));
    }
    let d = max_lag.unwrap_or_else(|| ap_max_lag(n)).clamp(1, n - 1);
    let rho2 = robust_autocorrelations(segment, d);
    let nf = n as f64;
    let log_n = nf.ln();
    let max_abs = rho2.iter().fold(0.0_f64, |m, r| m.max((nf * r).sqrt()));
    let per_lag = if max_abs <= (2.4 * log_n).sqrt() { log_n } else { 2.0 };

    let mut q = 0.0;
    let mut best = (f64::NEG_INFINITY, 0, 0.0);
    for (i, r) in rho2.iter().enumerate() {
        q += nf * r;
        let lag = i + 1;
        let criterion = q - per_lag * lag as f64;
        if criterion > best.0 {
            best = (criterion, lag, q);
        }
    }
    let (_, lag, q_sel) = best;
    let p = chi2_1_sf(q_sel);
    let hash = config_hash(&serde_json::json!({
        "test": "ap",
        "n": n,
        "max_lag": d,
        "alpha": alpha,
    }));
    Ok(MdhTestReport {
        method: MdhMethod::AutoPortmanteau,
        statistic: q_sel,
        p_value: p,
        n_oos: n,
        feature_dim: None,
        lambda_used: None,
        selected_lag: Some(lag),
        alpha,
        reject: p < alpha,
        seed: None,
        config_hash: hash,
    })
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// First 16 hex digits of the SHA-256 of a canonical JSON rendering.
pub fn config_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    hex::encode(digest)[..16].to_string()
}
