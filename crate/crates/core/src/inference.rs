//! Out-of-sample risk, the Δ / ER decomposition, HAC long-run variance and
//! normal confidence intervals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::FittedModel;
use crate::losses::LossSpec;
use crate::series::DesignMatrix;
use crate::stats::{mean, normal_quantile};

/// Shortest sequence accepted by [`long_run_variance`].
pub const MIN_LRV_LEN: usize = 8;

/// Per-observation losses `f_t(θ̂_R) = ℓ(y_t, m(θ̂_R, x_t))` over the test rows.
pub fn oos_losses(model: &FittedModel, loss: &LossSpec, test: &DesignMatrix) -> Result<Vec<f64>> {
    if test.n_rows() == 0 {
        return Err(Error::Domain("empty out-of-sample set".into()));
    }
    let fitted = model.predict_design(test)?;
    losses_of_predictions(loss, test.target().as_slice(), &fitted)
}

fn losses_of_predictions(loss: &LossSpec, y: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    y.iter().zip(m).map(|(&y, &m)| loss.value(y, m)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `⌊4(P/100)^{2/9}⌋`.
    Auto,
    Fixed(usize),
}

impl Bandwidth {
    pub fn lag(&self, n: usize) -> usize {
        match *self {
            Bandwidth::Auto => auto_bandwidth(n),
            Bandwidth::Fixed(l) => l,
        }
    }
}

pub fn auto_bandwidth(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Bartlett-kernel estimate `Γ̂(0) + 2 Σ_{j≤L} (1 − j/(L+1)) Γ̂(j)` on the
/// demeaned sequence, floored at `Γ̂(0)·1e−12`. Autocovariances use the
/// divisor `n`. Requires `n > lag`.
pub fn bartlett_variance(xs: &[f64], lag: usize) -> Result<f64> {
    let n = xs.len();
    if n <= lag.max(1) {
        return Err(Error::InsufficientData {
            needed: lag.max(1) + 1,
            got: n,
        });
    }
    let m = mean(xs);
    let a: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let gamma = |j: usize| a[j..].iter().zip(&a[..n - j]).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    let g0 = gamma(0);
    let mut omega = g0;
    for j in 1..=lag {
        omega += 2.0 * (1.0 - j as f64 / (lag as f64 + 1.0)) * gamma(j);
    }
    Ok(omega.max(g0 * 1e-12))
}

/// Long-run variance `Ω̂` of a loss sequence. A constant sequence gives 0
/// and a warning.
pub fn long_run_variance(losses: &[f64], bandwidth: Bandwidth) -> Result<f64> {
    if losses.len() < MIN_LRV_LEN {
        return Err(Error::InsufficientData {
            needed: MIN_LRV_LEN,
            got: losses.len(),
        });
    }
    if losses.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("loss sequence contains non-finite values".into()));
    }
    let first = losses[0];
    if losses.iter().all(|&x| x == first) {
        log::warn!("degenerate variance: constant loss sequence of length {}", losses.len());
        return Ok(0.0);
    }
    let lag = bandwidth.lag(losses.len()).min(losses.len() - 1);
    bartlett_variance(losses, lag)
}

/// `risk ± z_{1−α/2} √(Ω̂/P)`.
pub fn confidence_interval(risk: f64, omega_hat: f64, n_oos: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_oos == 0 {
        return Err(Error::Domain("interval needs at least one observation".into()));
    }
    if !(omega_hat >= 0.0) {
        return Err(Error::Domain(format!("long-run variance must be >= 0, got {omega_hat}")));
    }
    if omega_hat == 0.0 {
        log::warn!("degenerate variance: zero-width interval");
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * (omega_hat / n_oos as f64).sqrt();
    Ok((risk - half, risk + half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosRiskReport {
    /// `Ê_P[f_t(θ̂_R)]`.
    pub empirical_risk: f64,
    /// `√P(Ê_P[f_t(θ̂_R)] − E[f_t(θ₀)])`.
    pub delta: Option<f64>,
    /// `√P·Ê_P[f_t(θ̂_R) − f_t(θ₀)]`.
    pub er: Option<f64>,
    /// `√P(Ê_P[f_t(θ₀)] − E[f_t(θ₀)])`.
    pub oracle_term: Option<f64>,
    pub omega_hat: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub n_oos: usize,
}

impl OosRiskReport {
    /// Risk, variance and interval from a loss sequence.
    pub fn from_losses(losses: &[f64], bandwidth: Bandwidth, alpha: f64) -> Result<Self> {
        let omega_hat = long_run_variance(losses, bandwidth)?;
        let empirical_risk = mean(losses);
        let ci = confidence_interval(empirical_risk, omega_hat, losses.len(), alpha)?;
        Ok(Self {
            empirical_risk,
            delta: None,
            er: None,
            oracle_term: None,
            omega_hat,
            ci,
            alpha,
            n_oos: losses.len(),
        })
    }

    /// Same risk and variance at another level.
    pub fn interval_at(&self, alpha: f64) -> Result<(f64, f64)> {
        confidence_interval(self.empirical_risk, self.omega_hat, self.n_oos, alpha)
    }

    pub fn covers(&self, true_risk: f64) -> bool {
        self.ci.0 <= true_risk && true_risk <= self.ci.1
    }
}

/// Δ and ER for a linear truth `m(θ₀, x) = x′θ₀`.
pub fn delta_and_er(
    model: &FittedModel,
    loss: &LossSpec,
    test: &DesignMatrix,
    true_theta: &DVector<f64>,
    true_risk: f64,
    bandwidth: Bandwidth,
    alpha: f64,
) -> Result<OosRiskReport> {
    if true_theta.len() != test.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: test.n_cols(),
            got: true_theta.len(),
        });
    }
    let oracle: Vec<f64> = (test.rows() * true_theta).iter().copied().collect();
    decompose(model, loss, test, &oracle, true_risk, bandwidth, alpha)
}

/// Δ and ER for an arbitrary oracle predictor `truth(x) = m(θ₀, x)`.
pub fn delta_and_er_with(
    model: &FittedModel,
    loss: &LossSpec,
    test: &DesignMatrix,
    truth: &dyn Fn(&[f64]) -> f64,
    true_risk: f64,
    bandwidth: Bandwidth,
    alpha: f64,
) -> Result<OosRiskReport> {
    let oracle: Vec<f64> = (0..test.n_rows()).map(|i| truth(&test.row(i))).collect();
    decompose(model, loss, test, &oracle, true_risk, bandwidth, alpha)
}

fn decompose(
    model: &FittedModel,
    loss: &LossSpec,
    test: &DesignMatrix,
    oracle: &[f64],
    true_risk: f64,
    bandwidth: Bandwidth,
    alpha: f64,
) -> Result<OosRiskReport> {
    let f_hat = oos_losses(model, loss, test)?;
    let f_0 = losses_of_predictions(loss, test.target().as_slice(), oracle)?;
    let mut report = OosRiskReport::from_losses(&f_hat, bandwidth, alpha)?;
    let root_p = (f_hat.len() as f64).sqrt();
    let er = root_p * f_hat.iter().zip(&f_0).map(|(a, b)| a - b).sum::<f64>() / f_hat.len() as f64;
    let oracle_term = root_p * (mean(&f_0) - true_risk);
    report.delta = Some(root_p * (report.empirical_risk - true_risk));
    report.er = Some(er);
    report.oracle_term = Some(oracle_term);
    Ok(report)
}
