//! Prediction losses `ℓ(y, m)`, their scores `ψ(ε)` and a numeric check of
//! the zero-mean-score condition.
//!
//! Scores follow the tabulated sign convention rather than `-∂ℓ/∂m`; the
//! two are related by [`LossSpec::score_scale`], so `ψ = c · ∂ℓ/∂m`. Every
//! zero-mean diagnostic is invariant to that constant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `0.5 (y - m)²`
    Mspe,
    /// `|y - m|`
    Mad,
    Huber { delta: f64 },
    /// `α e²` for `e ≥ 0`, `β e²` otherwise.
    Asmspe { alpha: f64, beta: f64 },
    LogCosh,
    /// Logistic log-likelihood `-y m + log(1 + e^m)`, `y ∈ {0, 1}`.
    CrossEntropy,
    /// MDH moment form `2 y m` with `m = x'θ`.
    Covariance,
}

/// The unscaled covariance moment `y·m`; [`LossSpec::Covariance`] is twice this.
pub fn covariance_moment(y: f64, m: f64) -> f64 {
    y * m
}

/// Logistic map `Λ(m) = 1 / (1 + e^{-m})`.
pub fn logistic(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^m)` without overflow.
fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

/// `log(cosh(e))` without overflow.
fn log_cosh(e: f64) -> f64 {
    let a = e.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl LossSpec {
    /// The unhalved squared error `(y - m)²`.
    pub fn squared_error() -> Self {
        LossSpec::Asmspe {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Mspe => "mspe",
            LossSpec::Mad => "mad",
            LossSpec::Huber { .. } => "huber",
            LossSpec::Asmspe { .. } => "asmspe",
            LossSpec::LogCosh => "logcosh",
            LossSpec::CrossEntropy => "cross_entropy",
            LossSpec::Covariance => "covariance",
        }
    }

    /// Parse a loss by name; `delta`, `alpha` and `beta` default to
    /// 1.345, 1 and 1 when not supplied.
    pub fn from_name(
        name: &str,
        delta: Option<f64>,
        alpha: Option<f64>,
        beta: Option<f64>,
    ) -> Result<Self> {
        let spec = match name {
            "mspe" => LossSpec::Mspe,
            "mad" => LossSpec::Mad,
            "huber" => LossSpec::Huber {
                delta: delta.unwrap_or(1.345),
            },
            "asmspe" => LossSpec::Asmspe {
                alpha: alpha.unwrap_or(1.0),
                beta: beta.unwrap_or(1.0),
            },
            "logcosh" | "log_cosh" => LossSpec::LogCosh,
            "cross_entropy" | "crossentropy" => LossSpec::CrossEntropy,
            "covariance" => LossSpec::Covariance,
            other => return Err(Error::Config(format!("unknown loss '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Huber { delta } if !(delta > 0.0 && delta.is_finite()) => {
                Err(Error::Domain(format!("huber delta must be > 0, got {delta}")))
            }
            LossSpec::Asmspe { alpha, beta } if !(alpha > 0.0 && beta > 0.0) => Err(
                Error::Domain(format!("asmspe weights must be > 0, got ({alpha}, {beta})")),
            ),
            _ => Ok(()),
        }
    }

    /// False only for ASMSPE, whose zero-mean score depends on the law of ε.
    pub fn has_zero_mean_score(&self) -> bool {
        !matches!(self, LossSpec::Asmspe { .. })
    }

    fn check_target(&self, y: f64) -> Result<()> {
        if matches!(self, LossSpec::CrossEntropy) && y != 0.0 && y != 1.0 {
            return Err(Error::Domain(format!("cross entropy needs y in {{0,1}}, got {y}")));
        }
        Ok(())
    }

    pub fn value(&self, y: f64, m: f64) -> Result<f64> {
        self.check_target(y)?;
        let e = y - m;
        Ok(match *self {
            LossSpec::Mspe => 0.5 * e * e,
            LossSpec::Mad => e.abs(),
            LossSpec::Huber { delta } => {
                if e.abs() <= delta {
                    0.5 * e * e
                } else {
                    delta * e.abs() - 0.5 * delta * delta
                }
            }
            LossSpec::Asmspe { alpha, beta } => {
                if e >= 0.0 {
                    alpha * e * e
                } else {
                    beta * e * e
                }
            }
            LossSpec::LogCosh => log_cosh(e),
            LossSpec::CrossEntropy => -y * m + softplus(m),
            LossSpec::Covariance => 2.0 * y * m,
        })
    }

    /// Analytic `∂ℓ/∂m`. MAD uses `-sign(e)` with value 0 at the kink.
    pub fn dloss_dm(&self, y: f64, m: f64) -> Result<f64> {
        self.check_target(y)?;
        let e = y - m;
        Ok(match *self {
            LossSpec::Mspe => -e,
            LossSpec::Mad => {
                if e == 0.0 {
                    0.0
                } else {
                    -e.signum()
                }
            }
            LossSpec::Huber { delta } => {
                if e.abs() <= delta {
                    -e
                } else {
                    -delta * e.signum()
                }
            }
            LossSpec::Asmspe { alpha, beta } => {
                if e >= 0.0 {
                    -2.0 * alpha * e
                } else {
                    -2.0 * beta * e
                }
            }
            LossSpec::LogCosh => -e.tanh(),
            LossSpec::CrossEntropy => logistic(m) - y,
            LossSpec::Covariance => 2.0 * y,
        })
    }

    /// The tabulated score, evaluated at `(y, m)`.
    pub fn score(&self, y: f64, m: f64) -> Result<f64> {
        self.check_target(y)?;
        match self {
            LossSpec::CrossEntropy => Ok(y - logistic(m)),
            LossSpec::Covariance => Ok(y),
            _ => self.score_of_residual(y - m),
        }
    }

    /// `ψ(ε)` for residual-based losses. For cross entropy `ε = y − Λ(m)`
    /// and `ψ(ε) = ε`. The covariance loss has no residual form.
    pub fn score_of_residual(&self, e: f64) -> Result<f64> {
        Ok(match *self {
            LossSpec::Mspe | LossSpec::CrossEntropy => e,
            LossSpec::Mad => {
                if e <= 0.0 {
                    0.5
                } else {
                    -0.5
                }
            }
            LossSpec::Huber { delta } => {
                if e.abs() <= delta {
                    e
                } else {
                    delta * e.signum()
                }
            }
            LossSpec::Asmspe { alpha, beta } => {
                if e >= 0.0 {
                    alpha * e
                } else {
                    beta * e
                }
            }
            LossSpec::LogCosh => e.tanh(),
            LossSpec::Covariance => {
                return Err(Error::Domain(
                    "covariance loss score depends on y, not on a residual".into(),
                ))
            }
        })
    }

    /// Constant `c` with `ψ = c · ∂ℓ/∂m` away from kinks.
    pub fn score_scale(&self) -> f64 {
        match self {
            LossSpec::Mad => 0.5,
            LossSpec::Asmspe { .. } => -0.5,
            LossSpec::Covariance => 0.5,
            _ => -1.0,
        }
    }
}

/// Result of [`zero_mean_score_diagnostic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDiagnostic {
    pub loss: String,
    pub n: usize,
    /// Sample mean of `ψ(ε_t)·ẋ_t`, one entry per weight column.
    pub mean_score: Vec<f64>,
    pub mean_score_norm: f64,
    /// Largest component-wise `√n |mean| / sd`.
    pub studentized: f64,
    pub threshold: f64,
    pub violation: bool,
    /// False when the loss carries no zero-mean guarantee; the violation
    /// flag is then informational only.
    pub asserted: bool,
}

/// Sample analogue of the zero-mean-score condition.
///
/// `weights` has one row per residual (the derivative of the prediction in
/// θ); `None` uses a single unit weight. A studentized magnitude above
/// `threshold` flags a violation. Studentization is only reliable for
/// roughly 30 or more observations.
pub fn zero_mean_score_diagnostic(
    spec: &LossSpec,
    residuals: &[f64],
    weights: Option<&DMatrix<f64>>,
    threshold: f64,
) -> Result<ScoreDiagnostic> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::Domain("score diagnostic needs a non-empty sample".into()));
    }
    let k = match weights {
        Some(w) if w.nrows() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.nrows(),
            })
        }
        Some(w) => w.ncols(),
        None => 1,
    };
    let scores = residuals
        .iter()
        .map(|&e| spec.score_of_residual(e))
        .collect::<Result<Vec<_>>>()?;

    let mut mean_score = Vec::with_capacity(k);
    let mut studentized: f64 = 0.0;
    for j in 0..k {
        let terms: Vec<f64> = match weights {
            Some(w) => scores.iter().zip(w.column(j).iter()).map(|(s, x)| s * x).collect(),
            None => scores.clone(),
        };
        let m = crate::stats::mean(&terms);
        let sd = crate::stats::variance(&terms).sqrt();
        let t = if sd > 0.0 {
            (n as f64).sqrt() * m.abs() / sd
        } else if m == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        studentized = studentized.max(t);
        mean_score.push(m);
    }
    let mean_score_norm = mean_score.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ScoreDiagnostic {
        loss: spec.name().to_string(),
        n,
        mean_score,
        mean_score_norm,
        studentized,
        threshold,
        violation: studentized > threshold,
        asserted: spec.has_zero_mean_score(),
    })
}
