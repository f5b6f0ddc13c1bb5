//! In-sample estimators: OLS, ridge with blocked cross-validation, lasso by
//! coordinate descent, and a penalized ReLU network.

pub mod dnn;
pub mod lasso;
pub mod ols;
pub mod ridge;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::DesignMatrix;

pub use dnn::{clipped_norm, fit_dnn, DnnArchitecture, DnnNetwork, DnnOptions};
pub use lasso::{fit_lasso, LambdaRule, LassoConfig, LassoPenalty};
pub use ols::fit_ols;
pub use ridge::{fit_ridge, BlockedCvConfig, RidgePenalty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ols,
    Ridge,
    Lasso,
    Dnn,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Ols => "ols",
            LearnerKind::Ridge => "ridge",
            LearnerKind::Lasso => "lasso",
            LearnerKind::Dnn => "dnn",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(LearnerKind::Ols),
            "ridge" => Ok(LearnerKind::Ridge),
            "lasso" => Ok(LearnerKind::Lasso),
            "dnn" => Ok(LearnerKind::Dnn),
            other => Err(Error::Config(format!("unknown learner '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Objective after each sweep (lasso) or epoch (dnn).
    pub objective_trace: Vec<f64>,
    /// Largest KKT residual at exit (lasso only).
    pub kkt_violation: Option<f64>,
    pub warnings: Vec<String>,
}

impl FitDiagnostics {
    /// True when the trace never rises by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.objective_trace.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    /// One coefficient per design column.
    Linear(DVector<f64>),
    Network(DnnNetwork),
}

/// A fitted learner: parameters plus the prediction map `x ↦ m(θ̂, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: Params,
    pub kind: LearnerKind,
    pub lambda_used: f64,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub(crate) fn linear(
        theta: DVector<f64>,
        kind: LearnerKind,
        lambda_used: f64,
        diagnostics: FitDiagnostics,
    ) -> Self {
        Self {
            params: Params::Linear(theta),
            kind,
            lambda_used,
            diagnostics,
        }
    }

    /// Linear coefficients; `None` for networks.
    pub fn theta(&self) -> Option<&DVector<f64>> {
        match &self.params {
            Params::Linear(t) => Some(t),
            Params::Network(_) => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.params {
            Params::Linear(t) => t.len(),
            Params::Network(n) => n.architecture().input_dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Linear(t) => t.iter().zip(x).map(|(a, b)| a * b).sum(),
            Params::Network(n) => n.predict(x),
        }
    }

    /// Predictions for every row of `design`.
    pub fn predict_design(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        if design.n_cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: design.n_cols(),
            });
        }
        Ok(match &self.params {
            Params::Linear(t) => (design.rows() * t).iter().copied().collect(),
            Params::Network(n) => (0..design.n_rows())
                .map(|i| n.predict(&design.row(i)))
                .collect(),
        })
    }
}

/// `√P · Ê_P[(m(θ̂, x) − m(θ₀, x))²]` over the rows of `test`.
///
/// `truth` is the oracle predictor available in simulations.
pub fn fast_rate_diagnostic(
    model: &FittedModel,
    truth: &dyn Fn(&[f64]) -> f64,
    test: &DesignMatrix,
) -> Result<f64> {
    let p = test.n_rows();
    if p == 0 {
        return Err(Error::Domain("empty evaluation design".into()));
    }
    let fitted = model.predict_design(test)?;
    let mse = fitted
        .iter()
        .enumerate()
        .map(|(i, m)| (m - truth(&test.row(i))).powi(2))
        .sum::<f64>()
        / p as f64;
    Ok((p as f64).sqrt() * mse)
}

/// Training-set moments for the unpenalized intercept: non-intercept
/// column means and the target mean. Columns are centered in place.
pub(crate) struct Centering {
    pub col_means: Vec<f64>,
    pub y_mean: f64,
}

impl Centering {
    /// Coefficient for the constant column given the slope coefficients.
    pub fn intercept(&self, slopes: &[f64]) -> f64 {
        self.y_mean
            - self
                .col_means
                .iter()
                .zip(slopes)
                .map(|(m, b)| m * b)
                .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn fast_rate_is_zero_at_truth() {
        let theta = DVector::from_vec(vec![1.0, -2.0]);
        let model = FittedModel::linear(theta.clone(), LearnerKind::Ols, 0.0, Default::default());
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, 0.1, -1.0, 3.0]);
        let d = DesignMatrix::from_parts(x, DVector::zeros(3)).unwrap();
        let truth = |x: &[f64]| x[0] - 2.0 * x[1];
        assert_eq!(fast_rate_diagnostic(&model, &truth, &d).unwrap(), 0.0);
        let off = |x: &[f64]| x[0] - 2.0 * x[1] + 1.0;
        let v = fast_rate_diagnostic(&model, &off, &d).unwrap();
        assert!((v - 3f64.sqrt()).abs() < 1e-12);
    }
}
