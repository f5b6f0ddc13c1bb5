//! Ordinary least squares on the estimation window.

use nalgebra::{Cholesky, SymmetricEigen};

use super::{FitDiagnostics, FittedModel, LearnerKind};
use crate::error::{Error, Result};
use crate::series::{DesignMatrix, SplitPlan};

/// Gram matrices with a condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// OLS on the rows of `design` whose targets fall in the estimation window.
pub fn fit_ols(design: &DesignMatrix, plan: &SplitPlan) -> Result<FittedModel> {
    let (train, _) = design.split(plan)?;
    fit(&train)
}

/// OLS on every row of `train`.
pub fn fit(train: &DesignMatrix) -> Result<FittedModel> {
    let (n, p) = (train.n_rows(), train.n_cols());
    if n <= p {
        return Err(Error::InsufficientData {
            needed: p + 1,
            got: n,
        });
    }
    let x = train.rows();
    let gram = x.transpose() * x;
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularDesign { condition });
    }
    let xty = x.transpose() * train.target();
    let chol = Cholesky::new(gram).ok_or(Error::SingularDesign { condition })?;
    let theta = chol.solve(&xty);
    let resid = train.target() - x * &theta;
    let objective = resid.norm_squared() / n as f64;
    let diagnostics = FitDiagnostics {
        iterations: 1,
        final_objective: objective,
        converged: true,
        objective_trace: vec![objective],
        ..Default::default()
    };
    Ok(FittedModel::linear(theta, LearnerKind::Ols, 0.0, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn design(x: DMatrix<f64>, y: Vec<f64>) -> DesignMatrix {
        DesignMatrix::from_parts(x, DVector::from_vec(y)).unwrap()
    }

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 3.0, 0.5]);
        let m = fit(&design(x, vec![2.0, -4.0, 6.0, 1.0])).unwrap();
        assert!((m.theta().unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_regressor_gives_mean() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let m = fit(&design(x, vec![1.0, 2.0])).unwrap();
        assert!((m.theta().unwrap()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn duplicated_columns_are_singular() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, -1.0, -1.0]);
        assert!(matches!(
            fit(&design(x, vec![1.0, 2.0, 3.0, 4.0])),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn residuals_are_orthogonal_to_regressors() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin() + j as f64);
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos()).collect();
        let d = design(x, y);
        let m = fit(&d).unwrap();
        let r = d.target() - d.rows() * m.theta().unwrap();
        let g = d.rows().transpose() * r / 50.0;
        assert!(g.amax() < 1e-8);
    }

    #[test]
    fn needs_more_rows_than_columns() {
        let x = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            fit(&design(x, vec![1.0, 2.0])),
            Err(Error::InsufficientData { .. })
        ));
    }
}
