//! Ridge regression, `argmin Ê_R[(y − θ'x)²] + λ‖θ‖²`, with an optional
//! blocked time-series cross-validation over a log-spaced λ grid.
//!
//! The intercept column, when present, is left unpenalized by centering the
//! remaining columns and the target on their training means. The solve
//! works in whichever of the primal (p×p) or dual (n×n) spaces is smaller.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Centering, FitDiagnostics, FittedModel, LearnerKind};
use crate::error::{Error, Result};
use crate::series::{DesignMatrix, SplitPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedCvConfig {
    /// Number of contiguous blocks.
    pub k: usize,
    /// Chronological share of each block used for fitting.
    pub train_fraction: f64,
    pub grid: Vec<f64>,
}

impl Default for BlockedCvConfig {
    fn default() -> Self {
        Self {
            k: 2,
            train_fraction: 0.8,
            grid: log_grid(1e-4, 1e2, 20),
        }
    }
}

impl BlockedCvConfig {
    pub fn with_blocks(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }
}

/// `n` points evenly spaced in `log10` between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RidgePenalty {
    Fixed(f64),
    Cv(BlockedCvConfig),
}

/// Mean out-of-block MSPE for each grid point and the selected λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub mean_mspe: Vec<f64>,
}

pub fn fit_ridge(
    design: &DesignMatrix,
    plan: &SplitPlan,
    penalty: &RidgePenalty,
) -> Result<FittedModel> {
    let (train, _) = design.split(plan)?;
    fit(&train, penalty)
}

pub fn fit(train: &DesignMatrix, penalty: &RidgePenalty) -> Result<FittedModel> {
    let lambda = match penalty {
        RidgePenalty::Fixed(l) => *l,
        RidgePenalty::Cv(cfg) => blocked_cv(train, cfg)?.lambda,
    };
    fit_fixed(train, lambda)
}

/// Solve `(X'X/n + λD) θ = X'y/n`, `D` the identity with the intercept
/// entry zeroed.
pub fn fit_fixed(train: &DesignMatrix, lambda: f64) -> Result<FittedModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    if train.n_rows() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: train.n_rows(),
        });
    }
    let problem = Centered::new(train);
    let slopes = match problem.solve_cholesky(lambda) {
        Some(s) => s,
        None => RidgePath::new(&problem).slopes(lambda),
    };
    let theta = problem.assemble(&slopes);
    let resid = train.target() - train.rows() * &theta;
    let objective = resid.norm_squared() / train.n_rows() as f64 + lambda * slopes.norm_squared();
    let diagnostics = FitDiagnostics {
        iterations: 1,
        final_objective: objective,
        converged: true,
        objective_trace: vec![objective],
        ..Default::default()
    };
    Ok(FittedModel::linear(theta, LearnerKind::Ridge, lambda, diagnostics))
}

/// Blocked cross-validation: the training rows are cut into `k` contiguous
/// blocks, each block is split chronologically into fit and validation
/// segments, and validation MSPEs are averaged over blocks. The smallest
/// mean MSPE wins; ties go to the larger λ.
pub fn blocked_cv(train: &DesignMatrix, cfg: &BlockedCvConfig) -> Result<CvOutcome> {
    if cfg.k < 1 || cfg.grid.is_empty() {
        return Err(Error::Config("cv needs k >= 1 and a non-empty grid".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "cv train fraction must be in (0,1), got {}",
            cfg.train_fraction
        )));
    }
    if let Some(l) = cfg.grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Domain(format!("ridge lambda must be >= 0, got {l}")));
    }
    let n = train.n_rows();
    let mut mean_mspe = vec![0.0; cfg.grid.len()];
    for b in 0..cfg.k {
        let (start, end) = (b * n / cfg.k, (b + 1) * n / cfg.k);
        let len = end - start;
        let fit_len = (cfg.train_fraction * len as f64).round() as usize;
        if fit_len < 2 || fit_len >= len {
            return Err(Error::InsufficientData {
                needed: 2 * cfg.k + 2,
                got: n,
            });
        }
        let fit_part = train.slice_rows(start, start + fit_len);
        let val_part = train.slice_rows(start + fit_len, end);
        let problem = Centered::new(&fit_part);
        let path = RidgePath::new(&problem);
        for (i, &lambda) in cfg.grid.iter().enumerate() {
            let theta = problem.assemble(&path.slopes(lambda));
            let resid = val_part.target() - val_part.rows() * theta;
            mean_mspe[i] += resid.norm_squared() / resid.len() as f64 / cfg.k as f64;
        }
    }
    let mut best = 0;
    for i in 1..cfg.grid.len() {
        let better = mean_mspe[i] < mean_mspe[best]
            || (mean_mspe[i] == mean_mspe[best] && cfg.grid[i] > cfg.grid[best]);
        if better {
            best = i;
        }
    }
    Ok(CvOutcome {
        lambda: cfg.grid[best],
        grid: cfg.grid.clone(),
        mean_mspe,
    })
}

/// Relative residual of the penalized normal equations at `theta`.
pub fn normal_equation_residual(train: &DesignMatrix, theta: &DVector<f64>, lambda: f64) -> f64 {
    let n = train.n_rows() as f64;
    let x = train.rows();
    let mut penalty = theta * lambda;
    if train.has_intercept() {
        penalty[0] = 0.0;
    }
    let lhs = x.transpose() * (x * theta) / n + penalty;
    let rhs = x.transpose() * train.target() / n;
    (lhs - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE)
}

/// Centered slope block of a training design.
struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    centering: Option<Centering>,
}

impl Centered {
    fn new(train: &DesignMatrix) -> Self {
        if train.has_intercept() {
            let n = train.n_rows();
            let q = train.n_cols() - 1;
            let mut x = train.rows().columns(1, q).into_owned();
            let mut col_means = Vec::with_capacity(q);
            for mut c in x.column_iter_mut() {
                let m = c.mean();
                c.add_scalar_mut(-m);
                col_means.push(m);
            }
            let y_mean = train.target().mean();
            let y = train.target().add_scalar(-y_mean);
            debug_assert_eq!(y.len(), n);
            Self {
                x,
                y,
                centering: Some(Centering { col_means, y_mean }),
            }
        } else {
            Self {
                x: train.rows().clone(),
                y: train.target().clone(),
                centering: None,
            }
        }
    }

    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    fn dual(&self) -> bool {
        self.x.ncols() > self.x.nrows()
    }

    fn solve_cholesky(&self, lambda: f64) -> Option<DVector<f64>> {
        let n = self.n();
        if self.x.ncols() == 0 {
            return Some(DVector::zeros(0));
        }
        if self.dual() {
            if lambda == 0.0 {
                return None;
            }
            let mut k = &self.x * self.x.transpose() / n;
            for i in 0..k.nrows() {
                k[(i, i)] += lambda;
            }
            let a = Cholesky::new(k)?.solve(&(&self.y / n));
            Some(self.x.transpose() * a)
        } else {
            let mut g = self.x.transpose() * &self.x / n;
            for i in 0..g.nrows() {
                g[(i, i)] += lambda;
            }
            let chol = Cholesky::new(g)?;
            let l = chol.l_dirty();
            let d = (0..l.nrows()).map(|i| l[(i, i)]).collect::<Vec<_>>();
            let (max, min) = d.iter().fold((0.0f64, f64::INFINITY), |(a, b), v| {
                (a.max(*v), b.min(*v))
            });
            // squared diagonal ratio bounds the condition number from below
            if (max / min).powi(2) > 1e14 {
                return None;
            }
            Some(chol.solve(&(self.x.transpose() * &self.y / n)))
        }
    }

    fn assemble(&self, slopes: &DVector<f64>) -> DVector<f64> {
        match &self.centering {
            Some(c) => {
                let mut theta = DVector::zeros(slopes.len() + 1);
                theta[0] = c.intercept(slopes.as_slice());
                theta.rows_mut(1, slopes.len()).copy_from(slopes);
                theta
            }
            None => slopes.clone(),
        }
    }
}

/// Eigen-decomposed ridge problem, cheap to re-solve for many λ.
struct RidgePath<'a> {
    problem: &'a Centered,
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    /// `V'X'y/n` (primal) or `Q'y/n` (dual).
    projected: DVector<f64>,
}

impl<'a> RidgePath<'a> {
    fn new(problem: &'a Centered) -> Self {
        let n = problem.n();
        let (m, rhs) = if problem.dual() {
            (&problem.x * problem.x.transpose() / n, &problem.y / n)
        } else {
            (
                problem.x.transpose() * &problem.x / n,
                problem.x.transpose() * &problem.y / n,
            )
        };
        let eig = SymmetricEigen::new(m);
        let projected = eig.eigenvectors.transpose() * rhs;
        Self {
            problem,
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
            projected,
        }
    }

    fn slopes(&self, lambda: f64) -> DVector<f64> {
        let top = self.values.amax();
        let cutoff = top * 1e-12;
        let scaled = DVector::from_iterator(
            self.values.len(),
            self.values
                .iter()
                .zip(self.projected.iter())
                .map(|(&mu, &b)| {
                    let d = mu.max(0.0) + lambda;
                    if d <= cutoff {
                        0.0
                    } else {
                        b / d
                    }
                }),
        );
        let w = &self.vectors * scaled;
        if self.problem.dual() {
            self.problem.x.transpose() * w
        } else {
            w
        }
    }
}
