//! Lasso, `argmin Ê_R[(y − θ'x)²] + λ‖θ‖₁`, by cyclic coordinate descent
//! with soft-thresholding.
//!
//! With the mean-squared-error scaling the per-coordinate threshold is
//! `λ/2`. Sweeps alternate between the full coordinate set and the current
//! active set, warm-started at zero; the fit has converged once a full
//! sweep moves no coordinate by more than `tol`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Centering, FitDiagnostics, FittedModel, LearnerKind};
use crate::error::{Error, Result};
use crate::series::{DesignMatrix, SplitPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaRule {
    /// `λ = √(log p / R)`.
    SqrtLogPOverR,
    /// `λ = c · √(log p / R)`.
    Scaled(f64),
}

impl LambdaRule {
    pub fn lambda(&self, p: usize, r: usize) -> f64 {
        let base = ((p.max(2) as f64).ln() / r as f64).sqrt();
        match self {
            LambdaRule::SqrtLogPOverR => base,
            LambdaRule::Scaled(c) => c * base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LassoPenalty {
    Fixed(f64),
    Rule(LambdaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Convergence threshold on the largest coordinate change in a sweep.
    pub tol: f64,
    pub max_iter: usize,
    pub kkt_tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            kkt_tol: 1e-6,
        }
    }
}

pub fn fit_lasso(
    design: &DesignMatrix,
    plan: &SplitPlan,
    penalty: LassoPenalty,
    cfg: &LassoConfig,
) -> Result<FittedModel> {
    let (train, _) = design.split(plan)?;
    fit(&train, penalty, cfg)
}

pub fn fit(train: &DesignMatrix, penalty: LassoPenalty, cfg: &LassoConfig) -> Result<FittedModel> {
    let n = train.n_rows();
    if n == 0 || train.n_cols() == 0 {
        return Err(Error::Domain("lasso needs a non-empty design".into()));
    }
    let offset = usize::from(train.has_intercept());
    let q = train.n_cols() - offset;
    let lambda = match penalty {
        LassoPenalty::Fixed(l) => l,
        LassoPenalty::Rule(rule) => rule.lambda(q, n),
    };
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lasso lambda must be >= 0, got {lambda}")));
    }

    let (x, y, centering) = slope_block(train);
    let mut solver = CoordinateDescent::new(&x, &y, lambda);
    let diagnostics = solver.run(cfg);
    if !diagnostics.converged {
        log::warn!(
            "lasso did not converge after {} sweeps (lambda {lambda})",
            diagnostics.iterations
        );
    }

    let slopes = solver.beta;
    let theta = match centering {
        Some(c) => {
            let mut theta = DVector::zeros(q + 1);
            theta[0] = c.intercept(&slopes);
            theta.rows_mut(1, q).copy_from_slice(&slopes);
            theta
        }
        None => DVector::from_vec(slopes),
    };
    Ok(FittedModel::linear(theta, LearnerKind::Lasso, lambda, diagnostics))
}

fn slope_block(train: &DesignMatrix) -> (DMatrix<f64>, Vec<f64>, Option<Centering>) {
    if !train.has_intercept() {
        return (train.rows().clone(), train.target().as_slice().to_vec(), None);
    }
    let q = train.n_cols() - 1;
    let mut x = train.rows().columns(1, q).into_owned();
    let mut col_means = Vec::with_capacity(q);
    for mut c in x.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
        col_means.push(m);
    }
    let y_mean = train.target().mean();
    let y = train.target().iter().map(|v| v - y_mean).collect();
    (x, y, Some(Centering { col_means, y_mean }))
}

/// `sign(z) · max(|z| − t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct CoordinateDescent<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    lambda: f64,
    n: f64,
    /// `‖x_j‖² / n`.
    col_sq: Vec<f64>,
    beta: Vec<f64>,
    resid: Vec<f64>,
}

impl<'a> CoordinateDescent<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a [f64], lambda: f64) -> Self {
        let n = x.nrows() as f64;
        let col_sq = (0..x.ncols())
            .map(|j| {
                let c = x.column(j);
                dot(c.as_slice(), c.as_slice()) / n
            })
            .collect();
        Self {
            x,
            y,
            lambda,
            n,
            col_sq,
            beta: vec![0.0; x.ncols()],
            resid: y.to_vec(),
        }
    }

    fn objective(&self) -> f64 {
        dot(&self.resid, &self.resid) / self.n + self.lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn update(&mut self, j: usize) -> f64 {
        let a = self.col_sq[j];
        if a == 0.0 {
            return 0.0;
        }
        let col = self.x.column(j);
        let col = col.as_slice();
        let old = self.beta[j];
        let z = dot(col, &self.resid) / self.n + a * old;
        let new = soft_threshold(z, 0.5 * self.lambda) / a;
        let delta = new - old;
        if delta != 0.0 {
            axpy(-delta, col, &mut self.resid);
            self.beta[j] = new;
        }
        delta.abs()
    }

    fn sweep_all(&mut self) -> f64 {
        let mut max_change: f64 = 0.0;
        for j in 0..self.beta.len() {
            max_change = max_change.max(self.update(j));
        }
        max_change
    }

    fn sweep_active(&mut self) -> f64 {
        let mut max_change: f64 = 0.0;
        for j in 0..self.beta.len() {
            if self.beta[j] != 0.0 {
                max_change = max_change.max(self.update(j));
            }
        }
        max_change
    }

    fn run(&mut self, cfg: &LassoConfig) -> FitDiagnostics {
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        'outer: while iterations < cfg.max_iter {
            let change = self.sweep_all();
            iterations += 1;
            trace.push(self.objective());
            if change < cfg.tol {
                converged = true;
                break;
            }
            while iterations < cfg.max_iter {
                let change = self.sweep_active();
                iterations += 1;
                trace.push(self.objective());
                if change < cfg.tol {
                    continue 'outer;
                }
            }
        }
        // Resynchronize the residual to undo drift from incremental updates.
        self.resid.copy_from_slice(self.y);
        for (j, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                axpy(-b, self.x.column(j).as_slice(), &mut self.resid);
            }
        }
        let kkt = self.kkt_violation();
        let mut warnings = Vec::new();
        if !converged {
            warnings.push(format!("no convergence within {} sweeps", cfg.max_iter));
        } else if kkt > cfg.kkt_tol {
            warnings.push(format!("KKT residual {kkt:.3e} exceeds {:.1e}", cfg.kkt_tol));
        }
        FitDiagnostics {
            iterations,
            final_objective: self.objective(),
            converged,
            objective_trace: trace,
            kkt_violation: Some(kkt),
            warnings,
        }
    }

    /// Largest violation of the subgradient stationarity conditions.
    fn kkt_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.beta.len() {
            let grad = -2.0 * dot(self.x.column(j).as_slice(), &self.resid) / self.n;
            let v = if self.beta[j] != 0.0 {
                (grad + self.lambda * self.beta[j].signum()).abs()
            } else {
                (grad.abs() - self.lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Dot product with four independent accumulators; the summation order is
/// fixed, so results are reproducible bit for bit.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(x: DMatrix<f64>, y: Vec<f64>) -> DesignMatrix {
        DesignMatrix::from_parts(x, DVector::from_vec(y)).unwrap()
    }

    /// x = (1, -1), y = (1, -1): Ê[x²] = 1, Ê[xy] = 1.
    fn unit_problem() -> DesignMatrix {
        design(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![1.0, -1.0])
    }

    #[test]
    fn soft_threshold_fixed_points() {
        let cfg = LassoConfig::default();
        let m = fit(&unit_problem(), LassoPenalty::Fixed(1.0), &cfg).unwrap();
        assert!((m.theta().unwrap()[0] - 0.5).abs() < 1e-8);
        let m = fit(&unit_problem(), LassoPenalty::Fixed(3.0), &cfg).unwrap();
        assert!(m.theta().unwrap()[0].abs() < 1e-8);
        assert!(m.diagnostics.converged);
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
    }

    #[test]
    fn unpenalized_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(200, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..200)
            .map(|i| 1.5 * x[(i, 0)] - 0.7 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let d = design(x, y);
        let l = fit(&d, LassoPenalty::Fixed(0.0), &LassoConfig::default()).unwrap();
        let o = ols::fit(&d).unwrap();
        assert!((l.theta().unwrap() - o.theta().unwrap()).amax() < 1e-6);
    }

    #[test]
    fn kkt_and_monotone_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, p) = (120, 300);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| x[(i, 0)] - x[(i, 1)] + x[(i, 2)] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let d = design(x, y);
        let cfg = LassoConfig::default();
        let m = fit(&d, LassoPenalty::Rule(LambdaRule::SqrtLogPOverR), &cfg).unwrap();
        assert!(m.diagnostics.converged);
        assert!(m.diagnostics.kkt_violation.unwrap() <= cfg.kkt_tol);
        assert!(m.diagnostics.is_monotone(1e-12));
        let expected = ((p as f64).ln() / n as f64).sqrt();
        assert_eq!(m.lambda_used, expected);
    }

    #[test]
    fn intercept_is_unpenalized() {
        let x = DMatrix::from_fn(50, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() });
        let y: Vec<f64> = (0..50).map(|i| 5.0 + 0.01 * (i as f64).sin()).collect();
        let names = vec!["const".into(), "x".into()];
        let d = DesignMatrix::new(x, DVector::from_vec(y), names, true, 0).unwrap();
        let m = fit(&d, LassoPenalty::Fixed(10.0), &LassoConfig::default()).unwrap();
        let theta = m.theta().unwrap();
        assert_eq!(theta[1], 0.0);
        assert!((theta[0] - d.target().mean()).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(30, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let cfg = LassoConfig {
            max_iter: 1,
            ..LassoConfig::default()
        };
        let m = fit(&design(x, y), LassoPenalty::Fixed(0.01), &cfg).unwrap();
        assert!(!m.diagnostics.converged);
        assert!(!m.diagnostics.warnings.is_empty());
    }

    #[test]
    fn refits_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(60, 80, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..60).map(|i| x[(i, 3)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let d = design(x, y);
        let a = fit(&d, LassoPenalty::Fixed(0.2), &LassoConfig::default()).unwrap();
        let b = fit(&d, LassoPenalty::Fixed(0.2), &LassoConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
