//! Feed-forward ReLU network trained on a penalized empirical risk
//! `Ê_R[ℓ(y, m(θ, x))] + λ‖θ‖_clip,τ`.
//!
//! Training is plain mini-batch descent with a fixed step. After every
//! step the parameters are projected onto the box `|θ_j| ≤ B`, and
//! predictions are clamped to `[−F, F]`. Biases are exempt from the
//! clipped-norm penalty.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FitDiagnostics, FittedModel, LearnerKind, Params};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::series::{DesignMatrix, SplitPlan};

/// `Σ_j min(|θ_j| / τ, 1)`.
pub fn clipped_norm(theta: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("clip threshold must be > 0, got {tau}")));
    }
    Ok(theta.iter().map(|t| (t.abs() / tau).min(1.0)).sum())
}

/// Subgradient of one clipped-norm term; zero on the flat side and at `|θ| = τ`.
fn clipped_subgradient(theta: f64, tau: f64) -> f64 {
    if theta.abs() < tau && theta != 0.0 {
        theta.signum() / tau
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnArchitecture {
    /// `w_0, …, w_{L+1}`: input dimension, hidden widths, output width 1.
    pub widths: Vec<usize>,
    pub weight_bound: f64,
    pub output_bound: f64,
    pub clip_threshold: f64,
}

impl DnnArchitecture {
    /// `depth` hidden layers of equal `width`.
    pub fn uniform(input_dim: usize, depth: usize, width: usize) -> Self {
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(1);
        Self {
            widths,
            weight_bound: 10.0,
            output_bound: 10.0,
            clip_threshold: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("network needs input and output widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("network widths must be >= 1".into()));
        }
        if *self.widths.last().unwrap() != 1 {
            return Err(Error::Config("network output width must be 1".into()));
        }
        for (name, v) in [
            ("weight bound", self.weight_bound),
            ("output bound", self.output_bound),
            ("clip threshold", self.clip_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// `true` for weight entries, `false` for biases, in parameter order.
    pub fn penalized_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.n_params());
        for w in self.widths.windows(2) {
            mask.extend(std::iter::repeat_n(true, w[0] * w[1]));
            mask.extend(std::iter::repeat_n(false, w[1]));
        }
        mask
    }
}

/// Network parameters `θ = (vec(W_1), b_1, …, vec(W_{L+1}), b_{L+1})`,
/// each `W_j` stored row-major as `w_j × w_{j−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnNetwork {
    arch: DnnArchitecture,
    theta: Vec<f64>,
}

struct Forward {
    /// Activations `a_0 = x, a_1, …, a_L`.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    output: f64,
}

impl DnnNetwork {
    pub fn new(arch: DnnArchitecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.n_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.n_params(),
                got: theta.len(),
            });
        }
        Ok(Self { arch, theta })
    }

    /// He-scaled Gaussian weights clipped to the box, zero biases.
    pub fn initialize(arch: DnnArchitecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let b = arch.weight_bound;
        let mut theta = Vec::with_capacity(arch.n_params());
        for w in arch.widths.windows(2) {
            let sd = (2.0 / w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                theta.push((sd * rng.sample::<f64, _>(StandardNormal)).clamp(-b, b));
            }
            theta.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self { arch, theta })
    }

    pub fn architecture(&self) -> &DnnArchitecture {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let widths = &self.arch.widths;
        let last = widths.len() - 2;
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(last);
        let mut offset = 0;
        let mut output = 0.0;
        for (layer, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.theta[offset..offset + n_in * n_out];
            let bias = &self.theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = &activations[layer];
            let z: Vec<f64> = (0..n_out)
                .map(|r| {
                    bias[r]
                        + weights[r * n_in..(r + 1) * n_in]
                            .iter()
                            .zip(input)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            if layer == last {
                output = z[0];
            } else {
                activations.push(z.iter().map(|v| v.max(0.0)).collect());
                pre.push(z);
            }
        }
        Forward {
            activations,
            pre,
            output,
        }
    }

    /// Unclamped network output `A_{L+1}(…)`.
    pub fn raw_output(&self, x: &[f64]) -> f64 {
        self.forward(x).output
    }

    /// `m(θ, x)`, clamped to `[−F, F]`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let f = self.arch.output_bound;
        self.raw_output(x).clamp(-f, f)
    }

    /// Smallest `|z|` over hidden pre-activations at `x`; distance to a ReLU kink.
    pub fn kink_margin(&self, x: &[f64]) -> f64 {
        self.forward(x)
            .pre
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }

    /// `∂ℓ(y, m(θ, x))/∂θ`, accumulated into `grad` with weight `scale`.
    fn accumulate_gradient(
        &self,
        x: &[f64],
        y: f64,
        loss: &LossSpec,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let fw = self.forward(x);
        let f = self.arch.output_bound;
        let m = fw.output.clamp(-f, f);
        let mut delta = vec![if fw.output.abs() < f {
            loss.dloss_dm(y, m)? * scale
        } else {
            0.0
        }];
        let widths = &self.arch.widths;
        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for w in widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for layer in (0..widths.len() - 1).rev() {
            let (n_in, n_out) = (widths[layer], widths[layer + 1]);
            let base = offsets[layer];
            let input = &fw.activations[layer];
            for r in 0..n_out {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + r * n_in..base + (r + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[base + n_in * n_out + r] += d;
            }
            if layer == 0 {
                break;
            }
            let weights = &self.theta[base..base + n_in * n_out];
            let z = &fw.pre[layer - 1];
            delta = (0..n_in)
                .map(|c| {
                    if z[c] <= 0.0 {
                        return 0.0;
                    }
                    (0..n_out).map(|r| weights[r * n_in + c] * delta[r]).sum()
                })
                .collect();
        }
        Ok(())
    }

    /// Gradient of `ℓ(y, m(θ, x))` in θ at a single point.
    pub fn loss_gradient(&self, x: &[f64], y: f64, loss: &LossSpec) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.theta.len()];
        self.accumulate_gradient(x, y, loss, 1.0, &mut g)?;
        Ok(g)
    }

    fn with_theta(&self, theta: Vec<f64>) -> Self {
        Self {
            arch: self.arch.clone(),
            theta,
        }
    }

    /// Loss at `(x, y)` with the parameters replaced by `theta`.
    pub fn loss_at(&self, theta: &[f64], x: &[f64], y: f64, loss: &LossSpec) -> Result<f64> {
        let net = self.with_theta(theta.to_vec());
        loss.value(y, net.predict(x))
    }

    fn penalized_risk(
        &self,
        train: &DesignMatrix,
        loss: &LossSpec,
        lambda: f64,
        mask: &[bool],
    ) -> Result<f64> {
        let n = train.n_rows();
        let mut risk = 0.0;
        for i in 0..n {
            risk += loss.value(train.target()[i], self.predict(&train.row(i)))?;
        }
        let weights: Vec<f64> = self
            .theta
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(t, _)| *t)
            .collect();
        Ok(risk / n as f64 + lambda * clipped_norm(&weights, self.arch.clip_threshold)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnnOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for DnnOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            batch: 32,
            seed: 0,
        }
    }
}

pub fn fit_dnn(
    design: &DesignMatrix,
    plan: &SplitPlan,
    arch: &DnnArchitecture,
    loss: &LossSpec,
    opt: &DnnOptions,
    lambda: f64,
) -> Result<FittedModel> {
    let (train, _) = design.split(plan)?;
    fit(&train, arch, loss, opt, lambda)
}

pub fn fit(
    train: &DesignMatrix,
    arch: &DnnArchitecture,
    loss: &LossSpec,
    opt: &DnnOptions,
    lambda: f64,
) -> Result<FittedModel> {
    fit_observed(train, arch, loss, opt, lambda, |_| {})
}

/// As [`fit`], calling `observe` with the network after every step.
pub fn fit_observed(
    train: &DesignMatrix,
    arch: &DnnArchitecture,
    loss: &LossSpec,
    opt: &DnnOptions,
    lambda: f64,
    mut observe: impl FnMut(&DnnNetwork),
) -> Result<FittedModel> {
    arch.validate()?;
    if !matches!(loss, LossSpec::CrossEntropy | LossSpec::Mspe) {
        return Err(Error::Config(format!(
            "network training supports mspe and cross_entropy, got {}",
            loss.name()
        )));
    }
    if train.n_cols() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: train.n_cols(),
        });
    }
    if !(lambda >= 0.0) || !(opt.learning_rate > 0.0) || opt.batch == 0 {
        return Err(Error::Config(
            "network training needs lambda >= 0, learning rate > 0 and batch >= 1".into(),
        ));
    }
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    for &y in train.target().iter() {
        loss.value(y, 0.0)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut net = DnnNetwork::initialize(arch.clone(), &mut rng)?;
    let mask = arch.penalized_mask();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| train.row(i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; net.theta.len()];
    let mut trace = Vec::with_capacity(opt.epochs);
    let b = arch.weight_bound;
    let tau = arch.clip_threshold;

    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opt.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                net.accumulate_gradient(&rows[i], train.target()[i], loss, scale, &mut grad)?;
            }
            for ((t, g), &pen) in net.theta.iter_mut().zip(&grad).zip(&mask) {
                let step = if pen { g + lambda * clipped_subgradient(*t, tau) } else { *g };
                *t = (*t - opt.learning_rate * step).clamp(-b, b);
            }
            if net.theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: opt.learning_rate,
                });
            }
            observe(&net);
        }
        let objective = net.penalized_risk(train, loss, lambda, &mask)?;
        if !objective.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: opt.learning_rate,
            });
        }
        trace.push(objective);
    }

    let final_objective = trace
        .last()
        .copied()
        .unwrap_or_else(|| net.penalized_risk(train, loss, lambda, &mask).unwrap_or(f64::NAN));
    let mut diagnostics = FitDiagnostics {
        iterations: opt.epochs,
        final_objective,
        converged: false,
        objective_trace: trace,
        ..Default::default()
    };
    // stochastic steps need not decrease the objective every epoch
    diagnostics.converged = diagnostics.is_monotone(1e-12);
    if !diagnostics.converged {
        diagnostics
            .warnings
            .push("objective not monotone across epochs".into());
    }
    Ok(FittedModel {
        params: Params::Network(net),
        kind: LearnerKind::Dnn,
        lambda_used: lambda,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn clipped_norm_examples() {
        assert_eq!(clipped_norm(&[0.5, 2.0], 1.0).unwrap(), 1.5);
        assert_eq!(clipped_norm(&[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(clipped_norm(&[3.0, 3.0, 3.0], 1.0).unwrap(), 3.0);
        assert!(clipped_norm(&[1.0], 0.0).is_err());
        assert_eq!(clipped_subgradient(1.0, 1.0), 0.0);
        assert_eq!(clipped_subgradient(-0.5, 1.0), -1.0);
    }

    #[test]
    fn relu_zeroes_negative_input() {
        // one hidden unit with identity affine map, then identity output
        let arch = DnnArchitecture {
            widths: vec![1, 1, 1],
            weight_bound: 10.0,
            output_bound: 10.0,
            clip_threshold: 1.0,
        };
        let net = DnnNetwork::new(arch, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.predict(&[-1.0]), 0.0);
        assert_eq!(net.predict(&[2.0]), 2.0);
    }

    #[test]
    fn output_is_clamped() {
        let arch = DnnArchitecture {
            widths: vec![1, 1],
            weight_bound: 100.0,
            output_bound: 3.0,
            clip_threshold: 1.0,
        };
        let net = DnnNetwork::new(arch, vec![50.0, 0.0]).unwrap();
        assert_eq!(net.predict(&[1.0]), 3.0);
        assert_eq!(net.predict(&[-1.0]), -3.0);
    }

    #[test]
    fn architecture_validation() {
        let mut a = DnnArchitecture::uniform(3, 2, 4);
        assert_eq!(a.widths, vec![3, 4, 4, 1]);
        assert_eq!(a.n_params(), 3 * 4 + 4 + 4 * 4 + 4 + 4 + 1);
        assert!(a.validate().is_ok());
        a.widths = vec![3, 4, 2];
        assert!(a.validate().is_err());
        let mut a = DnnArchitecture::uniform(3, 1, 4);
        a.weight_bound = 0.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn affine_network_recovers_slope() {
        let n = 1000;
        let x = DMatrix::from_fn(n, 1, |i, _| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64);
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)]);
        let d = DesignMatrix::from_parts(x, y).unwrap();
        let arch = DnnArchitecture {
            widths: vec![1, 1],
            weight_bound: 10.0,
            output_bound: 10.0,
            clip_threshold: 0.01,
        };
        let m = fit(&d, &arch, &LossSpec::Mspe, &DnnOptions::default(), 0.0).unwrap();
        let Params::Network(net) = &m.params else { panic!() };
        assert!((net.theta()[0] - 2.0).abs() < 1e-3, "{:?}", net.theta());
        assert!(net.theta()[1].abs() < 1e-3);
    }

    #[test]
    fn rejects_unsupported_loss_and_bad_target() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let d = DesignMatrix::from_parts(x, DVector::from_vec(vec![0.0, 1.0, 0.5, 1.0])).unwrap();
        let arch = DnnArchitecture::uniform(1, 1, 2);
        let opt = DnnOptions::default();
        assert!(fit(&d, &arch, &LossSpec::Mad, &opt, 0.0).is_err());
        assert!(matches!(
            fit(&d, &arch, &LossSpec::CrossEntropy, &opt, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn huge_step_is_reported_as_divergence() {
        let n = 64;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y = DVector::from_fn(n, |i, _| 1e300 * i as f64);
        let d = DesignMatrix::from_parts(x, y).unwrap();
        let arch = DnnArchitecture {
            widths: vec![1, 1],
            weight_bound: f64::MAX,
            output_bound: f64::MAX,
            clip_threshold: 1.0,
        };
        let opt = DnnOptions {
            learning_rate: 1e300,
            epochs: 5,
            ..DnnOptions::default()
        };
        match fit(&d, &arch, &LossSpec::Mspe, &opt, 0.0) {
            Err(Error::Divergence { epoch, learning_rate }) => {
                assert_eq!(epoch, 0);
                assert_eq!(learning_rate, 1e300);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
