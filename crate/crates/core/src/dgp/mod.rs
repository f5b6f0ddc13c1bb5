//! Simulation designs and the Monte Carlo driver.

pub mod report;
pub mod study;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::logistic;
use crate::series::{DesignMatrix, SplitPlan};

/// Pre-sample steps discarded by every recursive design.
pub const BURN_IN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SparsityRule {
    /// `s = ⌈√p − 27⌉`.
    Decreasing,
    Fixed { s: usize },
}

impl SparsityRule {
    pub fn sparsity(&self, p: usize) -> usize {
        match *self {
            SparsityRule::Decreasing => ((p as f64).sqrt() - 27.0).ceil().max(1.0) as usize,
            SparsityRule::Fixed { s } => s,
        }
        .min(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    SparseLinear { rule: SparsityRule },
    Multicollinear { s: usize, noise_sd: f64 },
    Garch11 { omega: f64, alpha: f64, beta: f64 },
    Ar1Garch { phi: f64 },
    Exp1 { a: f64, b: f64 },
    Nlma,
    Ar4Exp1,
    BinaryLogistic { d: usize, rho: f64 },
}

impl DgpKind {
    pub fn decreasing_sparsity() -> Self {
        DgpKind::SparseLinear {
            rule: SparsityRule::Decreasing,
        }
    }

    pub fn fast_rates() -> Self {
        DgpKind::SparseLinear {
            rule: SparsityRule::Fixed { s: 5 },
        }
    }

    pub fn multicollinear() -> Self {
        DgpKind::Multicollinear { s: 15, noise_sd: 0.1 }
    }

    pub fn garch() -> Self {
        DgpKind::Garch11 {
            omega: 0.1,
            alpha: 0.2,
            beta: 0.7,
        }
    }

    pub fn ar1_garch() -> Self {
        DgpKind::Ar1Garch { phi: 0.3 }
    }

    pub fn exp1() -> Self {
        DgpKind::Exp1 { a: 0.6, b: 0.5 }
    }

    pub fn binary_logistic(d: usize) -> Self {
        DgpKind::BinaryLogistic { d, rho: 0.5 }
    }

    /// Parse a command-line name such as `fast-rates` or `ar1-garch`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "decreasing-sparsity" => Self::decreasing_sparsity(),
            "fast-rates" => Self::fast_rates(),
            "multicollinear" => Self::multicollinear(),
            "garch" => Self::garch(),
            "ar1-garch" => Self::ar1_garch(),
            "exp1" => Self::exp1(),
            "nlma" => DgpKind::Nlma,
            "ar4-exp1" => DgpKind::Ar4Exp1,
            "binary-logistic" => Self::binary_logistic(3),
            other => return Err(Error::Config(format!("unknown dgp '{other}'"))),
        })
    }

    /// Stable identifier used in tables and seed derivation.
    pub fn name(&self) -> String {
        match self {
            DgpKind::SparseLinear {
                rule: SparsityRule::Decreasing,
            } => "decreasing-sparsity".into(),
            DgpKind::SparseLinear {
                rule: SparsityRule::Fixed { s: 5 },
            } => "fast-rates".into(),
            DgpKind::SparseLinear {
                rule: SparsityRule::Fixed { s },
            } => format!("sparse-linear-s{s}"),
            DgpKind::Multicollinear { .. } => "multicollinear".into(),
            DgpKind::Garch11 { .. } => "garch".into(),
            DgpKind::Ar1Garch { .. } => "ar1-garch".into(),
            DgpKind::Exp1 { .. } => "exp1".into(),
            DgpKind::Nlma => "nlma".into(),
            DgpKind::Ar4Exp1 => "ar4-exp1".into(),
            DgpKind::BinaryLogistic { .. } => "binary-logistic".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DgpKind::Garch11 { omega, alpha, beta } => check_garch(omega, alpha, beta),
            DgpKind::Multicollinear { s, noise_sd } if s == 0 || !(noise_sd >= 0.0) => {
                Err(Error::Config("multicollinear design needs s >= 1 and noise_sd >= 0".into()))
            }
            DgpKind::SparseLinear {
                rule: SparsityRule::Fixed { s: 0 },
            } => Err(Error::Config("sparsity must be >= 1".into())),
            DgpKind::BinaryLogistic { d, rho } if d == 0 || !(rho.abs() < 1.0) => {
                Err(Error::Config("binary design needs d >= 1 and |rho| < 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, DgpKind::SparseLinear { .. } | DgpKind::Multicollinear { .. })
    }

    pub fn is_series(&self) -> bool {
        matches!(
            self,
            DgpKind::Garch11 { .. } | DgpKind::Ar1Garch { .. } | DgpKind::Exp1 { .. } | DgpKind::Nlma | DgpKind::Ar4Exp1
        )
    }
}

fn check_garch(omega: f64, alpha: f64, beta: f64) -> Result<()> {
    if omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "garch parameters need omega > 0, alpha, beta >= 0 and alpha + beta < 1; got ({omega}, {alpha}, {beta})"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub t: usize,
    pub seed: u64,
}

/// High-dimensional regression draw: independent train and test blocks.
#[derive(Debug, Clone)]
pub struct LinearDraw {
    pub train: DesignMatrix,
    pub test: DesignMatrix,
    pub theta0: DVector<f64>,
    /// `E[(Y − X′θ₀)²]`.
    pub true_risk: f64,
}

/// Binary outcomes with covariates on `[−1, 1]^d`.
#[derive(Debug, Clone)]
pub struct BinaryDraw {
    pub design: DesignMatrix,
}

#[derive(Debug, Clone)]
pub enum SimDraw {
    Linear(LinearDraw),
    Series(Vec<f64>),
    Binary(BinaryDraw),
}

/// Draw one sample. `plan` sets the train/test sizes of regression designs;
/// series and binary designs produce `spec.t` observations.
pub fn generate(spec: &DgpSpec, plan: &SplitPlan) -> Result<SimDraw> {
    spec.kind.validate()?;
    if plan.total() != spec.t {
        return Err(Error::InvalidSplit(format!(
            "plan covers {} observations, the draw asks for {}",
            plan.total(),
            spec.t
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(match spec.kind {
        DgpKind::SparseLinear { rule } => {
            let p = spec.t;
            let theta0 = alternating_theta(p, rule.sparsity(p));
            SimDraw::Linear(linear_draw(plan, theta0, p, &mut rng, iid_row)?)
        }
        DgpKind::Multicollinear { s, noise_sd } => {
            let p = spec.t;
            let theta0 = alternating_theta(p, s.min(p));
            let row = move |rng: &mut ChaCha8Rng, out: &mut [f64]| collinear_row(rng, out, noise_sd);
            SimDraw::Linear(linear_draw(plan, theta0, p, &mut rng, row)?)
        }
        DgpKind::BinaryLogistic { d, rho } => SimDraw::Binary(BinaryDraw {
            design: binary_logistic(d, rho, spec.t, &mut rng)?,
        }),
        kind => SimDraw::Series(simulate_series(&kind, spec.t, &mut rng)?),
    })
}

/// `θ₀ = (+1, −1, +1, …)` on the first `s` entries, zero after.
pub fn alternating_theta(p: usize, s: usize) -> DVector<f64> {
    DVector::from_fn(p, |j, _| {
        if j >= s {
            0.0
        } else if j % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

fn iid_row(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

fn collinear_row(rng: &mut ChaCha8Rng, out: &mut [f64], noise_sd: f64) {
    let z: f64 = rng.sample(StandardNormal);
    out[0] = z;
    for v in &mut out[1..] {
        *v = z + noise_sd * rng.sample::<f64, _>(StandardNormal);
    }
}

fn linear_draw(
    plan: &SplitPlan,
    theta0: DVector<f64>,
    p: usize,
    rng: &mut ChaCha8Rng,
    mut row: impl FnMut(&mut ChaCha8Rng, &mut [f64]),
) -> Result<LinearDraw> {
    let mut block = |n: usize, rng: &mut ChaCha8Rng| -> Result<DesignMatrix> {
        // rows are drawn one at a time so each row's draws are contiguous
        let mut buf = vec![0.0; p];
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            row(rng, &mut buf);
            let signal: f64 = buf.iter().zip(theta0.iter()).map(|(a, b)| a * b).sum();
            let eps: f64 = rng.sample(StandardNormal);
            for (j, v) in buf.iter().enumerate() {
                x[(i, j)] = *v;
            }
            y[i] = signal + eps;
        }
        DesignMatrix::from_parts(x, y)
    };
    let train = block(plan.in_sample(), rng)?;
    let test = block(plan.out_of_sample(), rng)?;
    Ok(LinearDraw {
        train,
        test,
        theta0,
        true_risk: 1.0,
    })
}

/// `m₀(x) = Σ_k sin(2x_k)`, the log-odds of the binary design.
pub fn binary_logit(x: &[f64]) -> f64 {
    x.iter().map(|v| (2.0 * v).sin()).sum()
}

/// `X_t = clamp(ρX_{t−1} + U_t)` on `[−1, 1]^d` with `U_t` uniform on
/// `[−1, 1]^d`, and `Y_t ~ Bernoulli(Λ(m₀(X_t)))`.
pub fn binary_logistic(d: usize, rho: f64, n: usize, rng: &mut impl Rng) -> Result<DesignMatrix> {
    let mut state = vec![0.0; d];
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for t in 0..BURN_IN + n {
        for s in state.iter_mut() {
            *s = (rho * *s + rng.random_range(-1.0..=1.0)).clamp(-1.0, 1.0);
        }
        let u: f64 = rng.random();
        if t >= BURN_IN {
            let i = t - BURN_IN;
            for (k, s) in state.iter().enumerate() {
                x[(i, k)] = *s;
            }
            y[i] = f64::from(u < logistic(binary_logit(&state)));
        }
    }
    DesignMatrix::from_parts(x, y)
}

/// Simulate `t` observations of a recursive design after the burn-in.
pub fn simulate_series(kind: &DgpKind, t: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    kind.validate()?;
    let total = BURN_IN + t;
    let mut eps = || -> f64 { rng.sample(StandardNormal) };
    let mut y = Vec::with_capacity(total);
    match *kind {
        DgpKind::Garch11 { omega, alpha, beta } => {
            let (mut lag, mut var) = (0.0_f64, 0.0_f64);
            for _ in 0..total {
                var = omega + alpha * lag * lag + beta * var;
                lag = eps() * var.sqrt();
                y.push(lag);
            }
        }
        DgpKind::Ar1Garch { phi } => {
            let (mut prev, mut shock, mut var) = (0.0_f64, 0.0_f64, 0.0_f64);
            for _ in 0..total {
                var = 0.1 + 0.2 * shock * shock + 0.7 * var;
                shock = eps() * var.sqrt();
                prev = phi * prev + shock;
                y.push(prev);
            }
        }
        DgpKind::Exp1 { a, b } => {
            let mut prev = 0.0_f64;
            for _ in 0..total {
                prev = a * prev * (-b * prev * prev).exp() + eps();
                y.push(prev);
            }
        }
        DgpKind::Nlma => {
            let (mut e1, mut e2) = (0.0_f64, 0.0_f64);
            for _ in 0..total {
                let e0 = eps();
                y.push(e1 * e2 * (1.0 + e0 + e2));
                e2 = e1;
                e1 = e0;
            }
        }
        DgpKind::Ar4Exp1 => {
            let mut lags = [0.0_f64; 4];
            for _ in 0..total {
                let v = 10.0 * (-0.5 * lags[0] * lags[0]).exp()
                    + 0.58 * lags[0]
                    + 0.1 * lags[1]
                    + 0.06 * lags[2]
                    + 0.02 * lags[3]
                    + eps();
                lags = [v, lags[0], lags[1], lags[2]];
                y.push(v);
            }
        }
        other => {
            return Err(Error::Config(format!("{} is not a time-series design", other.name())));
        }
    }
    Ok(y.split_off(BURN_IN))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a, stable across platforms and releases.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of one replication, a function of its coordinates only.
pub fn substream_seed(master: u64, dgp: &str, t: usize, pi_index: usize, rep: usize) -> u64 {
    [name_hash(dgp), t as u64, pi_index as u64, rep as u64]
        .iter()
        .fold(splitmix64(master), |acc, &v| splitmix64(acc ^ v))
}
