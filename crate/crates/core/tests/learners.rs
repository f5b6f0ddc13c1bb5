use nalgebra::{DMatrix, DVector};
use oos_infer::learners::dnn::{self, clipped_norm, DnnArchitecture, DnnNetwork, DnnOptions};
use oos_infer::learners::lasso::{self, LassoConfig, LassoPenalty};
use oos_infer::learners::ols;
use oos_infer::learners::ridge::{self, normal_equation_residual, RidgePenalty};
use oos_infer::learners::Params;
use oos_infer::losses::LossSpec;
use oos_infer::series::DesignMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_design(n: usize, p: usize, intercept: bool, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    if intercept {
        x.column_mut(0).fill(1.0);
    }
    let y = DVector::from_fn(n, |i, _| {
        let signal: f64 = (0..p.min(3)).map(|j| x[(i, j)] * (j as f64 + 1.0)).sum();
        let e: f64 = StandardNormal.sample(&mut rng);
        signal + e
    });
    let names = (0..p).map(|j| format!("x{j}")).collect();
    DesignMatrix::new(x, y, names, intercept, 0).unwrap()
}

/// Largest violation of the lasso optimality conditions for
/// `mean (y − Xθ)² + λ‖θ‖₁` without intercept.
fn kkt_violation(d: &DesignMatrix, theta: &DVector<f64>, lambda: f64) -> f64 {
    let n = d.n_rows() as f64;
    let resid = d.target() - d.rows() * theta;
    let grad = d.rows().transpose() * resid * (2.0 / n);
    grad.iter()
        .zip(theta.iter())
        .map(|(g, t)| {
            if *t == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * t.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lasso_satisfies_kkt(seed in any::<u64>(), n in 20usize..80, p in 2usize..30, lambda in 0.01f64..1.0) {
        let d = gaussian_design(n, p, false, seed);
        let fit = lasso::fit(&d, LassoPenalty::Fixed(lambda), &LassoConfig::default()).unwrap();
        let theta = fit.theta().unwrap();
        prop_assert!(kkt_violation(&d, theta, lambda) < 1e-5);
    }

    #[test]
    fn lasso_large_lambda_gives_zero(seed in any::<u64>(), n in 20usize..60, p in 2usize..20) {
        let d = gaussian_design(n, p, false, seed);
        let grad = d.rows().transpose() * d.target() * (2.0 / n as f64);
        let lambda_max = grad.amax();
        let fit = lasso::fit(&d, LassoPenalty::Fixed(lambda_max * 1.001), &LassoConfig::default()).unwrap();
        prop_assert!(fit.theta().unwrap().iter().all(|t| *t == 0.0));
    }

    #[test]
    fn lasso_intercept_is_unpenalized(seed in any::<u64>(), n in 30usize..80, p in 3usize..15) {
        let d = gaussian_design(n, p, true, seed);
        let fit = lasso::fit(&d, LassoPenalty::Fixed(0.2), &LassoConfig::default()).unwrap();
        let resid = d.target() - d.rows() * fit.theta().unwrap();
        prop_assert!(resid.mean().abs() < 1e-8);
    }

    #[test]
    fn ridge_solves_normal_equations(seed in any::<u64>(), n in 10usize..60, p in 2usize..90, lambda in 1e-3f64..10.0, intercept in any::<bool>()) {
        let d = gaussian_design(n, p, intercept, seed);
        let fit = ridge::fit(&d, &RidgePenalty::Fixed(lambda)).unwrap();
        prop_assert!(normal_equation_residual(&d, fit.theta().unwrap(), lambda) < 1e-8);
    }

    #[test]
    fn ols_residuals_are_orthogonal(seed in any::<u64>(), n in 30usize..100, p in 1usize..10) {
        let d = gaussian_design(n, p, true, seed);
        let fit = ols::fit(&d).unwrap();
        let resid = d.target() - d.rows() * fit.theta().unwrap();
        let score = d.rows().transpose() * resid / n as f64;
        prop_assert!(score.amax() < 1e-9 * (1.0 + d.target().amax()));
    }

    #[test]
    fn clipped_norm_is_bounded(theta in prop::collection::vec(-1.0f64..1.0, 0..40), tau in 1e-3f64..0.5) {
        let v = clipped_norm(&theta, tau).unwrap();
        prop_assert!(v >= 0.0 && v <= theta.len() as f64 + 1e-12);
        let big = theta.iter().filter(|t| t.abs() >= tau).count() as f64;
        prop_assert!(v >= big);
    }

    #[test]
    fn network_output_is_clamped(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 3)) {
        let mut arch = DnnArchitecture::uniform(3, 2, 8);
        arch.output_bound = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DnnNetwork::initialize(arch, &mut rng).unwrap();
        prop_assert!(net.predict(&x).abs() <= 2.0);
    }
}

#[test]
fn ridge_matches_primal_when_wide() {
    let d = gaussian_design(15, 40, true, 3);
    let lambda = 0.5;
    let fit = ridge::fit(&d, &RidgePenalty::Fixed(lambda)).unwrap();
    let theta = fit.theta().unwrap();
    let n = d.n_rows() as f64;
    let x = d.rows();
    let mut a = x.transpose() * x / n;
    for j in 1..d.n_cols() {
        a[(j, j)] += lambda;
    }
    let b = x.transpose() * d.target() / n;
    let primal = a.lu().solve(&b).unwrap();
    assert!((theta - primal).amax() < 1e-8);
}

#[test]
fn dnn_training_stays_in_the_box() {
    let d = gaussian_design(120, 3, false, 9);
    let mut arch = DnnArchitecture::uniform(3, 2, 6);
    arch.weight_bound = 0.5;
    let opt = DnnOptions {
        epochs: 20,
        learning_rate: 0.05,
        ..DnnOptions::default()
    };
    let mut worst: f64 = 0.0;
    let fit = dnn::fit_observed(&d, &arch, &LossSpec::Mspe, &opt, 0.01, |net| {
        worst = worst.max(net.theta().iter().fold(0.0, |m, t| m.max(t.abs())));
    })
    .unwrap();
    assert!(worst <= 0.5);
    let Params::Network(net) = &fit.params else {
        panic!("expected a network");
    };
    assert_eq!(net.theta().len(), arch.n_params());
    assert_eq!(fit.diagnostics.objective_trace.len(), 20);
}

#[test]
fn dnn_fit_is_reproducible() {
    let d = gaussian_design(80, 3, false, 4);
    let arch = DnnArchitecture::uniform(3, 1, 5);
    let opt = DnnOptions {
        epochs: 10,
        seed: 77,
        ..DnnOptions::default()
    };
    let a = dnn::fit(&d, &arch, &LossSpec::Mspe, &opt, 0.0).unwrap();
    let b = dnn::fit(&d, &arch, &LossSpec::Mspe, &opt, 0.0).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn dnn_rejects_wrong_width() {
    let d = gaussian_design(30, 4, false, 1);
    let arch = DnnArchitecture::uniform(3, 1, 5);
    assert!(dnn::fit(&d, &arch, &LossSpec::Mspe, &DnnOptions::default(), 0.0).is_err());
}
