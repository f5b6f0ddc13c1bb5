use oos_infer::learners::Params;
use oos_infer::mdh::{
    ap_max_lag, auto_portmanteau, fit_mdh_learner, mdh_test, self_normalized_statistic, MdhLearner, MdhMethod,
    MdhOptions,
};
use oos_infer::series::{FeatureConfig, Series, SplitPlan};
use oos_infer::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let e = normals(n + 100, seed);
    let mut y = vec![0.0; e.len()];
    for t in 1..e.len() {
        y[t] = phi * y[t - 1] + e[t];
    }
    y.split_off(100)
}

fn small_features() -> FeatureConfig {
    FeatureConfig {
        lags: 4,
        interactions: true,
        power_degrees: vec![2],
    }
}

#[test]
fn portmanteau_size_on_white_noise() {
    let reps = 1000;
    let rejections = (0..reps)
        .filter(|&r| auto_portmanteau(&normals(1000, 10_000 + r), None, 0.05).unwrap().reject)
        .count();
    let size = rejections as f64 / reps as f64;
    assert!((size - 0.05).abs() <= 0.02, "size {size}");
}

#[test]
fn portmanteau_picks_one_lag_under_the_null() {
    let reps = 200;
    let ones = (0..reps)
        .filter(|&r| auto_portmanteau(&normals(2000, 50_000 + r), None, 0.05).unwrap().selected_lag == Some(1))
        .count();
    assert!(ones as f64 / reps as f64 >= 0.9, "{ones} of {reps}");
}

#[test]
fn portmanteau_detects_ar1() {
    let r = auto_portmanteau(&ar1(500, 0.3, 3), None, 0.05).unwrap();
    assert!(r.reject);
    assert_eq!(r.method, MdhMethod::AutoPortmanteau);
    assert!(r.selected_lag.unwrap() <= ap_max_lag(500));
}

#[test]
fn portmanteau_guards() {
    assert!(matches!(
        auto_portmanteau(&normals(49, 1), None, 0.05),
        Err(Error::InsufficientData { needed: 50, got: 49 })
    ));
    assert!(auto_portmanteau(&[2.0; 80], None, 0.05).is_err());
    assert!(auto_portmanteau(&normals(80, 1), None, 1.0).is_err());
    let mut xs = normals(80, 1);
    xs[7] = f64::INFINITY;
    assert!(auto_portmanteau(&xs, None, 0.05).is_err());
}

#[test]
fn mdh_detects_ar1_mean() {
    let series = Series::new("ar", ar1(1500, 0.4, 8)).unwrap();
    let plan = SplitPlan::from_ratio(series.len(), 1.0).unwrap();
    let r = mdh_test(&series, &plan, &small_features(), &MdhLearner::ridge_cv(), &MdhOptions::default()).unwrap();
    assert!(r.reject, "p {}", r.p_value);
    assert_eq!(r.n_oos, plan.out_of_sample());
    assert_eq!(r.feature_dim, Some(small_features().column_count()));
    assert_eq!(r.config_hash.len(), 16);
}

#[test]
fn mdh_needs_enough_test_points() {
    let series = Series::new("short", normals(100, 2)).unwrap();
    let plan = SplitPlan::from_in_sample(100, 80).unwrap();
    let err = mdh_test(&series, &plan, &small_features(), &MdhLearner::Ols, &MdhOptions::default());
    assert!(matches!(err, Err(Error::InsufficientData { needed: 30, .. })));
}

#[test]
fn mdh_rejects_bad_alpha_and_mismatched_plan() {
    let series = Series::new("x", normals(300, 2)).unwrap();
    let plan = SplitPlan::from_ratio(300, 1.0).unwrap();
    let opt = MdhOptions {
        alpha: 0.0,
        ..MdhOptions::default()
    };
    assert!(mdh_test(&series, &plan, &small_features(), &MdhLearner::Ols, &opt).is_err());
    let other = SplitPlan::from_ratio(299, 1.0).unwrap();
    assert!(mdh_test(&series, &other, &small_features(), &MdhLearner::Ols, &MdhOptions::default()).is_err());
}

#[test]
fn self_normalized_statistic_guards() {
    assert!(self_normalized_statistic(&[]).is_err());
    assert!(matches!(self_normalized_statistic(&[0.0; 10]), Err(Error::DegenerateEstimator)));
    let (t, p) = self_normalized_statistic(&[1.0; 16]).unwrap();
    assert!((t - 4.0).abs() < 1e-12);
    assert!(p < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn statistic_ignores_units(seed in any::<u64>(), c in 0.001f64..1000.0, ridge in any::<bool>()) {
        let xs = ar1(400, 0.2, seed);
        let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
        let plan = SplitPlan::from_ratio(400, 1.0).unwrap();
        let learner = if ridge { MdhLearner::ridge_cv() } else { MdhLearner::Ols };
        let run = |v: Vec<f64>| {
            let s = Series::new("x", v).unwrap();
            mdh_test(&s, &plan, &small_features(), &learner, &MdhOptions::default()).unwrap()
        };
        let (a, b) = (run(xs.clone()), run(scaled));
        prop_assert!((a.statistic - b.statistic).abs() < 1e-6 * (1.0 + a.statistic.abs()));
    }

    #[test]
    fn fit_never_sees_test_rows(seed in any::<u64>(), standardize in any::<bool>(), pi in prop::sample::select(vec![1.0, 0.25])) {
        let xs = normals(300, seed);
        let plan = SplitPlan::from_ratio(300, pi).unwrap();
        let mut perturbed = xs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for v in &mut perturbed[plan.in_sample()..] {
            *v = rng.random_range(-100.0..100.0);
        }
        let opt = MdhOptions { standardize, ..MdhOptions::default() };
        let fit = |v: Vec<f64>| {
            let s = Series::new("x", v).unwrap();
            fit_mdh_learner(&s, &plan, &small_features(), &MdhLearner::ridge_cv(), &opt).unwrap().0
        };
        let (a, b) = (fit(xs), fit(perturbed));
        let (Params::Linear(ta), Params::Linear(tb)) = (&a.params, &b.params) else {
            panic!("linear fit expected");
        };
        prop_assert_eq!(ta.as_slice(), tb.as_slice());
        prop_assert_eq!(a.lambda_used, b.lambda_used);
    }

    #[test]
    fn portmanteau_ignores_location_and_scale(seed in any::<u64>(), a in -50.0f64..50.0, c in 0.01f64..100.0) {
        let xs = normals(200, seed);
        let ys: Vec<f64> = xs.iter().map(|x| a + c * x).collect();
        let r1 = auto_portmanteau(&xs, None, 0.05).unwrap();
        let r2 = auto_portmanteau(&ys, None, 0.05).unwrap();
        prop_assert_eq!(r1.selected_lag, r2.selected_lag);
        prop_assert!((r1.statistic - r2.statistic).abs() < 1e-6 * (1.0 + r1.statistic));
    }
}
