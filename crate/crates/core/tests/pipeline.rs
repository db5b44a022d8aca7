use driftkit::data::{Label, LabeledSample};
use driftkit::model::{ConditionalModel, GaussianHead};
use driftkit::pipeline::{render_summary, report_json, run_samples, run_samples_with, DetectConfig, Outcome, RunConfig};
use driftkit::synth::{sample_pair, Experiment, Experiment1Params, Experiment2Params};
use driftkit::{Hypothesis, YEstimator};

fn exp1(delta: f64, gamma: f64, n: usize) -> Experiment {
    Experiment::One(Experiment1Params { delta, gamma, d: 3, n })
}

fn exp2(lambda: f64, theta: f64, n: usize) -> Experiment {
    Experiment::Two(Experiment2Params { lambda, theta, pad_dims: 0, n })
}

fn quick() -> DetectConfig {
    DetectConfig { test_fraction: 0.5, b: 20, ..Default::default() }
}

#[test]
fn report_survives_json_round_trip() {
    let (s, t) = sample_pair(&exp2(0.3, 0.2, 300), 1);
    let report = run_samples(s, t, &quick()).unwrap();
    let json = report_json(&report).unwrap();
    let back: driftkit::ShiftReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert!(json.ends_with("}\n"));
}

#[test]
fn split_counts_and_version_are_reported() {
    let (s, t) = sample_pair(&exp1(0.0, 0.0, 200), 2);
    let report = run_samples(s, t, &quick()).unwrap();
    let c = &report.diagnostics.split;
    assert_eq!(c.n_tr_1 + c.n_tr_2 + c.n_te_1 + c.n_te_2, 400);
    assert_eq!(c.n_te_1 + c.n_te_2, 200);
    assert_eq!(report.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(report.diagnostics.views.len(), 2, "plug-in label divergence needs no label model");
    assert_eq!(report.estimates.y_estimator, YEstimator::Plugin);
}

#[test]
fn estimates_near_zero_without_shift() {
    let (s, t) = sample_pair(&exp2(0.0, 0.0, 4000), 3);
    let e = run_samples(s, t, &quick()).unwrap().estimates;
    for v in [e.kl_joint, e.kl_x, e.kl_y, e.kl_x_given_y, e.kl_y_given_x] {
        assert!(v.abs() < 0.01, "{e:?}");
    }
}

#[test]
fn decomposition_is_exact_subtraction() {
    for seed in 0..5 {
        let (s, t) = sample_pair(&exp1(0.2, -0.3, 300), seed);
        let e = run_samples(s, t, &DetectConfig { seed, ..quick() }).unwrap().estimates;
        assert_eq!(e.kl_x_given_y, e.kl_joint - e.kl_y);
        assert_eq!(e.kl_y_given_x, e.kl_joint - e.kl_x);
    }
}

#[test]
fn tests_report_their_own_kl_and_statistic() {
    let (s, t) = sample_pair(&exp1(0.3, 0.0, 400), 4);
    let report = run_samples(s, t, &quick()).unwrap();
    for t in &report.tests {
        assert_eq!(t.kl, report.estimates.for_hypothesis(t.hypothesis));
        match &t.outcome {
            Outcome::Tested { statistic, p_value, b, .. } => {
                assert_eq!(*statistic, t.kl);
                assert_eq!(*b, 20);
                let k = p_value * 21.0;
                assert!((k - k.round()).abs() < 1e-9 && *p_value > 0.0 && *p_value <= 1.0);
            }
            Outcome::Error { message } => panic!("{}: {message}", t.hypothesis),
        }
    }
}

#[test]
fn disabled_binning_fails_only_the_x_given_y_test() {
    let (s, t) = sample_pair(&exp2(0.0, 0.0, 200), 5);
    let report = run_samples(s, t, &DetectConfig { num_bins: 0, ..quick() }).unwrap();
    for t in &report.tests {
        let is_error = matches!(t.outcome, Outcome::Error { .. });
        assert_eq!(is_error, t.hypothesis == Hypothesis::Cond1, "{t:?}");
    }
    assert!(report.diagnostics.bin_cut_points.is_none());
}

#[test]
fn too_many_bins_is_reported_per_test() {
    // 5 distinct label values, 40 bins requested
    let mk = |i: usize| LabeledSample::new(vec![((i * 7) % 40) as f64 * 0.1], Label::Value((i % 5) as f64)).unwrap();
    let s: Vec<_> = (0..20).map(mk).collect();
    let t: Vec<_> = (20..40).map(mk).collect();
    let report = run_samples(s, t, &DetectConfig { num_bins: 40, ..quick() }).unwrap();
    let c1 = report.test(Hypothesis::Cond1).unwrap();
    match &c1.outcome {
        Outcome::Error { message } => assert!(message.contains("bins"), "{message}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn supplied_conditional_with_wrong_width_is_reported() {
    let (s, t) = sample_pair(&exp2(0.0, 0.0, 200), 6);
    let head = GaussianHead { coefficients: vec![1.0, 0.0], intercept: 0.0, variance: 1.0, dropped_columns: vec![] };
    let report = run_samples_with(s, t, &quick(), Some(&ConditionalModel::Gaussian(head))).unwrap();
    assert!(matches!(report.test(Hypothesis::Cond2).unwrap().outcome, Outcome::Error { .. }));
}

#[test]
fn hypothesis_subset_is_sorted_and_deduplicated() {
    let (s, t) = sample_pair(&exp1(0.0, 0.0, 200), 7);
    let cfg = DetectConfig {
        hypotheses: vec![Hypothesis::Cond2, Hypothesis::FeatureF, Hypothesis::Cond2],
        ..quick()
    };
    let report = run_samples(s, t, &cfg).unwrap();
    let hs: Vec<_> = report.tests.iter().map(|t| t.hypothesis).collect();
    assert_eq!(hs, [Hypothesis::FeatureF, Hypothesis::Cond2]);
    let summary = render_summary(&report);
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn plugin_on_regression_is_a_config_error() {
    let (s, t) = sample_pair(&exp2(0.0, 0.0, 100), 8);
    let err = run_samples(s, t, &DetectConfig { y_estimator: Some(YEstimator::Plugin), ..quick() }).unwrap_err();
    assert_eq!(err.class(), driftkit::ErrorClass::Usage);
}

#[test]
fn l2_grid_selection_is_recorded_per_view() {
    let (s, t) = sample_pair(&exp2(0.5, 0.0, 300), 9);
    let grid = vec![1e-4, 1.0, 100.0];
    let report = run_samples(s, t, &DetectConfig { l2_grid: grid.clone(), ..quick() }).unwrap();
    assert_eq!(report.diagnostics.views.len(), 3);
    for v in &report.diagnostics.views {
        assert!(grid.contains(&v.l2), "{v:?}");
        assert!(v.converged);
        assert!(v.validation_ce.is_finite() && v.validation_ce > 0.0);
    }
}

#[test]
fn reduced_joint_model_still_detects_conditional_shift() {
    let (s, t) = sample_pair(&exp1(0.0, 0.8, 800), 10);
    let report = run_samples(s, t, &DetectConfig { reduce_joint: true, ..quick() }).unwrap();
    assert_eq!(report.test(Hypothesis::Cond1).unwrap().rejected(), Some(true));
}

#[test]
fn settings_require_the_data_keys() {
    let mut m = std::collections::BTreeMap::new();
    m.insert("source".to_owned(), "a.csv".to_owned());
    assert!(RunConfig::from_settings(&m).is_err());
    m.insert("target".into(), "b.csv".into());
    m.insert("label".into(), "y".into());
    m.insert("task".into(), "regression".into());
    m.insert("l2-grid".into(), "0.1, 1".into());
    let cfg = RunConfig::from_settings(&m).unwrap();
    assert_eq!(cfg.detect.l2_grid, vec![0.1, 1.0]);
    assert_eq!(cfg.detect, DetectConfig { l2_grid: vec![0.1, 1.0], ..Default::default() });
    m.insert("bins".into(), "1".into());
    assert!(RunConfig::from_settings(&m).is_err());
}

#[test]
fn identical_samples_rarely_reject() {
    let (s, _) = sample_pair(&exp1(0.0, 0.0, 2000), 11);
    let mut quiet = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let cfg = DetectConfig { b: 100, seed, ..Default::default() };
        let report = run_samples(s.clone(), s.clone(), &cfg).unwrap();
        quiet += usize::from(report.tests.iter().all(|t| t.rejected() == Some(false)));
    }
    assert!(quiet * 10 >= seeds as usize * 9, "{quiet} of {seeds} runs rejected nothing");
}
