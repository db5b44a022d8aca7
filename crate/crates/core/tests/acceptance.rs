//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::process::Command;

use driftkit::data::{augment_and_split, write_csv, AugmentedDataset, Label, LabelSpace, LabeledSample, Origin, Row};
use driftkit::divergence::{compute_all, KlOptions, TargetSubset, YEstimator};
use driftkit::model::{fit_logistic, gradient_check, LogisticObjective, NewtonOptions};
use driftkit::pipeline::{run_samples, DetectConfig};
use driftkit::synth::{self, Experiment, Experiment1Params, Experiment2Params, PowerEstimate};
use driftkit::testing::{p_value, Hypothesis, TestOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const ALPHA: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn exp1(delta: f64, gamma: f64, n: usize) -> Experiment {
    Experiment::One(Experiment1Params { delta, gamma, d: 3, n })
}

fn exp2(lambda: f64, theta: f64, pad_dims: usize, n: usize) -> Experiment {
    Experiment::Two(Experiment2Params { lambda, theta, pad_dims, n })
}

/// 500 train + 500 test rows per population.
fn desk_config(hypotheses: &[Hypothesis]) -> DetectConfig {
    DetectConfig { test_fraction: 0.5, b: 100, alpha: ALPHA, hypotheses: hypotheses.to_vec(), ..Default::default() }
}

fn power_of(estimates: &[PowerEstimate], h: Hypothesis) -> f64 {
    let e = estimates.iter().find(|e| e.hypothesis == h).expect("hypothesis estimated");
    assert_eq!(e.errors, 0, "{h}: {} runs errored", e.errors);
    e.power
}

fn fmt_rates(estimates: &[PowerEstimate]) -> String {
    estimates.iter().map(|e| format!("{}={:.3}", e.hypothesis, e.power)).collect::<Vec<_>>().join(" ")
}

/// Null runs for both experiments with the true null conditional for Y|X.
fn null_batches(n_mc: usize, seed: u64) -> Vec<(&'static str, Vec<PowerEstimate>)> {
    let cfg = desk_config(&Hypothesis::ALL);
    [("exp1", exp1(0.0, 0.0, 1000)), ("exp2", exp2(0.0, 0.0, 0, 1000))]
        .into_iter()
        .map(|(name, exp)| {
            let q = synth::null_conditional(&exp);
            (name, synth::estimate_power_all_with(&exp, &cfg, n_mc, seed, Some(&q)).unwrap())
        })
        .collect()
}

fn criteria_1_and_2() -> (Outcome, Outcome) {
    let batches = null_batches(500, 101);
    let bound = ALPHA + 0.03;
    let mut ok1 = true;
    let mut ok2 = true;
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    for (name, est) in &batches {
        for h in [Hypothesis::TotalD, Hypothesis::FeatureF, Hypothesis::ResponseR, Hypothesis::Cond1] {
            let p = power_of(est, h);
            ok1 &= p <= bound;
            d1.push(format!("{name}:{h}={p:.3}"));
        }
        let p = power_of(est, Hypothesis::Cond2);
        ok2 &= p <= bound;
        d2.push(format!("{name}:C2={p:.3}"));
    }
    (
        outcome(ok1, format!("rejection rates <= {bound:.2}: {}", d1.join(" "))),
        outcome(ok2, format!("rejection rates <= {bound:.2}: {}", d2.join(" "))),
    )
}

fn criterion_3() -> Outcome {
    let batches = null_batches(200, 303);
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, est) in &batches {
        for e in est {
            ok &= (0.02..=0.10).contains(&e.power);
        }
        detail.push(format!("{name}: {}", fmt_rates(est)));
    }
    // informational: the same origin point with Y|X fitted on the training split
    let cfg = desk_config(&[Hypothesis::Cond2]);
    let fitted: Vec<String> = [("exp1", exp1(0.0, 0.0, 1000)), ("exp2", exp2(0.0, 0.0, 0, 1000))]
        .into_iter()
        .map(|(name, exp)| {
            let est = synth::estimate_power_all(&exp, &cfg, 200, 303).unwrap();
            format!("{name}:C2={:.3}", power_of(&est, Hypothesis::Cond2))
        })
        .collect();
    detail.push(format!("[fitted Y|X, not gated: {}]", fitted.join(" ")));
    outcome(ok, format!("all in [0.02, 0.10]; {}", detail.join("; ")))
}

fn criterion_4() -> Outcome {
    // 2500 train + 2500 test rows per population
    let cfg = DetectConfig { test_fraction: 0.5, b: 100, alpha: ALPHA, ..Default::default() };
    let n = 5000;
    let cases: [(&str, Experiment, Hypothesis, f64, Hypothesis); 4] = [
        ("delta=0.3", exp1(0.3, 0.0, n), Hypothesis::ResponseR, 0.9, Hypothesis::Cond1),
        ("gamma=0.5", exp1(0.0, 0.5, n), Hypothesis::Cond1, 0.9, Hypothesis::ResponseR),
        ("lambda=1", exp2(1.0, 0.0, 0, n), Hypothesis::FeatureF, 0.95, Hypothesis::Cond2),
        ("theta=1", exp2(0.0, 1.0, 0, n), Hypothesis::Cond2, 0.9, Hypothesis::FeatureF),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, (name, exp, strong, min_power, weak)) in cases.into_iter().enumerate() {
        let cfg = DetectConfig { hypotheses: vec![strong, weak], ..cfg.clone() };
        let est = synth::estimate_power_all(&exp, &cfg, 100, 400 + i as u64).unwrap();
        let (ps, pw) = (power_of(&est, strong), power_of(&est, weak));
        ok &= ps >= min_power && pw <= 0.15;
        detail.push(format!("{name}: {strong}={ps:.2} (>= {min_power}) {weak}={pw:.2} (<= 0.15)"));
    }
    outcome(ok, detail.join("; "))
}

/// `sum_y p2(y) ln(p2(y) / p1(y))` over a finite support.
fn bernoulli_kl(p2: f64, p1: f64) -> f64 {
    [(p2, p1), (1.0 - p2, 1.0 - p1)].iter().map(|(a, b)| a * (a / b).ln()).sum()
}

/// KL(N(mu, 1) || N(0, 1)) by composite Simpson integration on [-12, 12] + mu.
fn gaussian_kl_numeric(mu: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |x: f64| {
        let p = phi(x - mu);
        if p == 0.0 {
            0.0
        } else {
            p * (p / phi(x)).ln()
        }
    };
    let (a, b, m) = (mu - 12.0, mu + 12.0, 20_000);
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_5() -> Outcome {
    let start = std::time::Instant::now();
    let n = 20_000;
    let opts = KlOptions::default();

    let truth_x = gaussian_kl_numeric(0.24);
    let (s, t) = synth::sample_pair(&exp2(0.24, 0.0, 0, n), 505);
    let split = augment_and_split(s, t, 0.5, 505).unwrap();
    let kl_x = compute_all(&split, &opts).unwrap().kl_x;

    let truth_y = bernoulli_kl(0.6, 0.5);
    let (s, t) = synth::sample_pair(&exp1(0.1, 0.0, n), 506);
    let split = augment_and_split(s, t, 0.5, 506).unwrap();
    let est = compute_all(&split, &KlOptions { y_estimator: Some(YEstimator::Plugin), ..opts }).unwrap();
    let kl_y = est.kl_y;

    let secs = start.elapsed().as_secs_f64();
    let ok = (kl_x - truth_x).abs() <= 0.01 && (kl_y - truth_y).abs() <= 0.005 && secs <= 120.0;
    outcome(
        ok,
        format!(
            "kl_x={kl_x:.4} vs {truth_x:.4} (tol 0.01), plug-in kl_y={kl_y:.4} vs {truth_y:.4} (tol 0.005), {secs:.1}s"
        ),
    )
}

fn within_one_ulp(emitted: f64, recomputed: f64) -> bool {
    let ulp = f64::EPSILON * emitted.abs().max(recomputed.abs()).max(f64::MIN_POSITIVE);
    (emitted - recomputed).abs() <= ulp
}

fn decomposition_holds(json: &str) -> bool {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    let e = &v["estimates"];
    let g = |k: &str| e[k].as_f64().unwrap();
    within_one_ulp(g("kl_x_given_y"), g("kl_joint") - g("kl_y"))
        && within_one_ulp(g("kl_y_given_x"), g("kl_joint") - g("kl_x"))
}

fn criterion_6() -> Outcome {
    let exps = [
        exp1(0.0, 0.0, 400),
        exp1(0.2, 0.3, 400),
        exp1(-0.3, -0.4, 400),
        exp2(0.0, 0.0, 0, 400),
        exp2(0.5, -0.7, 2, 400),
        exp2(-1.0, 1.0, 0, 400),
    ];
    let cfg = DetectConfig { test_fraction: 0.5, b: 5, ..Default::default() };
    let mut checked = 0;
    let mut ok = true;
    for (i, exp) in exps.iter().enumerate() {
        for rep in 0..10u64 {
            let (s, t) = synth::sample_pair(exp, 600 + 10 * i as u64 + rep);
            let report = run_samples(s, t, &DetectConfig { seed: rep, ..cfg.clone() }).unwrap();
            ok &= decomposition_holds(&driftkit::pipeline::report_json(&report).unwrap());
            checked += 1;
        }
    }
    outcome(ok, format!("{checked} reports checked"))
}

fn criterion_7() -> Outcome {
    let cfg = desk_config(&[Hypothesis::FeatureF]);
    let p1 = synth::estimate_power(&exp2(0.24, 0.0, 0, 1000), Hypothesis::FeatureF, &cfg, 200, 707).unwrap().power;
    let p10 = synth::estimate_power(&exp2(0.24, 0.0, 9, 1000), Hypothesis::FeatureF, &cfg, 200, 707).unwrap().power;
    let drop = p1 - p10;
    outcome(drop <= 0.25, format!("F power d=1 {p1:.3}, d=10 {p10:.3}, drop {drop:.3} (<= 0.25)"))
}

fn criterion_8() -> Outcome {
    let b = 100;
    let draws = 100_000usize;
    let per_dataset = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut pvals = Vec::with_capacity(draws);
    for ds in 0..draws / per_dataset {
        let rows: Vec<Row> = (0..20)
            .map(|i| Row {
                sample: LabeledSample::new(vec![StandardNormal.sample(&mut rng)], Label::Class(0)).unwrap(),
                origin: if i < 8 { Origin::Target } else { Origin::Source },
            })
            .collect();
        let test = AugmentedDataset::from_rows(rows, 1, LabelSpace::Categorical { classes: 1 }).unwrap();
        let stat = |s: &TargetSubset| {
            Ok(s.target.iter().map(|&i| test.rows()[i].sample.features[0]).sum::<f64>() / s.target.len() as f64)
        };
        for k in 0..per_dataset {
            let opts = TestOptions { b, noise_variance: 1e-10, seed: (ds * per_dataset + k) as u64 };
            pvals.push(p_value(&stat, &test, Hypothesis::FeatureF, opts, None, None).unwrap().p_value);
        }
    }
    let on_grid = pvals.iter().all(|&p| {
        let k = (p * (b + 1) as f64).round();
        (1.0..=(b + 1) as f64).contains(&k) && p == k / (b + 1) as f64
    });
    let mut worst = f64::NEG_INFINITY;
    for a in 1..100 {
        let alpha = a as f64 / 100.0;
        let cdf = pvals.iter().filter(|&&p| p <= alpha).count() as f64 / draws as f64;
        worst = worst.max(cdf - alpha);
    }
    outcome(on_grid && worst <= 0.01, format!("{draws} p-values, on grid: {on_grid}, max P(p<=a)-a = {worst:.4}"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for _ in 0..20 {
        let n = rng.random_range(5..30);
        let d = rng.random_range(1..5);
        let k = rng.random_range(2..5);
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        y[0] = 0;
        y[1] = k - 1;
        let l2 = 10f64.powf(rng.random_range(-4.0..0.0));
        let obj = LogisticObjective::new(&x, &y, k, l2).unwrap();
        let theta: Vec<f64> = (0..obj.num_params()).map(|_| rng.random_range(-2.0..2.0)).collect();
        worst = worst.max(gradient_check(&obj, &theta));
        let fit = fit_logistic(&x, &y, NewtonOptions { l2, ..Default::default() }).unwrap();
        monotone &= fit.fit_info().loss_history.windows(2).all(|w| w[1] <= w[0]);
    }
    outcome(worst < 1e-5 && monotone, format!("max gradient rel. error {worst:.2e}, Newton monotone: {monotone}"))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = synth::sample_pair(&exp2(0.3, 0.3, 1, 600), 1010);
    let src = dir.path().join("source.csv");
    let tgt = dir.path().join("target.csv");
    write_csv(&src, &s, "y").unwrap();
    write_csv(&tgt, &t, "y").unwrap();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_driftkit"))
            .args(["run", "--label", "y", "--task", "regression", "--seed", "17", "--source"])
            .arg(&src)
            .arg("--target")
            .arg(&tgt)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.json"), run("b.json"));
    let decomposition = decomposition_holds(std::str::from_utf8(&a).unwrap());
    outcome(a == b && decomposition, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let start = std::time::Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let (c1, c2) = criteria_1_and_2();
    results.push((1, "type-I control D/F/R/C1", c1));
    results.push((2, "type-I control C2, well-specified Y|X", c2));
    results.push((3, "nominal level at the origin", criterion_3()));
    results.push((4, "power and isolation", criterion_4()));
    results.push((5, "KL estimator consistency", criterion_5()));
    results.push((6, "decomposition identity", criterion_6()));
    results.push((7, "dimension robustness", criterion_7()));
    results.push((8, "p-value mechanics", criterion_8()));
    results.push((9, "numerical core", criterion_9()));
    results.push((10, "determinism", criterion_10()));

    let mut failed = 0;
    for (id, name, o) in &results {
        println!("criterion {id:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed in {:.0}s", results.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
