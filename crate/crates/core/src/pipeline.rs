//! End-to-end run: ingest, split, fit, estimate, test, report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, make_binning, LabeledSample, Origin, SplitDatasets, Task};
use crate::divergence::{plugin_terms, KLEstimates, KlOptions, RatioModels, ShiftStatistic, YEstimator};
use crate::error::{Error, Result};
use crate::model::{fit_conditional, ConditionalModel, NewtonOptions, DEFAULT_L2, DEFAULT_MAX_ITER, DEFAULT_TOL, PROB_CLIP};
use crate::ratio::FeatureView;
use crate::rng;
use crate::testing::{p_value, Hypothesis, HypothesisStatistic, TestOptions, DEFAULT_NOISE_VARIANCE};

/// Statistical settings of a run, independent of where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub test_fraction: f64,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Label bins for the X|Y test on continuous labels; 0 disables binning.
    pub num_bins: usize,
    pub l2: f64,
    pub l2_grid: Vec<f64>,
    pub hypotheses: Vec<Hypothesis>,
    pub noise_variance: f64,
    pub y_estimator: Option<YEstimator>,
    pub reduce_joint: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            test_fraction: 0.1,
            b: 100,
            alpha: 0.05,
            seed: 0,
            num_bins: 10,
            l2: DEFAULT_L2,
            l2_grid: Vec::new(),
            hypotheses: Hypothesis::ALL.to_vec(),
            noise_variance: DEFAULT_NOISE_VARIANCE,
            y_estimator: None,
            reduce_joint: false,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.b < 1 {
            return bad("B must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.num_bins == 1 {
            return bad("bins must be 0 (disabled) or at least 2".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) || self.l2_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("l2 penalties must be finite and non-negative".into());
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return bad(format!("noise variance must be positive, got {}", self.noise_variance));
        }
        if self.hypotheses.is_empty() {
            return bad("no hypotheses requested".into());
        }
        if self.max_iter == 0 || self.tol.is_nan() || self.tol <= 0.0 {
            return bad("max_iter and tol must be positive".into());
        }
        Ok(())
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions { l2: self.l2, max_iter: self.max_iter, tol: self.tol }
    }

    /// Requested hypotheses in canonical order, without repeats.
    fn ordered_hypotheses(&self) -> Vec<Hypothesis> {
        let mut h = self.hypotheses.clone();
        h.sort();
        h.dedup();
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    pub label_column: String,
    pub task: Task,
    pub detect: DetectConfig,
}

/// Keys accepted by [`parse_settings`] and [`RunConfig::from_settings`].
pub const SETTING_KEYS: &[&str] = &[
    "source",
    "target",
    "label",
    "task",
    "seed",
    "b",
    "alpha",
    "test-fraction",
    "bins",
    "l2",
    "l2-grid",
    "hypotheses",
    "noise-variance",
    "y-estimator",
    "reduce-joint",
    "max-iter",
    "tol",
];

fn normalize_key(key: &str) -> String {
    let key = key.trim().to_ascii_lowercase().replace('_', "-");
    match key.as_str() {
        "test-frac" => "test-fraction".to_owned(),
        "shifts" => "hypotheses".to_owned(),
        _ => key,
    }
}

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_settings(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
        let key = normalize_key(key);
        if !SETTING_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("config line {}: unknown key `{key}`", n + 1)));
        }
        out.insert(key, value.trim().to_owned());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    /// Builds a run from string settings; unset keys take their defaults.
    pub fn from_settings(settings: &BTreeMap<String, String>) -> Result<RunConfig> {
        let required = |k: &str| {
            settings.get(k).cloned().ok_or_else(|| Error::Config(format!("missing required setting `{k}`")))
        };
        let mut detect = DetectConfig::default();
        for (key, value) in settings {
            match normalize_key(key).as_str() {
                "source" | "target" | "label" | "task" => {}
                "seed" => detect.seed = parse_value(key, value)?,
                "b" => detect.b = parse_value(key, value)?,
                "alpha" => detect.alpha = parse_value(key, value)?,
                "test-fraction" => detect.test_fraction = parse_value(key, value)?,
                "bins" => detect.num_bins = parse_value(key, value)?,
                "l2" => detect.l2 = parse_value(key, value)?,
                "l2-grid" => {
                    detect.l2_grid = value
                        .split(',')
                        .filter(|v| !v.trim().is_empty())
                        .map(|v| parse_value(key, v))
                        .collect::<Result<_>>()?
                }
                "hypotheses" => detect.hypotheses = Hypothesis::parse_list(value)?,
                "noise-variance" => detect.noise_variance = parse_value(key, value)?,
                "y-estimator" => detect.y_estimator = Some(parse_value(key, value)?),
                "reduce-joint" => detect.reduce_joint = parse_value(key, value)?,
                "max-iter" => detect.max_iter = parse_value(key, value)?,
                "tol" => detect.tol = parse_value(key, value)?,
                other => return Err(Error::Config(format!("unknown setting `{other}`"))),
            }
        }
        let config = RunConfig {
            source_path: PathBuf::from(required("source")?),
            target_path: PathBuf::from(required("target")?),
            label_column: required("label")?,
            task: parse_value("task", &required("task")?)?,
            detect,
        };
        config.detect.validate()?;
        Ok(config)
    }
}

/// The configuration as echoed in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub source: Option<String>,
    pub target: Option<String>,
    pub label_column: Option<String>,
    pub task: Task,
    pub detect: DetectConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Tested { statistic: f64, p_value: f64, reject: bool, b: usize, noise_variance: f64, seed: u64 },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub hypothesis: Hypothesis,
    pub kl: f64,
    pub outcome: Outcome,
}

impl HypothesisReport {
    pub fn p_value(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Tested { p_value, .. } => Some(p_value),
            Outcome::Error { .. } => None,
        }
    }

    pub fn rejected(&self) -> Option<bool> {
        match self.outcome {
            Outcome::Tested { reject, .. } => Some(reject),
            Outcome::Error { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub n_tr_1: usize,
    pub n_tr_2: usize,
    pub n_te_1: usize,
    pub n_te_2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDiagnostics {
    pub view: FeatureView,
    pub l2: f64,
    /// Origin cross-entropy on the test rows.
    pub validation_ce: f64,
    /// Share of target test rows whose origin probability hit the clip.
    pub saturation_rate: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub split: SplitCounts,
    pub views: Vec<ViewDiagnostics>,
    /// Share of target test rows saturated in at least one view.
    pub saturation_rate: f64,
    pub conditional_variance: Option<f64>,
    pub bin_cut_points: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub version: String,
    pub seed: u64,
    pub config: ConfigEcho,
    pub estimates: KLEstimates,
    pub tests: Vec<HypothesisReport>,
    pub diagnostics: Diagnostics,
}

impl ShiftReport {
    pub fn test(&self, h: Hypothesis) -> Option<&HypothesisReport> {
        self.tests.iter().find(|t| t.hypothesis == h)
    }
}

/// Runs the whole flow on two CSV files.
pub fn run(config: &RunConfig) -> Result<ShiftReport> {
    config.detect.validate()?;
    let (source, target, _) =
        data::load_pair(&config.source_path, &config.target_path, &config.label_column, config.task)
            .map_err(|e| e.at_stage("ingest"))?;
    let echo = ConfigEcho {
        source: Some(config.source_path.display().to_string()),
        target: Some(config.target_path.display().to_string()),
        label_column: Some(config.label_column.clone()),
        task: config.task,
        detect: config.detect.clone(),
    };
    execute(source, target, echo, None)
}

/// Runs the whole flow on in-memory samples; the task follows the label kind.
pub fn run_samples(source: Vec<LabeledSample>, target: Vec<LabeledSample>, detect: &DetectConfig) -> Result<ShiftReport> {
    run_samples_with(source, target, detect, None)
}

/// Like [`run_samples`], but the Y|X randomization test draws from `conditional`
/// instead of a model fitted on the training split.
pub fn run_samples_with(
    source: Vec<LabeledSample>,
    target: Vec<LabeledSample>,
    detect: &DetectConfig,
    conditional: Option<&ConditionalModel>,
) -> Result<ShiftReport> {
    let task = match source.first().map(|s| s.label) {
        Some(data::Label::Value(_)) => Task::Regression,
        _ => Task::Classification,
    };
    let echo = ConfigEcho { source: None, target: None, label_column: None, task, detect: detect.clone() };
    execute(source, target, echo, conditional)
}

fn execute(
    source: Vec<LabeledSample>,
    target: Vec<LabeledSample>,
    echo: ConfigEcho,
    supplied: Option<&ConditionalModel>,
) -> Result<ShiftReport> {
    let cfg = &echo.detect;
    cfg.validate()?;
    let split = data::augment_and_split(source, target, cfg.test_fraction, cfg.seed)
        .map_err(|e| e.at_stage("split"))?;
    if split.train.task() != echo.task {
        return Err(Error::Config(format!(
            "labels look like {:?} but the task is {:?}",
            split.train.task(),
            echo.task
        )));
    }
    let kl_opts = KlOptions {
        newton: cfg.newton(),
        y_estimator: cfg.y_estimator,
        reduce_joint: cfg.reduce_joint,
        l2_grid: cfg.l2_grid.clone(),
        seed: cfg.seed,
    };
    let models = RatioModels::fit(&split.train, &kl_opts).map_err(|e| e.at_stage("fit ratio models"))?;
    let stat = ShiftStatistic::new(&models, &split.test).map_err(|e| e.at_stage("estimate"))?;
    let estimates = stat.observed_estimates().map_err(|e| e.at_stage("estimate"))?;

    let hypotheses = cfg.ordered_hypotheses();
    let mut warnings = Vec::new();
    if 1.0 / (cfg.b + 1) as f64 > cfg.alpha {
        warnings.push(format!("with B = {} the smallest p-value is 1/{}, above alpha = {}", cfg.b, cfg.b + 1, cfg.alpha));
    }

    let conditional: Option<std::result::Result<ConditionalModel, String>> =
        hypotheses.contains(&Hypothesis::Cond2).then(|| {
            if let Some(m) = supplied {
                if m.input_dim() != split.train.dim() {
                    return Err(format!(
                        "supplied conditional model expects {} features, data has {}",
                        m.input_dim(),
                        split.train.dim()
                    ));
                }
                return Ok(m.clone());
            }
            let mut r = rng::substream(cfg.seed, rng::domain::CONDITIONAL, 0);
            fit_conditional(&split.train, cfg.newton(), &mut r).map_err(|e| e.to_string())
        });
    if let Some(Ok(m)) = &conditional {
        warnings.extend(m.warnings());
    }

    let binning = match (hypotheses.contains(&Hypothesis::Cond1), split.test.task()) {
        (true, Task::Regression) => Some(if cfg.num_bins == 0 {
            Err("label binning is disabled (bins = 0); X|Y cannot be tested on a continuous label".to_owned())
        } else {
            let labels: Vec<f64> = split.test.rows().iter().map(|r| r.sample.label.as_f64()).collect();
            make_binning(&labels, cfg.num_bins).map_err(|e| e.to_string())
        }),
        _ => None,
    };

    let test_opts = TestOptions { b: cfg.b, noise_variance: cfg.noise_variance, seed: cfg.seed };
    let mut tests = Vec::with_capacity(hypotheses.len());
    for &h in &hypotheses {
        let kl = estimates.for_hypothesis(h);
        let prepared: std::result::Result<(Option<&ConditionalModel>, Option<&data::BinningRule>), String> = match h {
            Hypothesis::Cond2 => match conditional.as_ref().expect("fitted when requested") {
                Ok(m) => Ok((Some(m), None)),
                Err(e) => Err(format!("conditional model: {e}")),
            },
            Hypothesis::Cond1 => match &binning {
                Some(Ok(rule)) => Ok((None, Some(rule))),
                Some(Err(e)) => Err(e.clone()),
                None => Ok((None, None)),
            },
            _ => Ok((None, None)),
        };
        let outcome = match prepared {
            Err(message) => Outcome::Error { message },
            Ok((cond, bins)) => {
                let statistic = HypothesisStatistic { stat: &stat, hypothesis: h };
                match p_value(&statistic, &split.test, h, test_opts, cond, bins) {
                    Ok(r) => Outcome::Tested {
                        statistic: r.statistic,
                        p_value: r.p_value,
                        reject: r.p_value <= cfg.alpha,
                        b: r.b,
                        noise_variance: r.noise_variance,
                        seed: r.seed,
                    },
                    Err(e) => Outcome::Error { message: e.to_string() },
                }
            }
        };
        tests.push(HypothesisReport { hypothesis: h, kl, outcome });
    }

    let diagnostics = diagnose(&split, &models, &stat, &conditional, &binning, warnings)?;
    Ok(ShiftReport {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: cfg.seed,
        config: echo,
        estimates,
        tests,
        diagnostics,
    })
}

fn diagnose(
    split: &SplitDatasets,
    models: &RatioModels,
    stat: &ShiftStatistic<'_>,
    conditional: &Option<std::result::Result<ConditionalModel, String>>,
    binning: &Option<std::result::Result<data::BinningRule, String>>,
    mut warnings: Vec<String>,
) -> Result<Diagnostics> {
    let test = &split.test;
    let targets = test.indices_of(Origin::Target);
    let (joint_lr, x_lr, y_lr) = stat.cached_log_ratios();
    let cached = [Some(joint_lr), Some(x_lr), y_lr];

    let mut any_saturated = vec![false; targets.len()];
    let mut views = Vec::new();
    for (model, lr) in models.views().zip(cached.into_iter().flatten()) {
        let (n1, n2) = model.counts();
        let offset = (n1 as f64 / n2 as f64).ln();
        let edge = ((1.0 - PROB_CLIP) / PROB_CLIP).ln() * (1.0 - 1e-6);
        let mut saturated = 0usize;
        for (k, &i) in targets.iter().enumerate() {
            if (lr[i] - offset).abs() >= edge {
                saturated += 1;
                any_saturated[k] = true;
            }
        }
        let info = model.fit_info().map(|i| (i.iterations, i.converged));
        let l2 = models.l2.iter().find(|(v, _)| *v == model.view()).map_or(f64::NAN, |(_, l)| *l);
        let d = ViewDiagnostics {
            view: model.view(),
            l2,
            validation_ce: model.origin_cross_entropy(test)?,
            saturation_rate: saturated as f64 / targets.len() as f64,
            iterations: info.as_ref().map_or(0, |i| i.0),
            converged: info.as_ref().is_none_or(|i| i.1),
        };
        if !d.converged {
            warnings.push(format!("{:?} origin classifier did not converge in {} iterations", d.view, d.iterations));
        }
        if saturated > 0 {
            warnings.push(format!(
                "{:?}: {saturated} target test rows hit probability clipping; the target may not be absolutely continuous w.r.t. the source",
                d.view
            ));
        }
        views.push(d);
    }

    if models.y_estimator == YEstimator::Plugin {
        let classes = |o: Origin| -> Vec<usize> {
            test.rows().iter().filter(|r| r.origin == o).filter_map(|r| r.sample.label.class()).collect()
        };
        for (label, term) in plugin_terms(&classes(Origin::Source), &classes(Origin::Target)) {
            if term.abs() >= 1.0 {
                warnings.push(format!("plug-in term for label {label} is large ({term:.4})"));
            }
        }
    }

    let conditional_variance = match conditional {
        Some(Ok(ConditionalModel::Gaussian(g))) => Some(g.variance),
        _ => None,
    };
    let bin_cut_points = match binning {
        Some(Ok(rule)) => Some(rule.cut_points().to_vec()),
        _ => None,
    };

    Ok(Diagnostics {
        split: SplitCounts { n_tr_1: split.n_tr_1, n_tr_2: split.n_tr_2, n_te_1: split.n_te_1(), n_te_2: split.n_te_2() },
        views,
        saturation_rate: any_saturated.iter().filter(|&&s| s).count() as f64 / targets.len() as f64,
        conditional_variance,
        bin_cut_points,
        warnings,
    })
}

pub fn report_json(report: &ShiftReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Usage(format!("serializing report: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(report: &ShiftReport, path: &Path) -> Result<()> {
    let json = report_json(report)?;
    std::fs::write(path, json).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn read_report(path: &Path) -> Result<ShiftReport> {
    let text =
        std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("parsing report {}: {e}", path.display())))
}

/// Plain-text table: hypothesis, KL estimate, p-value, decision.
pub fn render_summary(report: &ShiftReport) -> String {
    let alpha = report.config.detect.alpha;
    let mut out = String::new();
    let _ = writeln!(out, "{:<4}{:<26}{:>14}{:>11}  decision (alpha = {alpha})", "", "hypothesis", "KL", "p-value");
    for t in &report.tests {
        let (p, decision) = match &t.outcome {
            Outcome::Tested { p_value, reject, .. } => {
                (format!("{p_value:.4}"), if *reject { "reject" } else { "do not reject" }.to_owned())
            }
            Outcome::Error { message } => ("-".to_owned(), format!("error: {message}")),
        };
        let _ = writeln!(
            out,
            "{:<4}{:<26}{:>14.6}{:>11}  {}",
            t.hypothesis.code(),
            t.hypothesis.description(),
            t.kl,
            p,
            decision
        );
    }
    out
}
