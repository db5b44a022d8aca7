//! Synthetic source/target generators and Monte Carlo power estimation.
//!
//! Experiment 1 (classification): `Y ~ Ber(1/2)` in the source and `Ber(1/2 + delta)`
//! in the target; `X | Y ~ N(Y 1_d, I)` in the source and `N((Y + gamma) 1_d, I)` in
//! the target.
//!
//! Experiment 2 (regression): `X ~ N(0, 1)` or `N(lambda, 1)`; `Y | X ~ N(X, 1)` or
//! `N(X + theta, 1)`; optionally padded with independent `N(0, 1)` feature columns.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledSample, Origin};
use crate::error::{Error, Result};
use crate::model::{ConditionalModel, GaussianHead, LogisticClassifier};
use crate::pipeline::{run_samples_with, DetectConfig};
use crate::rng::{self, StreamRng};
use crate::testing::Hypothesis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experiment1Params {
    pub delta: f64,
    pub gamma: f64,
    pub d: usize,
    /// Rows per population.
    pub n: usize,
}

impl Default for Experiment1Params {
    fn default() -> Self {
        Experiment1Params { delta: 0.0, gamma: 0.0, d: 3, n: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experiment2Params {
    pub lambda: f64,
    pub theta: f64,
    pub pad_dims: usize,
    pub n: usize,
}

impl Default for Experiment2Params {
    fn default() -> Self {
        Experiment2Params { lambda: 0.0, theta: 0.0, pad_dims: 0, n: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum Experiment {
    One(Experiment1Params),
    Two(Experiment2Params),
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        match self {
            Experiment::One(p) => {
                if p.delta.is_nan() || p.delta.abs() > 0.5 || !p.gamma.is_finite() {
                    return Err(Error::Config(format!("need |delta| <= 0.5 and finite gamma, got {p:?}")));
                }
                if p.d == 0 {
                    return Err(Error::Config("d must be at least 1".into()));
                }
            }
            Experiment::Two(p) => {
                if !p.lambda.is_finite() || !p.theta.is_finite() {
                    return Err(Error::Config(format!("lambda and theta must be finite, got {p:?}")));
                }
            }
        }
        if self.n() < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        match self {
            Experiment::One(p) => p.n,
            Experiment::Two(p) => p.n,
        }
    }

    /// Builds parameters from `key=value` pairs separated by commas.
    ///
    /// Keys: `delta`/`δ`, `gamma`/`γ`, `d` for experiment 1; `lambda`/`λ`,
    /// `theta`/`θ`, `pad` for experiment 2; `n` for both.
    pub fn parse(experiment: u8, params: &str) -> Result<Experiment> {
        let mut exp = match experiment {
            1 => Experiment::One(Experiment1Params::default()),
            2 => Experiment::Two(Experiment2Params::default()),
            other => return Err(Error::Config(format!("unknown experiment {other} (use 1 or 2)"))),
        };
        for pair in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
            let key = key.trim();
            let value = value.trim();
            let real = || value.parse::<f64>().map_err(|_| Error::Config(format!("`{key}`: not a number: `{value}`")));
            let count =
                || value.parse::<usize>().map_err(|_| Error::Config(format!("`{key}`: not a count: `{value}`")));
            match (&mut exp, key) {
                (Experiment::One(p), "delta" | "δ") => p.delta = real()?,
                (Experiment::One(p), "gamma" | "γ") => p.gamma = real()?,
                (Experiment::One(p), "d") => p.d = count()?,
                (Experiment::One(p), "n") => p.n = count()?,
                (Experiment::Two(p), "lambda" | "λ") => p.lambda = real()?,
                (Experiment::Two(p), "theta" | "θ") => p.theta = real()?,
                (Experiment::Two(p), "pad" | "pad_dims") => p.pad_dims = count()?,
                (Experiment::Two(p), "n") => p.n = count()?,
                _ => return Err(Error::Config(format!("unknown parameter `{key}` for experiment {experiment}"))),
            }
        }
        exp.validate()?;
        Ok(exp)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gen_experiment1<R: Rng + ?Sized>(p: &Experiment1Params, origin: Origin, rng: &mut R) -> Vec<LabeledSample> {
    let (prob, offset) = match origin {
        Origin::Source => (0.5, 0.0),
        Origin::Target => (0.5 + p.delta, p.gamma),
    };
    (0..p.n)
        .map(|_| {
            let y = usize::from(rng.random::<f64>() < prob);
            let mean = y as f64 + offset;
            let x = (0..p.d).map(|_| mean + normal(rng)).collect();
            LabeledSample { features: x, label: Label::Class(y) }
        })
        .collect()
}

pub fn gen_experiment2<R: Rng + ?Sized>(p: &Experiment2Params, origin: Origin, rng: &mut R) -> Vec<LabeledSample> {
    let (shift_x, shift_y) = match origin {
        Origin::Source => (0.0, 0.0),
        Origin::Target => (p.lambda, p.theta),
    };
    (0..p.n)
        .map(|_| {
            let x0: f64 = shift_x + normal(rng);
            let y = x0 + shift_y + normal(rng);
            let mut features = Vec::with_capacity(1 + p.pad_dims);
            features.push(x0);
            features.extend((0..p.pad_dims).map(|_| normal(rng)));
            LabeledSample { features, label: Label::Value(y) }
        })
        .collect()
}

pub fn generate<R: Rng + ?Sized>(exp: &Experiment, origin: Origin, rng: &mut R) -> Vec<LabeledSample> {
    match exp {
        Experiment::One(p) => gen_experiment1(p, origin, rng),
        Experiment::Two(p) => gen_experiment2(p, origin, rng),
    }
}

/// The source conditional `P(Y | X)` of an experiment, which is also the target
/// conditional whenever the experiment has no Y|X shift.
pub fn null_conditional(exp: &Experiment) -> ConditionalModel {
    match exp {
        // log-odds of Y = 1 given x: sum(x) - d/2
        Experiment::One(p) => {
            let mut w = vec![1.0; p.d];
            w.push(-(p.d as f64) / 2.0);
            ConditionalModel::Categorical(
                LogisticClassifier::from_weights(w, p.d, vec![0, 1], 0.0).expect("valid shape"),
            )
        }
        Experiment::Two(p) => {
            let mut coefficients = vec![0.0; 1 + p.pad_dims];
            coefficients[0] = 1.0;
            ConditionalModel::Gaussian(GaussianHead {
                coefficients,
                intercept: 0.0,
                variance: 1.0,
                dropped_columns: Vec::new(),
            })
        }
    }
}

/// Source and target samples drawn from their own streams of `seed`.
pub fn sample_pair(exp: &Experiment, seed: u64) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let mut rs: StreamRng = rng::substream(seed, rng::domain::SYNTH_SOURCE, 0);
    let mut rt: StreamRng = rng::substream(seed, rng::domain::SYNTH_TARGET, 0);
    (generate(exp, Origin::Source, &mut rs), generate(exp, Origin::Target, &mut rt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub hypothesis: Hypothesis,
    /// Rejection rate among runs that produced a p-value.
    pub power: f64,
    pub se: f64,
    pub n_mc: usize,
    pub rejections: usize,
    /// Runs where this hypothesis could not be tested.
    pub errors: usize,
}

/// Rejection rates over `n_mc` independent datasets, for every hypothesis in `detect`.
///
/// Run `r` draws its data and its test seed from `child_seed(seed, MONTE_CARLO, r)`.
pub fn estimate_power_all(exp: &Experiment, detect: &DetectConfig, n_mc: usize, seed: u64) -> Result<Vec<PowerEstimate>> {
    estimate_power_all_with(exp, detect, n_mc, seed, None)
}

/// Like [`estimate_power_all`], with a fixed conditional model for the Y|X test.
pub fn estimate_power_all_with(
    exp: &Experiment,
    detect: &DetectConfig,
    n_mc: usize,
    seed: u64,
    conditional: Option<&ConditionalModel>,
) -> Result<Vec<PowerEstimate>> {
    exp.validate()?;
    detect.validate()?;
    if n_mc == 0 {
        return Err(Error::Config("need at least one Monte Carlo run".into()));
    }
    let mut hypotheses = detect.hypotheses.clone();
    hypotheses.sort();
    hypotheses.dedup();

    let outcomes: Vec<Vec<Option<bool>>> = (0..n_mc as u64)
        .into_par_iter()
        .map(|r| {
            let run_seed = rng::child_seed(seed, rng::domain::MONTE_CARLO, r);
            let (source, target) = sample_pair(exp, run_seed);
            let cfg = DetectConfig { seed: run_seed, ..detect.clone() };
            match run_samples_with(source, target, &cfg, conditional) {
                Ok(report) => {
                    hypotheses.iter().map(|&h| report.test(h).and_then(|t| t.rejected())).collect()
                }
                Err(_) => vec![None; hypotheses.len()],
            }
        })
        .collect();

    Ok(hypotheses
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let rejections = outcomes.iter().filter(|o| o[k] == Some(true)).count();
            let errors = outcomes.iter().filter(|o| o[k].is_none()).count();
            let tested = n_mc - errors;
            let power = if tested == 0 { f64::NAN } else { rejections as f64 / tested as f64 };
            let se = if tested == 0 { f64::NAN } else { (power * (1.0 - power) / tested as f64).sqrt() };
            PowerEstimate { hypothesis: h, power, se, n_mc, rejections, errors }
        })
        .collect())
}

pub fn estimate_power(
    exp: &Experiment,
    hypothesis: Hypothesis,
    detect: &DetectConfig,
    n_mc: usize,
    seed: u64,
) -> Result<PowerEstimate> {
    let cfg = DetectConfig { hypotheses: vec![hypothesis], ..detect.clone() };
    Ok(estimate_power_all(exp, &cfg, n_mc, seed)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub experiment: Experiment,
    pub estimates: Vec<PowerEstimate>,
}

/// `k` evenly spaced points from `-half` to `half`.
pub fn symmetric_grid(half: f64, k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..k).map(|i| -half + 2.0 * half * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Power over a grid of the two shift parameters of `base`; default grids are 5 x 5
/// over `delta, gamma` in `[-0.5, 0.5]^2` or `lambda, theta` in `[-1, 1]^2`.
pub fn power_surface(
    base: &Experiment,
    grid: Option<(Vec<f64>, Vec<f64>)>,
    detect: &DetectConfig,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<SurfacePoint>> {
    let (first, second) = grid.unwrap_or_else(|| match base {
        Experiment::One(_) => (symmetric_grid(0.5, 5), symmetric_grid(0.5, 5)),
        Experiment::Two(_) => (symmetric_grid(1.0, 5), symmetric_grid(1.0, 5)),
    });
    let mut out = Vec::with_capacity(first.len() * second.len());
    for (i, &a) in first.iter().enumerate() {
        for (j, &b) in second.iter().enumerate() {
            let experiment = match *base {
                Experiment::One(p) => Experiment::One(Experiment1Params { delta: a, gamma: b, ..p }),
                Experiment::Two(p) => Experiment::Two(Experiment2Params { lambda: a, theta: b, ..p }),
            };
            let point_seed = rng::child_seed(seed, rng::domain::MONTE_CARLO, (i * second.len() + j) as u64 + (1 << 32));
            let estimates = estimate_power_all(&experiment, detect, n_mc, point_seed)?;
            out.push(SurfacePoint { experiment, estimates });
        }
    }
    Ok(out)
}
