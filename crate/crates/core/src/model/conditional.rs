//! Estimated conditional law of the label given the features.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{fit_logistic, LogisticClassifier, NewtonOptions, ProbabilisticClassifier};
use crate::data::{AugmentedDataset, Label, Task};
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Share of the training rows used for the regression fit; the rest estimate the residual variance.
const REGRESSION_FIT_SHARE: f64 = 0.75;

/// Linear mean with Gaussian residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub variance: f64,
    /// Constant feature columns whose coefficient was pinned to zero.
    pub dropped_columns: Vec<usize>,
}

impl GaussianHead {
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn intercept_only(&self) -> bool {
        self.dropped_columns.len() == self.coefficients.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionalModel {
    Categorical(LogisticClassifier),
    Gaussian(GaussianHead),
}

impl ConditionalModel {
    pub fn input_dim(&self) -> usize {
        match self {
            ConditionalModel::Categorical(c) => c.input_dim(),
            ConditionalModel::Gaussian(g) => g.coefficients.len(),
        }
    }

    /// Human-readable notes about degenerate fits.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            ConditionalModel::Categorical(c) => {
                if !c.fit_info().converged {
                    out.push(format!(
                        "conditional classifier did not converge (gradient norm {:.3e})",
                        c.fit_info().gradient_norm
                    ));
                }
            }
            ConditionalModel::Gaussian(g) => {
                if g.intercept_only() {
                    out.push("conditional regression fell back to an intercept-only model (no feature varies)".into());
                } else if !g.dropped_columns.is_empty() {
                    out.push(format!(
                        "conditional regression pinned constant feature columns {:?} to zero",
                        g.dropped_columns
                    ));
                }
                if g.variance <= VARIANCE_FLOOR {
                    out.push("conditional residual variance hit the floor".into());
                }
            }
        }
        out
    }
}

/// Fits the label-given-features model on all training rows, both populations.
///
/// Classification uses multinomial logistic regression. Regression fits least
/// squares on a random 75% of the rows and the residual variance on the other 25%.
pub fn fit_conditional<R: Rng + ?Sized>(
    train: &AugmentedDataset,
    opts: NewtonOptions,
    rng: &mut R,
) -> Result<ConditionalModel> {
    if train.is_empty() {
        return Err(Error::Fit("empty training set".into()));
    }
    let inputs: Vec<Vec<f64>> = train.rows().iter().map(|r| r.sample.features.clone()).collect();
    match train.task() {
        Task::Classification => {
            let labels: Vec<usize> =
                train.rows().iter().map(|r| r.sample.label.class().expect("categorical label")).collect();
            Ok(ConditionalModel::Categorical(fit_logistic(&inputs, &labels, opts)?))
        }
        Task::Regression => {
            let y: Vec<f64> = train.rows().iter().map(|r| r.sample.label.as_f64()).collect();
            fit_gaussian(&inputs, &y, rng).map(ConditionalModel::Gaussian)
        }
    }
}

fn fit_gaussian<R: Rng + ?Sized>(inputs: &[Vec<f64>], y: &[f64], rng: &mut R) -> Result<GaussianHead> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::Fit("regression needs at least two training rows".into()));
    }
    let d = inputs[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_fit = ((REGRESSION_FIT_SHARE * n as f64).round() as usize).clamp(1, n - 1);
    let (fit_idx, hold_idx) = order.split_at(n_fit);

    let nf = n_fit as f64;
    let x_mean: Vec<f64> = (0..d).map(|j| fit_idx.iter().map(|&i| inputs[i][j]).sum::<f64>() / nf).collect();
    let y_mean = fit_idx.iter().map(|&i| y[i]).sum::<f64>() / nf;

    let mut kept = Vec::new();
    let mut dropped_columns = Vec::new();
    for (j, &first) in inputs[fit_idx[0]].iter().enumerate() {
        if fit_idx.iter().all(|&i| inputs[i][j] == first) {
            dropped_columns.push(j);
        } else {
            kept.push(j);
        }
    }

    let mut coefficients = vec![0.0; d];
    if !kept.is_empty() {
        let design = DMatrix::from_fn(n_fit, kept.len(), |r, c| inputs[fit_idx[r]][kept[c]] - x_mean[kept[c]]);
        let response = DVector::from_fn(n_fit, |r, _| y[fit_idx[r]] - y_mean);
        let beta = design
            .svd(true, true)
            .solve(&response, 1e-12)
            .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
        for (c, &j) in kept.iter().enumerate() {
            coefficients[j] = beta[c];
        }
    }
    let intercept = y_mean - coefficients.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    let mut head = GaussianHead { coefficients, intercept, variance: 0.0, dropped_columns };
    let rss: f64 = hold_idx.iter().map(|&i| (y[i] - head.mean(&inputs[i])).powi(2)).sum();
    head.variance = (rss / hold_idx.len() as f64).max(VARIANCE_FLOOR);
    if !head.variance.is_finite() || !head.intercept.is_finite() {
        return Err(Error::Fit("non-finite regression estimates".into()));
    }
    Ok(head)
}

/// One draw from the fitted conditional law at `x`.
pub fn sample_conditional<R: Rng + ?Sized>(model: &ConditionalModel, x: &[f64], rng: &mut R) -> Result<Label> {
    match model {
        ConditionalModel::Categorical(c) => {
            let p = c.predict_proba(x)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return Ok(Label::Class(c.class_ids()[i]));
                }
            }
            Ok(Label::Class(*c.class_ids().last().expect("at least two classes")))
        }
        ConditionalModel::Gaussian(g) => {
            if x.len() != g.coefficients.len() {
                return Err(Error::Usage(format!(
                    "input has dimension {}, model expects {}",
                    x.len(),
                    g.coefficients.len()
                )));
            }
            let z: f64 = rng.sample(StandardNormal);
            Ok(Label::Value(g.mean(x) + g.variance.sqrt() * z))
        }
    }
}
