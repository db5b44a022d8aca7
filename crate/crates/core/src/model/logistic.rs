//! L2-penalized multinomial logistic regression fitted by damped Newton steps.
//!
//! Parameters are a `(K-1) x (d+1)` row-major matrix: row `k` holds the weights
//! and intercept of class `k+1`, with class 0 as the zero-score reference. For
//! `K = 2` this is ordinary binary logistic regression. The objective is
//!
//! `mean_i [logsumexp(s_i) - s_i[y_i]] + (l2 / 2) * sum ||w_k||^2`
//!
//! with intercepts left unpenalized.

use nalgebra::{DMatrix, DVector};

use super::{clip_and_normalize, ProbabilisticClassifier};
use crate::error::{Error, Result};

pub const DEFAULT_L2: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { l2: DEFAULT_L2, max_iter: DEFAULT_MAX_ITER, tol: DEFAULT_TOL }
    }
}

/// The penalized cross-entropy over a fixed design.
#[derive(Debug, Clone, Copy)]
pub struct LogisticObjective<'a> {
    inputs: &'a [Vec<f64>],
    /// Class indices in `0..num_classes`.
    targets: &'a [usize],
    num_classes: usize,
    dim: usize,
    l2: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(inputs: &'a [Vec<f64>], targets: &'a [usize], num_classes: usize, l2: f64) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Fit(format!(
                "need matching non-empty inputs and targets (got {} and {})",
                inputs.len(),
                targets.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Fit("need at least two classes".into()));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::Fit(format!("l2 must be finite and non-negative, got {l2}")));
        }
        let dim = inputs[0].len();
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Fit("inputs have inconsistent dimensions".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= num_classes) {
            return Err(Error::Fit(format!("target {t} outside 0..{num_classes}")));
        }
        Ok(LogisticObjective { inputs, targets, num_classes, dim, l2 })
    }

    pub fn num_params(&self) -> usize {
        (self.num_classes - 1) * (self.dim + 1)
    }

    fn stride(&self) -> usize {
        self.dim + 1
    }

    /// Class probabilities (unclipped) into `probs`; returns logsumexp of scores.
    fn probabilities(&self, theta: &[f64], x: &[f64], probs: &mut [f64]) -> f64 {
        scores_into(theta, self.dim, x, probs);
        softmax_in_place(probs)
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let mut probs = vec![0.0; self.num_classes];
        let mut total = 0.0;
        for (x, &y) in self.inputs.iter().zip(self.targets) {
            scores_into(theta, self.dim, x, &mut probs);
            let s_y = probs[y];
            total += log_sum_exp(&probs) - s_y;
        }
        total / self.inputs.len() as f64 + self.penalty(theta)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let stride = self.stride();
        let sq: f64 = theta
            .chunks(stride)
            .map(|row| row[..self.dim].iter().map(|w| w * w).sum::<f64>())
            .sum();
        0.5 * self.l2 * sq
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let stride = self.stride();
        let n = self.inputs.len() as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut probs = vec![0.0; self.num_classes];
        for (x, &y) in self.inputs.iter().zip(self.targets) {
            self.probabilities(theta, x, &mut probs);
            for k in 1..self.num_classes {
                let r = (probs[k] - if y == k { 1.0 } else { 0.0 }) / n;
                let row = &mut grad[(k - 1) * stride..k * stride];
                for (g, xj) in row.iter_mut().zip(x) {
                    *g += r * xj;
                }
                row[self.dim] += r;
            }
        }
        for (k, row) in grad.chunks_mut(stride).enumerate() {
            for j in 0..self.dim {
                row[j] += self.l2 * theta[k * stride + j];
            }
        }
        grad
    }

    /// Loss, gradient and Hessian in one pass.
    fn second_order(&self, theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let stride = self.stride();
        let p = self.num_params();
        let n = self.inputs.len() as f64;
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        let mut probs = vec![0.0; self.num_classes];
        let mut xt = vec![1.0; stride];
        let mut loss = 0.0;
        for (x, &y) in self.inputs.iter().zip(self.targets) {
            let lse = self.probabilities(theta, x, &mut probs);
            xt[..self.dim].copy_from_slice(x);
            // score of the observed class = lse + ln p_y, recomputed exactly
            let s_y = if y == 0 {
                0.0
            } else {
                let row = &theta[(y - 1) * stride..y * stride];
                row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[self.dim]
            };
            loss += lse - s_y;
            for k in 1..self.num_classes {
                let r = probs[k] - if y == k { 1.0 } else { 0.0 };
                for a in 0..stride {
                    grad[(k - 1) * stride + a] += r * xt[a];
                }
                for l in k..self.num_classes {
                    let c = if k == l { probs[k] * (1.0 - probs[k]) } else { -probs[k] * probs[l] };
                    if c == 0.0 {
                        continue;
                    }
                    let (r0, c0) = ((k - 1) * stride, (l - 1) * stride);
                    for a in 0..stride {
                        let ca = c * xt[a];
                        let base = (r0 + a) * p + c0;
                        for b in 0..stride {
                            hess[base + b] += ca * xt[b];
                        }
                    }
                }
            }
        }
        loss = loss / n + self.penalty(theta);
        for g in &mut grad {
            *g /= n;
        }
        for h in &mut hess {
            *h /= n;
        }
        // mirror the upper block triangle
        for k in 1..self.num_classes {
            for l in (k + 1)..self.num_classes {
                let (r0, c0) = ((k - 1) * stride, (l - 1) * stride);
                for a in 0..stride {
                    for b in 0..stride {
                        hess[(c0 + b) * p + r0 + a] = hess[(r0 + a) * p + c0 + b];
                    }
                }
            }
        }
        for k in 0..(self.num_classes - 1) {
            for j in 0..self.dim {
                let i = k * stride + j;
                grad[i] += self.l2 * theta[i];
                hess[i * p + i] += self.l2;
            }
        }
        (loss, DVector::from_vec(grad), DMatrix::from_row_slice(p, p, &hess))
    }
}

fn scores_into(theta: &[f64], dim: usize, x: &[f64], out: &mut [f64]) {
    let stride = dim + 1;
    out[0] = 0.0;
    for (k, row) in theta.chunks(stride).enumerate() {
        out[k + 1] = row[..dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[dim];
    }
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Turns scores into probabilities in place and returns their logsumexp.
fn softmax_in_place(scores: &mut [f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        z += *s;
    }
    for s in scores.iter_mut() {
        *s /= z;
    }
    m + z.ln()
}

/// Convergence record of a Newton fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Penalized loss after each accepted step, starting from the initial point.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClassifier {
    /// Row-major `(K-1) x (d+1)`.
    weights: Vec<f64>,
    dim: usize,
    class_ids: Vec<usize>,
    l2: f64,
    info: FitInfo,
}

impl LogisticClassifier {
    /// A classifier with given parameters (no fitting history).
    pub fn from_weights(weights: Vec<f64>, dim: usize, class_ids: Vec<usize>, l2: f64) -> Result<Self> {
        if class_ids.len() < 2 || weights.len() != (class_ids.len() - 1) * (dim + 1) {
            return Err(Error::Usage("weight shape does not match classes and dimension".into()));
        }
        Ok(LogisticClassifier {
            weights,
            dim,
            class_ids,
            l2,
            info: FitInfo { iterations: 0, converged: true, gradient_norm: 0.0, loss_history: Vec::new() },
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn fit_info(&self) -> &FitInfo {
        &self.info
    }

    /// Raw linear scores, reference class first.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.class_ids.len()];
        scores_into(&self.weights, self.dim, x, &mut out);
        Ok(out)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Usage(format!("input has dimension {}, model expects {}", x.len(), self.dim)));
        }
        Ok(())
    }
}

impl ProbabilisticClassifier for LogisticClassifier {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.scores(x)?;
        softmax_in_place(&mut p);
        clip_and_normalize(&mut p);
        Ok(p)
    }
}

/// Fits a logistic model of `labels` (arbitrary class ids) on `features`.
///
/// Non-convergence within `max_iter` is recorded in [`FitInfo`], not an error.
pub fn fit_logistic(
    features: &[Vec<f64>],
    labels: &[usize],
    opts: NewtonOptions,
) -> Result<LogisticClassifier> {
    let mut class_ids: Vec<usize> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.len() < 2 {
        return Err(Error::Fit(format!(
            "logistic regression needs at least two classes, found {}",
            class_ids.len()
        )));
    }
    let targets: Vec<usize> = labels
        .iter()
        .map(|l| class_ids.binary_search(l).expect("class id present"))
        .collect();
    let objective = LogisticObjective::new(features, &targets, class_ids.len(), opts.l2)?;
    let dim = objective.dim;
    let (weights, info) = newton(&objective, opts.max_iter, opts.tol)?;
    Ok(LogisticClassifier { weights, dim, class_ids, l2: opts.l2, info })
}

/// Newton's method with step halving; each accepted step does not increase the loss.
pub fn newton(objective: &LogisticObjective<'_>, max_iter: usize, tol: f64) -> Result<(Vec<f64>, FitInfo)> {
    let p = objective.num_params();
    let mut theta = vec![0.0; p];
    let (mut loss, mut grad, mut hess) = objective.second_order(&theta);
    if !loss.is_finite() {
        return Err(Error::Fit(format!("non-finite loss {loss} at the starting point")));
    }
    let mut history = vec![loss];
    let mut iterations = 0;
    while iterations < max_iter {
        if grad.amax() < tol {
            break;
        }
        let step = newton_direction(hess, &grad);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let l = objective.loss(&candidate);
            if l.is_finite() && l <= loss {
                accepted = Some(candidate);
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some(next) = accepted else {
            // no descent left at machine precision
            let (_, g, _) = objective.second_order(&theta);
            grad = g;
            break;
        };
        theta = next;
        let (l, g, h) = objective.second_order(&theta);
        if !l.is_finite() {
            return Err(Error::Fit(format!("non-finite loss {l} after {iterations} Newton steps")));
        }
        loss = l;
        grad = g;
        hess = h;
        history.push(loss);
    }
    let gradient_norm = grad.amax();
    let info = FitInfo { iterations, converged: gradient_norm < tol, gradient_norm, loss_history: history };
    Ok((theta, info))
}

fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let scale = hess.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut h = hess.clone();
        if jitter > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += jitter;
            }
        }
        if let Some(chol) = h.cholesky() {
            let d = chol.solve(&(-grad));
            if d.iter().all(|v| v.is_finite()) {
                return d;
            }
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 100.0 };
    }
    -grad.clone()
}

/// Largest relative gap between the analytic gradient and central differences
/// (`h = 1e-5`), with each gap scaled by `max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(objective: &LogisticObjective<'_>, theta: &[f64]) -> f64 {
    const H: f64 = 1e-5;
    let analytic = objective.gradient(theta);
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        probe[i] = theta[i] + H;
        let up = objective.loss(&probe);
        probe[i] = theta[i] - H;
        let down = objective.loss(&probe);
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * H);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_constant_features_give_half() {
        let x = vec![vec![1.0, -2.0]; 10];
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let m = fit_logistic(&x, &y, NewtonOptions { l2: 0.1, ..Default::default() }).unwrap();
        let p = m.predict_proba(&[1.0, -2.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert!(m.fit_info().converged);
    }

    /// Grid search over (w, b) on the same penalized loss.
    fn grid_oracle(x: &[f64], y: &[usize], l2: f64) -> (f64, f64, f64) {
        let loss = |w: f64, b: f64| {
            let mut s = 0.0;
            for (&xi, &yi) in x.iter().zip(y) {
                let z = w * xi + b;
                let lse = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                s += lse - if yi == 1 { z } else { 0.0 };
            }
            s / x.len() as f64 + 0.5 * l2 * w * w
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=400 {
                let w = -5.0 + 10.0 * i as f64 / 400.0;
                let b = -5.0 + 10.0 * j as f64 / 400.0;
                let l = loss(w, b);
                if l < best.0 {
                    best = (l, w, b);
                }
            }
        }
        best
    }

    #[test]
    fn separable_one_dimensional_data_with_unit_penalty() {
        let xs = [-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0];
        let ys = [0, 0, 0, 0, 1, 1, 1, 1];
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let m = fit_logistic(&x, &ys, NewtonOptions { l2: 1.0, ..Default::default() }).unwrap();
        assert!(m.weights().iter().all(|w| w.is_finite()));
        let (oracle_loss, w_star, b_star) = grid_oracle(&xs, &ys, 1.0);
        let targets: Vec<usize> = ys.to_vec();
        let obj = LogisticObjective::new(&x, &targets, 2, 1.0).unwrap();
        let fitted_loss = obj.loss(m.weights());
        assert!(fitted_loss <= oracle_loss + 1e-12, "{fitted_loss} vs grid {oracle_loss}");
        assert!((m.weights()[0] - w_star).abs() < 0.03 && (m.weights()[1] - b_star).abs() < 0.03);
        let ce: f64 = x
            .iter()
            .zip(&ys)
            .map(|(xi, &yi)| -m.predict_proba(xi).unwrap()[yi].ln())
            .sum::<f64>()
            / xs.len() as f64;
        assert!(ce < std::f64::consts::LN_2, "training CE {ce}");
    }

    #[test]
    fn single_class_is_an_error() {
        let x = vec![vec![0.0]; 4];
        assert!(matches!(fit_logistic(&x, &[0, 0, 0, 0], NewtonOptions::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let m = LogisticClassifier::from_weights(vec![0.0; 6], 1, vec![3, 5, 9, 11], 0.0).unwrap();
        let p = m.predict_proba(&[7.0]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn sigmoid_of_ln_three() {
        let m = LogisticClassifier::from_weights(vec![0.0, 3f64.ln()], 1, vec![0, 1], 0.0).unwrap();
        let p = m.predict_proba(&[5.0]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let z = LogisticClassifier::from_weights(vec![0.0, 0.0], 1, vec![0, 1], 0.0).unwrap();
        assert_eq!(z.predict_proba(&[1.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let m = LogisticClassifier::from_weights(vec![0.0; 3], 2, vec![0, 1], 0.0).unwrap();
        assert!(matches!(m.predict_proba(&[1.0]), Err(Error::Usage(_))));
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>, usize, f64, Vec<f64>) {
        let n = rng.random_range(5..=50);
        let d = rng.random_range(1..=5);
        let k = rng.random_range(2..=4);
        let l2 = rng.random_range(0.0..2.0);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let theta: Vec<f64> = (0..(k - 1) * (d + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, y, k, l2, theta)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let (x, y, k, l2, theta) = random_instance(&mut rng);
            let obj = LogisticObjective::new(&x, &y, k, l2).unwrap();
            let dev = gradient_check(&obj, &theta);
            assert!(dev < 1e-5, "deviation {dev}");
        }
    }

    #[test]
    fn hessian_agrees_with_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y, k, l2, theta) = random_instance(&mut rng);
        let obj = LogisticObjective::new(&x, &y, k, l2).unwrap();
        let (_, _, h) = obj.second_order(&theta);
        let eps = 1e-6;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            up[i] += eps;
            let mut down = theta.clone();
            down[i] -= eps;
            let (gu, gd) = (obj.gradient(&up), obj.gradient(&down));
            for j in 0..theta.len() {
                let fd = (gu[j] - gd[j]) / (2.0 * eps);
                assert!((fd - h[(j, i)]).abs() < 1e-6, "H[{j},{i}] {} vs {fd}", h[(j, i)]);
            }
        }
    }

    #[test]
    fn intercept_gradient_vanishes_at_symmetric_point() {
        let x: Vec<Vec<f64>> = [-1.0, 1.0, -2.0, 2.0].iter().map(|&v| vec![v]).collect();
        let y = [0, 1, 1, 0];
        let obj = LogisticObjective::new(&x, &y, 2, 0.3).unwrap();
        let g = obj.gradient(&[0.0, 0.0]);
        assert!(g[1].abs() < 1e-15);
    }

    #[test]
    fn heavy_penalty_dominates_gradient() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.1, 1.0 - i as f64 * 0.05]).collect();
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let l2 = 1e8;
        let obj = LogisticObjective::new(&x, &y, 2, l2).unwrap();
        let theta = [0.3, -0.7, 0.1];
        let g = obj.gradient(&theta);
        assert!(((g[0] - l2 * 0.3) / (l2 * 0.3)).abs() < 1e-7);
        assert!(((g[1] + l2 * 0.7) / (l2 * 0.7)).abs() < 1e-7);
    }

    #[test]
    fn newton_losses_never_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (x, y, _, l2, _) = random_instance(&mut rng);
            let Ok(m) = fit_logistic(&x, &y, NewtonOptions { l2: l2 * 0.01, ..Default::default() }) else {
                continue;
            };
            let h = &m.fit_info().loss_history;
            assert!(h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
        }
    }

    #[test]
    fn multinomial_recovers_class_frequencies_without_signal() {
        let x = vec![vec![0.0]; 60];
        let y: Vec<usize> = (0..60).map(|i| [4, 4, 4, 7, 7, 9][i % 6]).collect();
        let m = fit_logistic(&x, &y, NewtonOptions::default()).unwrap();
        assert_eq!(m.class_ids(), &[4, 7, 9]);
        let p = m.predict_proba(&[0.0]).unwrap();
        for (pi, want) in p.iter().zip([0.5, 1.0 / 3.0, 1.0 / 6.0]) {
            assert!((pi - want).abs() < 1e-8, "{p:?}");
        }
    }
}
