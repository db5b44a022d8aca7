//! Probabilistic classifiers behind the odds trick and the conditional model used for
//! randomization tests.

mod conditional;
mod logistic;

pub use conditional::{fit_conditional, sample_conditional, ConditionalModel, GaussianHead, VARIANCE_FLOOR};
pub use logistic::{
    fit_logistic, gradient_check, newton, FitInfo, LogisticClassifier, LogisticObjective, NewtonOptions,
    DEFAULT_L2, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_CLIP, 1 - PROB_CLIP]`.
pub const PROB_CLIP: f64 = 1e-10;

/// Anything that maps an input vector to class probabilities.
///
/// Implement this to plug a different learner into the ratio and conditional models.
pub trait ProbabilisticClassifier: Send + Sync + std::fmt::Debug {
    fn input_dim(&self) -> usize;

    /// Class ids, in the order of the probability vector.
    fn class_ids(&self) -> &[usize];

    /// Probabilities, clipped into `[PROB_CLIP, 1 - PROB_CLIP]` and summing to one.
    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Clips each component into `[PROB_CLIP, 1 - PROB_CLIP]` and renormalizes.
pub fn clip_and_normalize(p: &mut [f64]) {
    let mut total = 0.0;
    for v in p.iter_mut() {
        *v = v.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        total += *v;
    }
    for v in p.iter_mut() {
        *v /= total;
    }
}

/// Mean negative log-probability of `targets` (class ids). Ids the model never
/// saw score as `PROB_CLIP`.
pub fn cross_entropy<C>(model: &C, inputs: &[Vec<f64>], targets: &[usize]) -> Result<f64>
where
    C: ProbabilisticClassifier + ?Sized,
{
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Config("validation set is empty or misaligned".into()));
    }
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let p = model.predict_proba(x)?;
        let pt = model.class_ids().iter().position(|c| c == t).map_or(PROB_CLIP, |i| p[i]);
        total -= pt.ln();
    }
    Ok(total / inputs.len() as f64)
}

/// Index of the candidate with the lowest validation cross-entropy, plus all scores.
/// Ties go to the earlier candidate.
pub fn select_model<C>(candidates: &[C], inputs: &[Vec<f64>], targets: &[usize]) -> Result<(usize, Vec<f64>)>
where
    C: ProbabilisticClassifier,
{
    if candidates.is_empty() {
        return Err(Error::Config("no candidate models to select from".into()));
    }
    let scores: Vec<f64> =
        candidates.iter().map(|c| cross_entropy(c, inputs, targets)).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixed(z: f64) -> LogisticClassifier {
        LogisticClassifier::from_weights(vec![0.0, z], 1, vec![0, 1], 0.0).unwrap()
    }

    #[test]
    fn single_candidate_wins() {
        let x = vec![vec![0.0]; 3];
        let (i, _) = select_model(&[fixed(0.3)], &x, &[0, 1, 1]).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn confidently_wrong_loses_to_uniform() {
        let x = vec![vec![0.0]; 4];
        let y = [0, 0, 0, 0];
        // class 1 with certainty: p(class 0) clips to 1e-10
        let (i, scores) = select_model(&[fixed(1e6), fixed(0.0)], &x, &y).unwrap();
        assert_eq!(i, 1);
        assert!((scores[0] - (-(1e-10f64).ln())).abs() < 1e-6, "{scores:?}");
        assert!((scores[0] - 23.02585).abs() < 1e-4);
        assert!((scores[1] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_first() {
        let x = vec![vec![1.0]; 2];
        let (i, _) = select_model(&[fixed(0.2), fixed(0.2)], &x, &[0, 1]).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn empty_validation_is_config_error() {
        assert!(matches!(select_model(&[fixed(0.0)], &[], &[]), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn probabilities_are_clipped_and_normalized(
            w in proptest::collection::vec(-60.0f64..60.0, 8),
            x in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let m = LogisticClassifier::from_weights(w[..8].to_vec(), 3, vec![0, 1, 2], 0.0).unwrap();
            let p = m.predict_proba(&x).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for v in p {
                prop_assert!((PROB_CLIP * (1.0 - 1e-9)..=1.0 - PROB_CLIP).contains(&v));
            }
        }
    }
}
