//! Log density ratios between target and source from a classifier that predicts
//! the origin of a row (the odds trick):
//!
//! `ln dP2/dP1 (v) = ln(n_tr_1 / n_tr_2) + ln p(Z=2 | v) - ln p(Z=1 | v)`

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentedDataset, Label, LabelSpace, LabeledSample, Origin};
use crate::error::{Error, Result};
use crate::model::{cross_entropy, fit_logistic, FitInfo, NewtonOptions, ProbabilisticClassifier, PROB_CLIP};

/// Which part of a sample the origin classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureView {
    JointXY,
    XOnly,
    YOnly,
}

impl FeatureView {
    pub fn dim(self, feature_dim: usize, space: LabelSpace) -> usize {
        let label_dim = match space {
            LabelSpace::Categorical { classes } => classes,
            LabelSpace::Continuous => 1,
        };
        match self {
            FeatureView::JointXY => feature_dim + label_dim,
            FeatureView::XOnly => feature_dim,
            FeatureView::YOnly => label_dim,
        }
    }

    /// Features followed by the label (one-hot when categorical).
    pub fn project(self, features: &[f64], label: Label, space: LabelSpace) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(features.len(), space));
        if self != FeatureView::YOnly {
            out.extend_from_slice(features);
        }
        if self != FeatureView::XOnly {
            push_label(&mut out, label, space);
        }
        out
    }
}

fn push_label(out: &mut Vec<f64>, label: Label, space: LabelSpace) {
    match space {
        LabelSpace::Categorical { classes } => {
            let c = label.class().expect("categorical label");
            out.extend((0..classes).map(|k| if k == c { 1.0 } else { 0.0 }));
        }
        LabelSpace::Continuous => out.push(label.as_f64()),
    }
}

/// Optional compression of X to `h(x) = p(Z=2 | x)` before the joint fit.
#[derive(Debug, Clone)]
struct Reducer {
    x_classifier: Arc<dyn ProbabilisticClassifier>,
}

#[derive(Debug, Clone)]
pub struct RatioModel {
    view: FeatureView,
    label_space: LabelSpace,
    reducer: Option<Reducer>,
    classifier: Arc<dyn ProbabilisticClassifier>,
    n_tr_1: usize,
    n_tr_2: usize,
    fit_info: Option<FitInfo>,
}

impl RatioModel {
    /// Wraps an already fitted origin classifier (classes 0 = source, 1 = target).
    pub fn from_classifier(
        view: FeatureView,
        label_space: LabelSpace,
        classifier: Arc<dyn ProbabilisticClassifier>,
        n_tr_1: usize,
        n_tr_2: usize,
    ) -> Result<Self> {
        if n_tr_1 == 0 || n_tr_2 == 0 {
            return Err(Error::Usage("training counts must be positive".into()));
        }
        if classifier.class_ids() != [0, 1] {
            return Err(Error::Usage("origin classifier must have classes [0, 1]".into()));
        }
        Ok(RatioModel { view, label_space, reducer: None, classifier, n_tr_1, n_tr_2, fit_info: None })
    }

    pub fn view(&self) -> FeatureView {
        self.view
    }

    pub fn classifier(&self) -> &dyn ProbabilisticClassifier {
        self.classifier.as_ref()
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.n_tr_1, self.n_tr_2)
    }

    /// Newton record when the classifier was fitted here.
    pub fn fit_info(&self) -> Option<&FitInfo> {
        self.fit_info.as_ref()
    }

    pub fn is_reduced(&self) -> bool {
        self.reducer.is_some()
    }

    fn project(&self, features: &[f64], label: Label) -> Result<Vec<f64>> {
        match &self.reducer {
            None => Ok(self.view.project(features, label, self.label_space)),
            Some(r) => {
                let h = r.x_classifier.predict_proba(features)?[1];
                let mut out = vec![h];
                push_label(&mut out, label, self.label_space);
                Ok(out)
            }
        }
    }

    /// `(p(Z=1 | v), p(Z=2 | v))` for the projected sample.
    pub fn origin_proba(&self, features: &[f64], label: Label) -> Result<(f64, f64)> {
        let v = self.project(features, label)?;
        let p = self.classifier.predict_proba(&v)?;
        Ok((p[0], p[1]))
    }

    pub fn log_ratio_parts(&self, features: &[f64], label: Label) -> Result<f64> {
        let (p1, p2) = self.origin_proba(features, label)?;
        Ok((self.n_tr_1 as f64 / self.n_tr_2 as f64).ln() + p2.ln() - p1.ln())
    }

    pub fn log_ratio(&self, sample: &LabeledSample) -> Result<f64> {
        self.log_ratio_parts(&sample.features, sample.label)
    }

    /// True when either origin probability sits at the clipping bound.
    pub fn saturated(&self, sample: &LabeledSample) -> Result<bool> {
        let (p1, p2) = self.origin_proba(&sample.features, sample.label)?;
        let edge = PROB_CLIP * (1.0 + 1e-6);
        Ok(p1 <= edge || p2 <= edge)
    }

    /// Cross-entropy of the origin predictions on `data`.
    pub fn origin_cross_entropy(&self, data: &AugmentedDataset) -> Result<f64> {
        let inputs: Vec<Vec<f64>> = data
            .rows()
            .iter()
            .map(|r| self.project(&r.sample.features, r.sample.label))
            .collect::<Result<_>>()?;
        let targets: Vec<usize> = data.rows().iter().map(|r| r.origin.class_index()).collect();
        cross_entropy(self.classifier.as_ref(), &inputs, &targets)
    }
}

fn check_both_origins(train: &AugmentedDataset) -> Result<(usize, usize)> {
    let n1 = train.count(Origin::Source);
    let n2 = train.count(Origin::Target);
    if n1 == 0 || n2 == 0 {
        return Err(Error::Usage(format!(
            "ratio fit needs rows from both populations (got {n1} source, {n2} target)"
        )));
    }
    Ok((n1, n2))
}

/// Fits a logistic origin classifier on the `view` projection of `train`.
pub fn fit_ratio(train: &AugmentedDataset, view: FeatureView, opts: NewtonOptions) -> Result<RatioModel> {
    let (n1, n2) = check_both_origins(train)?;
    let space = train.label_space();
    let inputs: Vec<Vec<f64>> =
        train.rows().iter().map(|r| view.project(&r.sample.features, r.sample.label, space)).collect();
    let targets: Vec<usize> = train.rows().iter().map(|r| r.origin.class_index()).collect();
    let classifier = fit_logistic(&inputs, &targets, opts)?;
    let info = classifier.fit_info().clone();
    let mut model = RatioModel::from_classifier(view, space, Arc::new(classifier), n1, n2)?;
    model.fit_info = Some(info);
    Ok(model)
}

/// Joint model on `(h(x), y)` where `h` is the target probability of an X-only model.
pub fn fit_ratio_reduced(train: &AugmentedDataset, x_model: &RatioModel, opts: NewtonOptions) -> Result<RatioModel> {
    if x_model.view != FeatureView::XOnly || x_model.reducer.is_some() {
        return Err(Error::Usage("reduction needs a plain X-only ratio model".into()));
    }
    let (n1, n2) = check_both_origins(train)?;
    let mut model = RatioModel {
        view: FeatureView::JointXY,
        label_space: train.label_space(),
        reducer: Some(Reducer { x_classifier: Arc::clone(&x_model.classifier) }),
        classifier: Arc::clone(&x_model.classifier),
        n_tr_1: n1,
        n_tr_2: n2,
        fit_info: None,
    };
    let inputs: Vec<Vec<f64>> = train
        .rows()
        .iter()
        .map(|r| model.project(&r.sample.features, r.sample.label))
        .collect::<Result<_>>()?;
    let targets: Vec<usize> = train.rows().iter().map(|r| r.origin.class_index()).collect();
    let classifier = fit_logistic(&inputs, &targets, opts)?;
    model.fit_info = Some(classifier.fit_info().clone());
    model.classifier = Arc::new(classifier);
    Ok(model)
}

/// Picks the candidate whose origin predictions have the lowest cross-entropy on `validation`.
pub fn select_ratio_model(candidates: &[RatioModel], validation: &AugmentedDataset) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate models to select from".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let scores: Vec<f64> =
        candidates.iter().map(|c| c.origin_cross_entropy(validation)).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}
