//! KL statistics over the target rows of the test set.
//!
//! Joint, feature and (classifier-based) label divergences are empirical means of
//! log ratios over target test rows. For discrete labels the label divergence is
//! the plug-in estimate from test label frequencies. The conditional divergences
//! are defined by subtraction:
//!
//! * `kl_x_given_y = kl_joint - kl_y`
//! * `kl_y_given_x = kl_joint - kl_x`

use serde::{Deserialize, Serialize};

use crate::data::{AugmentedDataset, Label, LabelSpace, LabeledSample, Origin, SplitDatasets, Task};
use crate::error::{Error, Result};
use crate::model::NewtonOptions;
use crate::ratio::{fit_ratio, fit_ratio_reduced, select_ratio_model, FeatureView, RatioModel};
use crate::rng;
use crate::testing::Hypothesis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YEstimator {
    Plugin,
    Classifier,
}

impl std::str::FromStr for YEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plugin" | "plug-in" => Ok(YEstimator::Plugin),
            "classifier" => Ok(YEstimator::Classifier),
            other => Err(Error::Config(format!("unknown label estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLEstimates {
    pub kl_joint: f64,
    pub kl_x: f64,
    pub kl_y: f64,
    pub kl_x_given_y: f64,
    pub kl_y_given_x: f64,
    pub y_estimator: YEstimator,
}

impl KLEstimates {
    pub fn from_marginals(kl_joint: f64, kl_x: f64, kl_y: f64, y_estimator: YEstimator) -> Self {
        KLEstimates {
            kl_joint,
            kl_x,
            kl_y,
            kl_x_given_y: kl_joint - kl_y,
            kl_y_given_x: kl_joint - kl_x,
            y_estimator,
        }
    }

    pub fn for_hypothesis(&self, h: Hypothesis) -> f64 {
        match h {
            Hypothesis::TotalD => self.kl_joint,
            Hypothesis::FeatureF => self.kl_x,
            Hypothesis::ResponseR => self.kl_y,
            Hypothesis::Cond1 => self.kl_x_given_y,
            Hypothesis::Cond2 => self.kl_y_given_x,
        }
    }
}

/// Mean log ratio over target test rows. Negative values are returned as-is.
pub fn estimate_kl<'a, I>(model: &RatioModel, test_target: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a LabeledSample>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in test_target {
        sum += model.log_ratio(s)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Usage("no target test rows to average over".into()));
    }
    Ok(sum / n as f64)
}

fn label_counts(labels: impl IntoIterator<Item = usize>, counts: &mut Vec<usize>) -> usize {
    counts.iter_mut().for_each(|c| *c = 0);
    let mut n = 0;
    for l in labels {
        if l >= counts.len() {
            counts.resize(l + 1, 0);
        }
        counts[l] += 1;
        n += 1;
    }
    n
}

/// Plug-in sum over target classes; `+inf` when some target class is absent from the source.
fn plugin_from_counts(source: &[usize], n1: usize, target: &[usize], n2: usize) -> f64 {
    let mut kl = 0.0;
    for (k, &c2) in target.iter().enumerate() {
        if c2 == 0 {
            continue;
        }
        let c1 = source.get(k).copied().unwrap_or(0);
        if c1 == 0 {
            return f64::INFINITY;
        }
        let p2 = c2 as f64 / n2 as f64;
        let p1 = c1 as f64 / n1 as f64;
        kl += p2 * (p2 / p1).ln();
    }
    kl
}

/// Plug-in KL between empirical label frequencies of target and source.
pub fn plugin_kl_y(test_source_labels: &[usize], test_target_labels: &[usize]) -> Result<f64> {
    if test_source_labels.is_empty() || test_target_labels.is_empty() {
        return Err(Error::Usage("plug-in estimate needs labels from both populations".into()));
    }
    let (mut s, mut t) = (Vec::new(), Vec::new());
    let n1 = label_counts(test_source_labels.iter().copied(), &mut s);
    let n2 = label_counts(test_target_labels.iter().copied(), &mut t);
    for (k, &c2) in t.iter().enumerate() {
        if c2 > 0 && s.get(k).copied().unwrap_or(0) == 0 {
            return Err(Error::Support { label: k });
        }
    }
    Ok(plugin_from_counts(&s, n1, &t, n2))
}

/// Per-class plug-in terms `p2 * ln(p2 / p1)`, for diagnostics.
pub fn plugin_terms(test_source_labels: &[usize], test_target_labels: &[usize]) -> Vec<(usize, f64)> {
    let (mut s, mut t) = (Vec::new(), Vec::new());
    let n1 = label_counts(test_source_labels.iter().copied(), &mut s).max(1);
    let n2 = label_counts(test_target_labels.iter().copied(), &mut t).max(1);
    t.iter()
        .enumerate()
        .filter(|(_, &c2)| c2 > 0)
        .map(|(k, &c2)| {
            let p2 = c2 as f64 / n2 as f64;
            let p1 = s.get(k).copied().unwrap_or(0) as f64 / n1 as f64;
            (k, p2 * (p2 / p1).ln())
        })
        .collect()
}

/// Rows of the test set playing the target (and source) role in one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSubset {
    /// Test-row indices, ascending.
    pub target: Vec<usize>,
    pub source: Vec<usize>,
    /// Replacement labels aligned with `target`; features and origins stay put.
    pub labels: Option<Vec<Label>>,
}

impl TargetSubset {
    pub fn observed(test: &AugmentedDataset) -> Self {
        TargetSubset {
            target: test.indices_of(Origin::Target),
            source: test.indices_of(Origin::Source),
            labels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KlOptions {
    pub newton: NewtonOptions,
    /// `None` picks plug-in for classification and the classifier otherwise.
    pub y_estimator: Option<YEstimator>,
    /// Fit the joint model on `(p(Z=2|x), y)` instead of `(x, y)`.
    pub reduce_joint: bool,
    /// When non-empty, each view picks its penalty from this grid by validation
    /// cross-entropy on an inner 80/20 split of the training rows.
    pub l2_grid: Vec<f64>,
    /// Seeds the inner split used by `l2_grid`.
    pub seed: u64,
}

/// The three origin classifiers fitted on the training split.
#[derive(Debug, Clone)]
pub struct RatioModels {
    pub joint: RatioModel,
    pub x: RatioModel,
    /// Present when the label divergence comes from a classifier.
    pub y: Option<RatioModel>,
    pub y_estimator: YEstimator,
    /// Penalty used per view, in joint, x, y order.
    pub l2: Vec<(FeatureView, f64)>,
}

fn fit_view(train: &AugmentedDataset, view: FeatureView, opts: &KlOptions) -> Result<(RatioModel, f64)> {
    if opts.l2_grid.is_empty() {
        return Ok((fit_ratio(train, view, opts.newton)?, opts.newton.l2));
    }
    let mut rng = rng::substream(opts.seed, rng::domain::SELECTION, 0);
    let inner = crate::data::split(train, 0.2, &mut rng)?;
    let candidates: Vec<RatioModel> = opts
        .l2_grid
        .iter()
        .map(|&l2| fit_ratio(&inner.train, view, NewtonOptions { l2, ..opts.newton }))
        .collect::<Result<_>>()?;
    let (best, _) = select_ratio_model(&candidates, &inner.test)?;
    let l2 = opts.l2_grid[best];
    Ok((fit_ratio(train, view, NewtonOptions { l2, ..opts.newton })?, l2))
}

impl RatioModels {
    pub fn fit(train: &AugmentedDataset, opts: &KlOptions) -> Result<Self> {
        let y_estimator = match (opts.y_estimator, train.task()) {
            (Some(YEstimator::Plugin), Task::Regression) => {
                return Err(Error::Config("plug-in label divergence needs a classification task".into()))
            }
            (Some(e), _) => e,
            (None, Task::Classification) => YEstimator::Plugin,
            (None, Task::Regression) => YEstimator::Classifier,
        };
        let (x, l2_x) = fit_view(train, FeatureView::XOnly, opts)?;
        let (joint, l2_joint) = if opts.reduce_joint {
            let m = fit_ratio_reduced(train, &x, NewtonOptions { l2: l2_x, ..opts.newton })?;
            (m, l2_x)
        } else {
            fit_view(train, FeatureView::JointXY, opts)?
        };
        let mut l2 = vec![(FeatureView::JointXY, l2_joint), (FeatureView::XOnly, l2_x)];
        let y = if y_estimator == YEstimator::Classifier {
            let (m, l2_y) = fit_view(train, FeatureView::YOnly, opts)?;
            l2.push((FeatureView::YOnly, l2_y));
            Some(m)
        } else {
            None
        };
        Ok(RatioModels { joint, x, y, y_estimator, l2 })
    }

    pub fn views(&self) -> impl Iterator<Item = &RatioModel> {
        [Some(&self.joint), Some(&self.x), self.y.as_ref()].into_iter().flatten()
    }
}

/// Statistic evaluator with per-row log ratios of the test set cached.
///
/// Resampled subsets only re-weight the cached values, except when labels are
/// replaced, in which case the label-dependent views are re-evaluated.
#[derive(Debug)]
pub struct ShiftStatistic<'a> {
    test: &'a AugmentedDataset,
    models: &'a RatioModels,
    joint_lr: Vec<f64>,
    x_lr: Vec<f64>,
    y_lr: Option<Vec<f64>>,
    classes: Option<Vec<usize>>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

impl<'a> ShiftStatistic<'a> {
    pub fn new(models: &'a RatioModels, test: &'a AugmentedDataset) -> Result<Self> {
        let all = |m: &RatioModel| -> Result<Vec<f64>> {
            test.rows().iter().map(|r| m.log_ratio(&r.sample)).collect()
        };
        let classes = match test.label_space() {
            LabelSpace::Categorical { .. } => {
                Some(test.rows().iter().map(|r| r.sample.label.class().expect("categorical")).collect())
            }
            LabelSpace::Continuous => None,
        };
        Ok(ShiftStatistic {
            test,
            models,
            joint_lr: all(&models.joint)?,
            x_lr: all(&models.x)?,
            y_lr: models.y.as_ref().map(all).transpose()?,
            classes,
        })
    }

    pub fn test(&self) -> &AugmentedDataset {
        self.test
    }

    pub fn models(&self) -> &RatioModels {
        self.models
    }

    /// Cached log ratios of the joint, feature and label views on every test row.
    pub fn cached_log_ratios(&self) -> (&[f64], &[f64], Option<&[f64]>) {
        (&self.joint_lr, &self.x_lr, self.y_lr.as_deref())
    }

    fn check(&self, s: &TargetSubset) -> Result<()> {
        if s.target.is_empty() {
            return Err(Error::Usage("target subset is empty".into()));
        }
        if let Some(l) = &s.labels {
            if l.len() != s.target.len() {
                return Err(Error::Usage("replacement labels misaligned with target rows".into()));
            }
        }
        Ok(())
    }

    fn relabeled_mean(&self, model: &RatioModel, s: &TargetSubset, labels: &[Label]) -> Result<f64> {
        let mut sum = 0.0;
        for (&i, &l) in s.target.iter().zip(labels) {
            sum += model.log_ratio_parts(&self.test.rows()[i].sample.features, l)?;
        }
        Ok(sum / s.target.len() as f64)
    }

    pub fn kl_joint(&self, s: &TargetSubset) -> Result<f64> {
        self.check(s)?;
        match &s.labels {
            None => Ok(mean_of(s.target.iter().map(|&i| self.joint_lr[i]))),
            Some(l) => self.relabeled_mean(&self.models.joint, s, l),
        }
    }

    pub fn kl_x(&self, s: &TargetSubset) -> Result<f64> {
        self.check(s)?;
        Ok(mean_of(s.target.iter().map(|&i| self.x_lr[i])))
    }

    /// Label divergence; the plug-in path yields `+inf` when a target class has no source rows.
    pub fn kl_y(&self, s: &TargetSubset) -> Result<f64> {
        self.check(s)?;
        match self.models.y_estimator {
            YEstimator::Classifier => {
                let model = self.models.y.as_ref().expect("label model fitted");
                match &s.labels {
                    None => Ok(mean_of(s.target.iter().map(|&i| self.y_lr.as_ref().expect("cached")[i]))),
                    Some(l) => self.relabeled_mean(model, s, l),
                }
            }
            YEstimator::Plugin => {
                let classes = self.classes.as_ref().expect("categorical labels");
                let (mut src, mut tgt) = (Vec::new(), Vec::new());
                let n1 = label_counts(s.source.iter().map(|&i| classes[i]), &mut src);
                let n2 = match &s.labels {
                    None => label_counts(s.target.iter().map(|&i| classes[i]), &mut tgt),
                    Some(l) => label_counts(l.iter().map(|x| x.class().expect("categorical")), &mut tgt),
                };
                if n1 == 0 {
                    return Ok(f64::INFINITY);
                }
                Ok(plugin_from_counts(&src, n1, &tgt, n2))
            }
        }
    }

    /// All five estimates on `s`.
    pub fn estimates(&self, s: &TargetSubset) -> Result<KLEstimates> {
        Ok(KLEstimates::from_marginals(self.kl_joint(s)?, self.kl_x(s)?, self.kl_y(s)?, self.models.y_estimator))
    }

    /// The statistic for one hypothesis, computing only what it needs.
    pub fn value(&self, h: Hypothesis, s: &TargetSubset) -> Result<f64> {
        match h {
            Hypothesis::TotalD => self.kl_joint(s),
            Hypothesis::FeatureF => self.kl_x(s),
            Hypothesis::ResponseR => self.kl_y(s),
            Hypothesis::Cond1 => Ok(self.kl_joint(s)? - self.kl_y(s)?),
            Hypothesis::Cond2 => Ok(self.kl_joint(s)? - self.kl_x(s)?),
        }
    }

    /// Observed estimates; the plug-in path errors on unsupported target labels.
    pub fn observed_estimates(&self) -> Result<KLEstimates> {
        let s = TargetSubset::observed(self.test);
        if self.models.y_estimator == YEstimator::Plugin {
            let classes = self.classes.as_ref().expect("categorical labels");
            let src: Vec<usize> = s.source.iter().map(|&i| classes[i]).collect();
            let tgt: Vec<usize> = s.target.iter().map(|&i| classes[i]).collect();
            plugin_kl_y(&src, &tgt)?;
        }
        self.estimates(&s)
    }
}

/// Fits the ratio models on `split.train` and evaluates all five estimates on the test rows.
pub fn compute_all(split: &SplitDatasets, opts: &KlOptions) -> Result<KLEstimates> {
    let models = RatioModels::fit(&split.train, opts)?;
    ShiftStatistic::new(&models, &split.test)?.observed_estimates()
}
