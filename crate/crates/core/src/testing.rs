//! Resampling p-values for the five shift hypotheses.
//!
//! For a statistic `T` and `B` modified target subsets,
//!
//! `p = (1 + #{j : T_0 <= T_j}) / (B + 1)`
//!
//! where every `T` carries independent `N(0, nu)` noise so ranks are a.s. unique.
//! Marginal and joint hypotheses permute the origin column over the whole test
//! set; conditional shift of type 1 permutes origins within label levels; type 2
//! redraws target labels from a fitted conditional model.
//!
//! Replicate `j` (and `j = 0` for the observed noise) draws from its own stream
//! `(TEST_BASE + hypothesis ordinal, j)` of the test seed, so results do not
//! depend on scheduling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AugmentedDataset, BinningRule, Label, Origin};
use crate::divergence::{ShiftStatistic, TargetSubset};
use crate::error::{Error, Result};
use crate::model::{sample_conditional, ConditionalModel};
use crate::rng;

pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Joint distributions are equal.
    #[serde(rename = "D")]
    TotalD,
    /// Feature marginals are equal.
    #[serde(rename = "F")]
    FeatureF,
    /// Label marginals are equal.
    #[serde(rename = "R")]
    ResponseR,
    /// Features given label are equal.
    #[serde(rename = "C1")]
    Cond1,
    /// Label given features is equal.
    #[serde(rename = "C2")]
    Cond2,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 5] =
        [Hypothesis::TotalD, Hypothesis::FeatureF, Hypothesis::ResponseR, Hypothesis::Cond1, Hypothesis::Cond2];

    pub fn ordinal(self) -> u64 {
        self as u64
    }

    pub fn code(self) -> &'static str {
        match self {
            Hypothesis::TotalD => "D",
            Hypothesis::FeatureF => "F",
            Hypothesis::ResponseR => "R",
            Hypothesis::Cond1 => "C1",
            Hypothesis::Cond2 => "C2",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Hypothesis::TotalD => "total dataset shift",
            Hypothesis::FeatureF => "feature shift",
            Hypothesis::ResponseR => "response shift",
            Hypothesis::Cond1 => "conditional shift (X|Y)",
            Hypothesis::Cond2 => "conditional shift (Y|X)",
        }
    }

    /// Parses a comma-separated list, returned in canonical D, F, R, C1, C2 order.
    pub fn parse_list(s: &str) -> Result<Vec<Hypothesis>> {
        let mut out: Vec<Hypothesis> =
            s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("empty hypothesis list".into()));
        }
        Ok(out)
    }
}

impl std::str::FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D" => Ok(Hypothesis::TotalD),
            "F" => Ok(Hypothesis::FeatureF),
            "R" => Ok(Hypothesis::ResponseR),
            "C1" => Ok(Hypothesis::Cond1),
            "C2" => Ok(Hypothesis::Cond2),
            other => Err(Error::Config(format!("unknown hypothesis `{other}` (use D, F, R, C1, C2)"))),
        }
    }
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// A statistic over a (possibly modified) target subset of the test set.
pub trait Statistic: Sync {
    fn evaluate(&self, subset: &TargetSubset) -> Result<f64>;
}

impl<F> Statistic for F
where
    F: Fn(&TargetSubset) -> Result<f64> + Sync,
{
    fn evaluate(&self, subset: &TargetSubset) -> Result<f64> {
        self(subset)
    }
}

/// The KL statistic matching one hypothesis.
pub struct HypothesisStatistic<'s, 'a> {
    pub stat: &'s ShiftStatistic<'a>,
    pub hypothesis: Hypothesis,
}

impl Statistic for HypothesisStatistic<'_, '_> {
    fn evaluate(&self, subset: &TargetSubset) -> Result<f64> {
        self.stat.value(self.hypothesis, subset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub hypothesis: Hypothesis,
    /// Noiseless statistic on the observed target rows.
    pub statistic: f64,
    pub p_value: f64,
    pub b: usize,
    pub noise_variance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOptions {
    pub b: usize,
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions { b: 100, noise_variance: DEFAULT_NOISE_VARIANCE, seed: 0 }
    }
}

/// How replicate subsets are generated.
#[derive(Debug, Clone)]
pub enum Scheme<'a> {
    Global,
    /// Origins are permuted among rows sharing a level.
    Local { levels: Vec<usize> },
    Crt { conditional: &'a ConditionalModel },
}

/// Label levels used by the local permutation: class ids, or bins of a real label.
pub fn label_levels(test: &AugmentedDataset, binning: Option<&BinningRule>) -> Result<Vec<usize>> {
    test.rows()
        .iter()
        .map(|r| match (r.sample.label, binning) {
            (Label::Class(c), _) => Ok(c),
            (Label::Value(v), Some(rule)) => Ok(rule.apply(v)),
            (Label::Value(_), None) => Err(Error::Usage(
                "conditional shift (X|Y) with a continuous label needs a binning rule".into(),
            )),
        })
        .collect()
}

pub fn scheme_for<'a>(
    hypothesis: Hypothesis,
    test: &AugmentedDataset,
    conditional: Option<&'a ConditionalModel>,
    binning: Option<&BinningRule>,
) -> Result<Scheme<'a>> {
    match hypothesis {
        Hypothesis::TotalD | Hypothesis::FeatureF | Hypothesis::ResponseR => Ok(Scheme::Global),
        Hypothesis::Cond1 => Ok(Scheme::Local { levels: label_levels(test, binning)? }),
        Hypothesis::Cond2 => conditional
            .map(|conditional| Scheme::Crt { conditional })
            .ok_or_else(|| Error::Usage("conditional shift (Y|X) needs a fitted conditional model".into())),
    }
}

fn subset_from_origins(origins: &[Origin]) -> TargetSubset {
    let mut target = Vec::new();
    let mut source = Vec::new();
    for (i, o) in origins.iter().enumerate() {
        match o {
            Origin::Target => target.push(i),
            Origin::Source => source.push(i),
        }
    }
    TargetSubset { target, source, labels: None }
}

/// Uniformly permutes the origin column over all test rows.
pub fn permute_global<R: Rng + ?Sized>(test: &AugmentedDataset, rng: &mut R) -> TargetSubset {
    let mut origins = test.origins();
    origins.shuffle(rng);
    subset_from_origins(&origins)
}

/// Permutes origins independently within each level (levels visited in ascending order).
pub fn permute_local<R: Rng + ?Sized>(test: &AugmentedDataset, levels: &[usize], rng: &mut R) -> TargetSubset {
    assert_eq!(levels.len(), test.len(), "one level per test row");
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in levels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut origins = test.origins();
    for rows in groups.values() {
        let mut local: Vec<Origin> = rows.iter().map(|&i| origins[i]).collect();
        local.shuffle(rng);
        for (&i, o) in rows.iter().zip(local) {
            origins[i] = o;
        }
    }
    subset_from_origins(&origins)
}

/// Replaces every target label by a draw from the conditional model at its features.
pub fn crt_resample<R: Rng + ?Sized>(
    test: &AugmentedDataset,
    conditional: &ConditionalModel,
    rng: &mut R,
) -> Result<TargetSubset> {
    let mut s = TargetSubset::observed(test);
    let labels = s
        .target
        .iter()
        .map(|&i| sample_conditional(conditional, &test.rows()[i].sample.features, rng))
        .collect::<Result<Vec<_>>>()?;
    s.labels = Some(labels);
    Ok(s)
}

pub fn modify<R: Rng + ?Sized>(scheme: &Scheme<'_>, test: &AugmentedDataset, rng: &mut R) -> Result<TargetSubset> {
    match scheme {
        Scheme::Global => Ok(permute_global(test, rng)),
        Scheme::Local { levels } => Ok(permute_local(test, levels, rng)),
        Scheme::Crt { conditional } => crt_resample(test, conditional, rng),
    }
}

/// `(1 + #{j : t0 <= t_j}) / (B + 1)`.
pub fn p_value_from(t0: f64, replicates: &[f64]) -> f64 {
    let exceed = replicates.iter().filter(|&&t| t0 <= t).count();
    (1 + exceed) as f64 / (replicates.len() + 1) as f64
}

/// Runs the resampling test for `hypothesis`.
pub fn p_value(
    stat: &dyn Statistic,
    test: &AugmentedDataset,
    hypothesis: Hypothesis,
    opts: TestOptions,
    conditional: Option<&ConditionalModel>,
    binning: Option<&BinningRule>,
) -> Result<TestResult> {
    if opts.b == 0 {
        return Err(Error::Config("B must be at least 1".into()));
    }
    if !(opts.noise_variance > 0.0 && opts.noise_variance.is_finite()) {
        return Err(Error::Config(format!("noise variance must be positive, got {}", opts.noise_variance)));
    }
    let scheme = scheme_for(hypothesis, test, conditional, binning)?;
    let noise = Normal::new(0.0, opts.noise_variance.sqrt()).expect("valid normal");
    let domain = rng::domain::TEST_BASE + hypothesis.ordinal();

    let statistic = stat.evaluate(&TargetSubset::observed(test))?;
    if !statistic.is_finite() {
        return Err(Error::Data(format!("observed {hypothesis} statistic is not finite ({statistic})")));
    }
    let t0 = statistic + noise.sample(&mut rng::substream(opts.seed, domain, 0));

    let replicates: Vec<f64> = (1..=opts.b as u64)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::substream(opts.seed, domain, j);
            let modified = modify(&scheme, test, &mut r)?;
            Ok(stat.evaluate(&modified)? + noise.sample(&mut r))
        })
        .collect::<Result<_>>()?;

    Ok(TestResult {
        hypothesis,
        statistic,
        p_value: p_value_from(t0, &replicates),
        b: opts.b,
        noise_variance: opts.noise_variance,
        seed: opts.seed,
    })
}
