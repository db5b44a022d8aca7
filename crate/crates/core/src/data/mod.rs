//! Samples, the origin-tagged pooled dataset and its train/test split.

mod binning;
mod ingest;

pub use binning::{apply_binning, make_binning, BinningRule};
pub use ingest::{load_csv, load_pair, read_table, write_csv, ColumnEncoding, Encoding, RawTable};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classification" | "class" => Ok(Task::Classification),
            "regression" | "reg" => Ok(Task::Regression),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected classification or regression)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    /// Category id in `0..num_classes`.
    Class(usize),
    Value(f64),
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Value(_) => None,
        }
    }

    /// The label as a real number; category ids are cast.
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Value(v) => v,
        }
    }

    fn task(self) -> Task {
        match self {
            Label::Class(_) => Task::Classification,
            Label::Value(_) => Task::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledSample {
    /// Builds a sample, rejecting non-finite features or labels.
    pub fn new(features: Vec<f64>, label: Label) -> Result<Self> {
        if let Some(j) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("feature {j} is not finite ({})", features[j])));
        }
        if let Label::Value(v) = label {
            if !v.is_finite() {
                return Err(Error::Data(format!("label is not finite ({v})")));
            }
        }
        Ok(LabeledSample { features, label })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Population indicator: `Source` is Z=1, `Target` is Z=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Source,
    Target,
}

impl Origin {
    /// The paper-style 1/2 code.
    pub fn code(self) -> u8 {
        match self {
            Origin::Source => 1,
            Origin::Target => 2,
        }
    }

    /// Class index used by the Z classifiers (0 = source, 1 = target).
    pub fn class_index(self) -> usize {
        match self {
            Origin::Source => 0,
            Origin::Target => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub sample: LabeledSample,
    pub origin: Origin,
}

/// What the label looks like to a feature projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSpace {
    Categorical { classes: usize },
    Continuous,
}

impl LabelSpace {
    pub fn task(self) -> Task {
        match self {
            LabelSpace::Categorical { .. } => Task::Classification,
            LabelSpace::Continuous => Task::Regression,
        }
    }
}

/// Pooled source and target rows, each tagged with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    rows: Vec<Row>,
    dim: usize,
    label_space: LabelSpace,
}

impl AugmentedDataset {
    /// Pools `source` (Z=1) and `target` (Z=2).
    ///
    /// Classification labels seen in the target must also occur in the source.
    pub fn augment(source: Vec<LabeledSample>, target: Vec<LabeledSample>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Config("source and target samples must both be non-empty".into()));
        }
        let dim = source[0].dim();
        let task = source[0].label.task();
        let mut max_class = 0usize;
        let mut source_classes = Vec::new();
        for (origin, samples) in [(Origin::Source, &source), (Origin::Target, &target)] {
            for (i, s) in samples.iter().enumerate() {
                if s.dim() != dim {
                    return Err(Error::Data(format!(
                        "{origin:?} sample {i} has {} features, expected {dim}",
                        s.dim()
                    )));
                }
                if s.label.task() != task {
                    return Err(Error::Data(format!(
                        "{origin:?} sample {i} mixes categorical and continuous labels"
                    )));
                }
                if s.features.iter().any(|v| !v.is_finite())
                    || !s.label.as_f64().is_finite()
                {
                    return Err(Error::Data(format!("{origin:?} sample {i} has non-finite values")));
                }
                if let Label::Class(c) = s.label {
                    max_class = max_class.max(c);
                    if origin == Origin::Source {
                        if source_classes.len() <= c {
                            source_classes.resize(c + 1, false);
                        }
                        source_classes[c] = true;
                    } else if !source_classes.get(c).copied().unwrap_or(false) {
                        return Err(Error::Support { label: c });
                    }
                }
            }
        }
        let label_space = match task {
            Task::Classification => LabelSpace::Categorical { classes: max_class + 1 },
            Task::Regression => LabelSpace::Continuous,
        };
        let rows = source
            .into_iter()
            .map(|sample| Row { sample, origin: Origin::Source })
            .chain(target.into_iter().map(|sample| Row { sample, origin: Origin::Target }))
            .collect();
        Ok(AugmentedDataset { rows, dim, label_space })
    }

    /// A subset sharing this dataset's dimension and label space. Support is not rechecked.
    fn subset(&self, indices: &[usize]) -> AugmentedDataset {
        AugmentedDataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            dim: self.dim,
            label_space: self.label_space,
        }
    }

    pub fn from_rows(rows: Vec<Row>, dim: usize, label_space: LabelSpace) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.sample.dim() != dim {
                return Err(Error::Data(format!("row {i} has dimension {}, expected {dim}", r.sample.dim())));
            }
            match (r.sample.label, label_space) {
                (Label::Class(c), LabelSpace::Categorical { classes }) if c < classes => {}
                (Label::Value(_), LabelSpace::Continuous) => {}
                _ => return Err(Error::Data(format!("row {i} label does not fit the label space"))),
            }
        }
        Ok(AugmentedDataset { rows, dim, label_space })
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn task(&self) -> Task {
        self.label_space.task()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.rows.iter().filter(|r| r.origin == origin).count()
    }

    pub fn origins(&self) -> Vec<Origin> {
        self.rows.iter().map(|r| r.origin).collect()
    }

    /// Indices of rows with the given origin.
    pub fn indices_of(&self, origin: Origin) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].origin == origin).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDatasets {
    pub train: AugmentedDataset,
    pub test: AugmentedDataset,
    pub n_tr_1: usize,
    pub n_tr_2: usize,
}

impl SplitDatasets {
    pub fn n_te_1(&self) -> usize {
        self.test.count(Origin::Source)
    }

    pub fn n_te_2(&self) -> usize {
        self.test.count(Origin::Target)
    }
}

/// Uniform random train/test partition of the pooled rows.
///
/// Train and test keep the pooled row order.
pub fn split<R: Rng + ?Sized>(
    pooled: &AugmentedDataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<SplitDatasets> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n = pooled.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (test_idx, train_idx) = order.split_at(n_test.min(n));
    let mut test_idx = test_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let train = pooled.subset(&train_idx);
    let test = pooled.subset(&test_idx);
    let n_tr_1 = train.count(Origin::Source);
    let n_tr_2 = train.count(Origin::Target);
    if n_tr_1 == 0 || n_tr_2 == 0 {
        return Err(Error::Config(format!(
            "split leaves {n_tr_1} source and {n_tr_2} target training rows; lower the test fraction"
        )));
    }
    let n_te_2 = test.count(Origin::Target);
    if n_te_2 < 2 {
        return Err(Error::Config(format!(
            "split leaves {n_te_2} target test rows (need at least 2); raise the test fraction"
        )));
    }
    Ok(SplitDatasets { train, test, n_tr_1, n_tr_2 })
}

/// Pools the two samples and splits them with the seed's split stream.
pub fn augment_and_split(
    source: Vec<LabeledSample>,
    target: Vec<LabeledSample>,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitDatasets> {
    let pooled = AugmentedDataset::augment(source, target)?;
    let mut rng = crate::rng::substream(seed, crate::rng::domain::SPLIT, 0);
    split(&pooled, test_fraction, &mut rng)
}
