use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-frequency bins over a real-valued label.
///
/// Bin `k` is the half-open interval `[cut[k-1], cut[k])`; the first bin is
/// unbounded below and the last one is unbounded (and closed) above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningRule {
    cut_points: Vec<f64>,
}

impl BinningRule {
    pub fn cut_points(&self) -> &[f64] {
        &self.cut_points
    }

    pub fn num_bins(&self) -> usize {
        self.cut_points.len() + 1
    }

    pub fn apply(&self, label: f64) -> usize {
        self.cut_points.partition_point(|&c| c <= label)
    }
}

/// Fits quantile cut points on `labels`.
///
/// Cut `k` sits halfway between the order statistics around position
/// `round(k * n / num_bins)`, so `n` distinct labels with `num_bins | n`
/// land exactly `n / num_bins` per bin.
pub fn make_binning(labels: &[f64], num_bins: usize) -> Result<BinningRule> {
    if num_bins < 2 {
        return Err(Error::Binning(format!("need at least 2 bins, got {num_bins}")));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::Binning("labels must be finite".into()));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if sorted.is_empty() || distinct < num_bins {
        return Err(Error::Binning(format!(
            "{} distinct label values cannot fill {num_bins} bins; use at most {} bins",
            if sorted.is_empty() { 0 } else { distinct },
            if sorted.is_empty() { 0 } else { distinct },
        )));
    }
    let n = sorted.len();
    let mut cut_points = Vec::with_capacity(num_bins - 1);
    for k in 1..num_bins {
        let pos = ((2 * k * n + num_bins) / (2 * num_bins)).clamp(1, n - 1);
        let cut = 0.5 * (sorted[pos - 1] + sorted[pos]);
        if let Some(&last) = cut_points.last() {
            if cut <= last {
                return Err(Error::Binning(format!(
                    "tied labels collapse quantile {k} of {num_bins}; use fewer bins"
                )));
            }
        }
        cut_points.push(cut);
    }
    Ok(BinningRule { cut_points })
}

pub fn apply_binning(rule: &BinningRule, label: f64) -> usize {
    rule.apply(label)
}
