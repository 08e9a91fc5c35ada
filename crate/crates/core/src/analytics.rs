// SPDX-License-Identifier: Apache-2.0

//! Label-set analyses: average set size, F1 bucketed by set size, LO usage
//! frequency and per-LO recall. Inputs are plain label lists so the same
//! functions serve human and model labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::taxonomy::LOCode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgLoCount {
    pub group: String,
    pub questions: usize,
    /// `None` when the group has no questions.
    pub mean: Option<f64>,
}

/// Mean label-set size per group. `groups` fixes the output order and may
/// name groups that have no items; those come back with `mean: None`.
pub fn avg_lo_count<'a>(groups: &[String], items: impl IntoIterator<Item = (&'a str, usize)>) -> Vec<AvgLoCount> {
    let mut sums: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (group, size) in items {
        let e = sums.entry(group).or_default();
        e.0 += 1;
        e.1 += size;
    }
    groups
        .iter()
        .map(|g| {
            let (n, total) = sums.get(g.as_str()).copied().unwrap_or((0, 0));
            AvgLoCount {
                group: g.clone(),
                questions: n,
                mean: (n > 0).then(|| total as f64 / n as f64),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapAxis {
    /// Bucket by ground-truth set size.
    Human,
    /// Bucket by predicted set size.
    Model,
}

impl HeatmapAxis {
    pub const ALL: [HeatmapAxis; 2] = [Self::Human, Self::Model];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Human => "human",
            Self::Model => "model",
        }
    }
}

impl fmt::Display for HeatmapAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeatmapAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "human" => Ok(Self::Human),
            "model" => Ok(Self::Model),
            _ => Err(format!("unknown heatmap axis {s:?}")),
        }
    }
}

/// One scored question as seen by the heatmap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountedScore {
    pub ground_truth_len: usize,
    pub predicted_len: usize,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapBucket {
    pub lo_count: usize,
    pub mean_f1: f64,
    pub questions: usize,
}

/// Buckets questions by one labeler's set size, ascending. Every input lands
/// in exactly one bucket.
pub fn f1_by_count_heatmap(scores: &[CountedScore], axis: HeatmapAxis) -> Vec<HeatmapBucket> {
    let mut buckets: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for s in scores {
        let key = match axis {
            HeatmapAxis::Human => s.ground_truth_len,
            HeatmapAxis::Model => s.predicted_len,
        };
        let e = buckets.entry(key).or_default();
        e.0 += s.f1;
        e.1 += 1;
    }
    buckets
        .into_iter()
        .map(|(lo_count, (sum, n))| HeatmapBucket {
            lo_count,
            mean_f1: sum / n as f64,
            questions: n,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoFrequency {
    pub code: LOCode,
    pub count: usize,
}

/// Number of label sets containing each LO of `universe`, in universe order.
/// Unused LOs are listed with count 0. Codes outside the universe are
/// appended in code order so the counts always sum to the total label count.
pub fn lo_frequency<'a>(universe: &[LOCode], label_sets: impl IntoIterator<Item = &'a [LOCode]>) -> Vec<LoFrequency> {
    let mut counts: BTreeMap<&LOCode, usize> = BTreeMap::new();
    for set in label_sets {
        let unique: BTreeSet<&LOCode> = set.iter().collect();
        for code in unique {
            *counts.entry(code).or_default() += 1;
        }
    }
    let known: BTreeSet<&LOCode> = universe.iter().collect();
    let mut out: Vec<LoFrequency> = universe
        .iter()
        .map(|code| LoFrequency {
            code: code.clone(),
            count: counts.get(code).copied().unwrap_or(0),
        })
        .collect();
    out.extend(
        counts
            .iter()
            .filter(|(code, _)| !known.contains(*code))
            .map(|(code, &count)| LoFrequency {
                code: (*code).clone(),
                count,
            }),
    );
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoAccuracy {
    pub code: LOCode,
    /// Questions whose ground truth contains the LO.
    pub support: usize,
    /// Of those, questions where the LO was also predicted.
    pub hits: usize,
    pub accuracy: f64,
}

/// Per-LO recall over ground truth, for LOs with support ≥ `min_support`.
/// Output follows `universe` order.
pub fn per_lo_accuracy<'a>(
    universe: &[LOCode],
    pairs: impl IntoIterator<Item = (&'a [LOCode], &'a [LOCode])>,
    min_support: usize,
) -> Vec<LoAccuracy> {
    let mut tally: BTreeMap<&LOCode, (usize, usize)> = BTreeMap::new();
    for (predicted, truth) in pairs {
        let predicted: BTreeSet<&LOCode> = predicted.iter().collect();
        let truth: BTreeSet<&LOCode> = truth.iter().collect();
        for code in truth {
            let e = tally.entry(code).or_default();
            e.0 += 1;
            if predicted.contains(code) {
                e.1 += 1;
            }
        }
    }
    universe
        .iter()
        .filter_map(|code| {
            let &(support, hits) = tally.get(code)?;
            (support >= min_support.max(1)).then(|| LoAccuracy {
                code: code.clone(),
                support,
                hits,
                accuracy: hits as f64 / support as f64,
            })
        })
        .collect()
}
