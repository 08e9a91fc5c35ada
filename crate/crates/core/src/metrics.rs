// SPDX-License-Identifier: Apache-2.0

//! Set-agreement metrics between predicted (`F`) and ground-truth (`G`) LO sets.
//!
//! Exact match, Jaccard, precision/recall/F1 are computed on code sets. The
//! hierarchical distance compares LOs at three levels: name, action, code.
//!
//! Empty-set conventions: when `F` and `G` are both empty every agreement
//! metric is 1 and the distance is 0. Any other zero denominator yields 0.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{ActionType, LOCode, Taxonomy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("LO code {0} does not resolve in the taxonomy")]
    UnresolvedCode(LOCode),
}

/// How unmatched and mismatched LOs are accumulated into a question distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceMode {
    /// Every predicted LO contributes its minimum pairwise distance to `G`;
    /// ground-truth LOs missing from `F` contribute the unmatched distance.
    #[default]
    PairwiseMin,
    /// Only LOs in the symmetric difference contribute, each with the
    /// unmatched distance against the other set.
    SetRule,
}

impl DistanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PairwiseMin => "PairwiseMin",
            Self::SetRule => "SetRule",
        }
    }
}

impl fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "pairwisemin" | "pairwise" => Ok(Self::PairwiseMin),
            "setrule" | "set" => Ok(Self::SetRule),
            _ => Err(format!("unknown distance mode {s:?}")),
        }
    }
}

/// An LO reduced to the levels the distance metric looks at.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedLO {
    pub code: LOCode,
    pub name: String,
    pub action: ActionType,
}

impl ResolvedLO {
    pub fn resolve(code: &LOCode, taxonomy: &Taxonomy) -> Result<Self, MetricsError> {
        let lo = taxonomy
            .get(code)
            .ok_or_else(|| MetricsError::UnresolvedCode(code.clone()))?;
        Ok(Self {
            code: lo.code.clone(),
            name: lo.name.clone(),
            action: lo.action,
        })
    }
}

/// A duplicate-free set of codes, each resolved against a taxonomy.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet {
    items: BTreeMap<LOCode, ResolvedLO>,
}

impl LabelSet {
    pub fn resolve<'a>(codes: impl IntoIterator<Item = &'a LOCode>, taxonomy: &Taxonomy) -> Result<Self, MetricsError> {
        let mut items = BTreeMap::new();
        for code in codes {
            if !items.contains_key(code) {
                items.insert(code.clone(), ResolvedLO::resolve(code, taxonomy)?);
            }
        }
        Ok(Self { items })
    }

    pub fn from_resolved(los: impl IntoIterator<Item = ResolvedLO>) -> Self {
        Self {
            items: los.into_iter().map(|lo| (lo.code.clone(), lo)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, code: &LOCode) -> bool {
        self.items.contains_key(code)
    }

    pub fn codes(&self) -> impl Iterator<Item = &LOCode> {
        self.items.keys()
    }

    pub fn los(&self) -> impl Iterator<Item = &ResolvedLO> {
        self.items.values()
    }

    fn has_name(&self, name: &str) -> bool {
        self.items.values().any(|lo| lo.name == name)
    }

    fn intersection_len(&self, other: &LabelSet) -> usize {
        self.codes().filter(|c| other.contains(c)).count()
    }
}

pub fn exact_match(f: &LabelSet, g: &LabelSet) -> u8 {
    u8::from(f.items.len() == g.items.len() && f.codes().all(|c| g.contains(c)))
}

pub fn jaccard(f: &LabelSet, g: &LabelSet) -> f64 {
    let inter = f.intersection_len(g);
    let union = f.len() + g.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn precision_recall_f1(f: &LabelSet, g: &LabelSet) -> PrecisionRecallF1 {
    if f.is_empty() && g.is_empty() {
        return PrecisionRecallF1 {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let inter = f.intersection_len(g);
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    // 2PR/(P+R) reduces to 2|F∩G|/(|F|+|G|); one division keeps it correctly rounded.
    PrecisionRecallF1 {
        precision: ratio(inter, f.len()),
        recall: ratio(inter, g.len()),
        f1: ratio(2 * inter, f.len() + g.len()),
    }
}

/// Distance between two LOs: 3 when names differ, 2 when only the names
/// agree, 1 when name and action agree but codes differ, 0 for the same code.
pub fn lo_distance(a: &ResolvedLO, b: &ResolvedLO) -> u8 {
    if a.code == b.code {
        0
    } else if a.name != b.name {
        3
    } else if a.action != b.action {
        2
    } else {
        1
    }
}

/// Looks both codes up in `taxonomy` and returns their [`lo_distance`].
pub fn lo_distance_by_code(a: &LOCode, b: &LOCode, taxonomy: &Taxonomy) -> Result<u8, MetricsError> {
    Ok(lo_distance(
        &ResolvedLO::resolve(a, taxonomy)?,
        &ResolvedLO::resolve(b, taxonomy)?,
    ))
}

/// Cost of an LO that has no counterpart in `other`: 1 if `other` holds an
/// LO with the same name, otherwise 2.
pub fn unmatched_distance(lo: &ResolvedLO, other: &LabelSet) -> u8 {
    if other.has_name(&lo.name) {
        1
    } else {
        2
    }
}

pub fn set_distance(f: &LabelSet, g: &LabelSet, mode: DistanceMode) -> u32 {
    let missed: u32 = g
        .los()
        .filter(|lo| !f.contains(&lo.code))
        .map(|lo| u32::from(unmatched_distance(lo, f)))
        .sum();
    let predicted: u32 = match mode {
        DistanceMode::PairwiseMin => f
            .los()
            .map(|lo| {
                g.los()
                    .map(|other| lo_distance(lo, other))
                    .min()
                    .unwrap_or_else(|| unmatched_distance(lo, g))
            })
            .map(u32::from)
            .sum(),
        DistanceMode::SetRule => f
            .los()
            .filter(|lo| !g.contains(&lo.code))
            .map(|lo| u32::from(unmatched_distance(lo, g)))
            .sum(),
    };
    predicted + missed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub exact_match: u8,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub distance: f64,
    pub distance_mode: DistanceMode,
}

impl QuestionScore {
    pub fn compute(f: &LabelSet, g: &LabelSet, mode: DistanceMode) -> Self {
        let prf = precision_recall_f1(f, g);
        Self {
            exact_match: exact_match(f, g),
            jaccard: jaccard(f, g),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            distance: f64::from(set_distance(f, g, mode)),
            distance_mode: mode,
        }
    }
}

/// Resolves both code lists and computes every metric.
pub fn score_question(
    predicted: &[LOCode],
    ground_truth: &[LOCode],
    taxonomy: &Taxonomy,
    mode: DistanceMode,
) -> Result<QuestionScore, MetricsError> {
    let f = LabelSet::resolve(predicted, taxonomy)?;
    let g = LabelSet::resolve(ground_truth, taxonomy)?;
    Ok(QuestionScore::compute(&f, &g, mode))
}

/// A (predicted, ground truth) pair awaiting scoring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPair {
    pub predicted: Vec<LOCode>,
    pub ground_truth: Vec<LOCode>,
}

pub fn score_batch_sequential(
    pairs: &[LabelPair],
    taxonomy: &Taxonomy,
    mode: DistanceMode,
) -> Vec<Result<QuestionScore, MetricsError>> {
    pairs
        .iter()
        .map(|p| score_question(&p.predicted, &p.ground_truth, taxonomy, mode))
        .collect()
}

#[cfg(feature = "parallel")]
pub fn score_batch_parallel(
    pairs: &[LabelPair],
    taxonomy: &Taxonomy,
    mode: DistanceMode,
) -> Vec<Result<QuestionScore, MetricsError>> {
    use rayon::prelude::*;
    pairs
        .par_iter()
        .map(|p| score_question(&p.predicted, &p.ground_truth, taxonomy, mode))
        .collect()
}

/// Scores every pair, in input order. Runs on the rayon pool when the
/// `parallel` feature is enabled.
pub fn score_batch(
    pairs: &[LabelPair],
    taxonomy: &Taxonomy,
    mode: DistanceMode,
) -> Vec<Result<QuestionScore, MetricsError>> {
    #[cfg(feature = "parallel")]
    {
        score_batch_parallel(pairs, taxonomy, mode)
    }
    #[cfg(not(feature = "parallel"))]
    {
        score_batch_sequential(pairs, taxonomy, mode)
    }
}
