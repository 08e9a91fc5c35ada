// SPDX-License-Identifier: Apache-2.0

//! Aggregated result tables and analytics for a run.
//!
//! Files written into the run directory:
//!
//! | file                  | content                                          |
//! |-----------------------|--------------------------------------------------|
//! | `report.json`         | the full [`Report`], full precision              |
//! | `report.txt`          | aligned plain-text tables, 3-decimal means       |
//! | `table.csv`           | one row per (dataset, model, strategy, format)   |
//! | `avg_lo_count.csv`    | mean label-set size per chapter and labeler      |
//! | `f1_by_count.csv`     | F1 buckets by label-set size                     |
//! | `lo_frequency.csv`    | per-LO usage counts, zero counts included        |
//! | `per_lo_accuracy.csv` | per-LO recall for well-supported LOs             |
//!
//! Failed cells never enter a mean; they are counted in the `failed` column.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::{avg_lo_count, f1_by_count_heatmap, lo_frequency, per_lo_accuracy, CountedScore, HeatmapAxis};
use crate::fsutil::write_atomic;
use crate::metrics::DistanceMode;
use crate::prompting::{LOFormat, PromptStrategy};
use crate::runner::{CellRecord, RunRecord};
use crate::taxonomy::{LOCode, Taxonomy};

pub const DEFAULT_MIN_SUPPORT: usize = 5;
pub const HUMAN: &str = "human";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub model: String,
    pub strategy: PromptStrategy,
    pub format: LOFormat,
    pub em_hits: usize,
    /// Scored cells in the group.
    pub em_total: usize,
    pub jaccard: Option<f64>,
    pub f1: Option<f64>,
    pub distance: Option<f64>,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgLoRow {
    pub chapter: String,
    pub labeler: String,
    pub questions: usize,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub model: String,
    pub strategy: PromptStrategy,
    pub format: LOFormat,
    pub axis: HeatmapAxis,
    pub lo_count: usize,
    pub mean_f1: f64,
    pub questions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub chapter: String,
    pub labeler: String,
    pub code: LOCode,
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub chapter: String,
    pub labeler: String,
    pub code: LOCode,
    pub name: String,
    pub support: usize,
    pub hits: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub distance_mode: DistanceMode,
    pub min_support: usize,
    pub table: Vec<TableRow>,
    pub avg_lo_count: Vec<AvgLoRow>,
    pub f1_by_count: Vec<HeatmapRow>,
    pub lo_frequency: Vec<FrequencyRow>,
    pub per_lo_accuracy: Vec<AccuracyRow>,
}

type GroupKey = (String, PromptStrategy, LOFormat);

fn labeler(key: &GroupKey) -> String {
    format!("{}/{}/{}", key.0, key.1, key.2)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// One row per (dataset, model, strategy, format), sorted by dataset, model,
/// format, then strategy.
pub fn aggregate_table(record: &RunRecord) -> Vec<TableRow> {
    let mut groups: BTreeMap<(&str, &str, LOFormat, PromptStrategy), Vec<&CellRecord>> = BTreeMap::new();
    for cell in &record.cells {
        groups
            .entry((&cell.dataset, &cell.key.model, cell.key.format, cell.key.strategy))
            .or_default()
            .push(cell);
    }
    groups
        .into_iter()
        .map(|((dataset, model, format, strategy), cells)| {
            let scores: Vec<_> = cells.iter().filter_map(|c| c.score.as_ref()).collect();
            TableRow {
                dataset: dataset.to_owned(),
                model: model.to_owned(),
                strategy,
                format,
                em_hits: scores.iter().filter(|s| s.exact_match == 1).count(),
                em_total: scores.len(),
                jaccard: mean(scores.iter().map(|s| s.jaccard)),
                f1: mean(scores.iter().map(|s| s.f1)),
                distance: mean(scores.iter().map(|s| s.distance)),
                failed: cells.len() - scores.len(),
            }
        })
        .collect()
}

/// Builds the table and every analytics block.
pub fn build_report(record: &RunRecord, taxonomy: &Taxonomy) -> Report {
    build_report_with(record, taxonomy, DEFAULT_MIN_SUPPORT)
}

pub fn build_report_with(record: &RunRecord, taxonomy: &Taxonomy, min_support: usize) -> Report {
    // Chapters in taxonomy order, restricted to those present in the run.
    let present: BTreeSet<&str> = record.cells.iter().map(|c| c.chapter.as_str()).collect();
    let chapters: Vec<String> = taxonomy
        .chapters()
        .iter()
        .filter(|c| present.contains(c.as_str()))
        .cloned()
        .collect();

    // Human labels, one per question.
    let mut human: BTreeMap<&str, &CellRecord> = BTreeMap::new();
    for cell in &record.cells {
        human.entry(cell.key.question_id.as_str()).or_insert(cell);
    }

    let mut by_labeler: BTreeMap<GroupKey, Vec<&CellRecord>> = BTreeMap::new();
    for cell in record.cells.iter().filter(|c| c.is_scored()) {
        by_labeler
            .entry((cell.key.model.clone(), cell.key.strategy, cell.key.format))
            .or_default()
            .push(cell);
    }

    let mut avg = Vec::new();
    let mut push_avg = |name: String, items: Vec<(&str, usize)>| {
        for a in avg_lo_count(&chapters, items) {
            avg.push(AvgLoRow {
                chapter: a.group,
                labeler: name.clone(),
                questions: a.questions,
                mean: a.mean,
            });
        }
    };
    push_avg(
        HUMAN.into(),
        human
            .values()
            .map(|c| (c.chapter.as_str(), c.ground_truth.len()))
            .collect(),
    );
    for (key, cells) in &by_labeler {
        push_avg(
            labeler(key),
            cells
                .iter()
                .map(|c| (c.chapter.as_str(), c.predicted().map_or(0, <[LOCode]>::len)))
                .collect(),
        );
    }

    let mut heatmap = Vec::new();
    for (key, cells) in &by_labeler {
        let scores: Vec<CountedScore> = cells
            .iter()
            .map(|c| CountedScore {
                ground_truth_len: c.ground_truth.len(),
                predicted_len: c.predicted().map_or(0, <[LOCode]>::len),
                f1: c.score.as_ref().map_or(0.0, |s| s.f1),
            })
            .collect();
        for axis in HeatmapAxis::ALL {
            heatmap.extend(f1_by_count_heatmap(&scores, axis).into_iter().map(|b| HeatmapRow {
                model: key.0.clone(),
                strategy: key.1,
                format: key.2,
                axis,
                lo_count: b.lo_count,
                mean_f1: b.mean_f1,
                questions: b.questions,
            }));
        }
    }

    let name_of = |code: &LOCode| taxonomy.get(code).map(|lo| lo.name.clone()).unwrap_or_default();
    let mut frequency = Vec::new();
    let mut accuracy = Vec::new();
    for chapter in &chapters {
        let universe: Vec<LOCode> = taxonomy
            .los()
            .iter()
            .filter(|lo| &lo.chapter == chapter)
            .map(|lo| lo.code.clone())
            .collect();
        let mut push_freq = |name: String, sets: Vec<&[LOCode]>| {
            frequency.extend(lo_frequency(&universe, sets).into_iter().map(|f| FrequencyRow {
                chapter: chapter.clone(),
                labeler: name.clone(),
                name: name_of(&f.code),
                code: f.code,
                count: f.count,
            }));
        };
        push_freq(
            HUMAN.into(),
            human
                .values()
                .filter(|c| &c.chapter == chapter)
                .map(|c| c.ground_truth.as_slice())
                .collect(),
        );
        for (key, cells) in &by_labeler {
            let in_chapter: Vec<&&CellRecord> = cells.iter().filter(|c| &c.chapter == chapter).collect();
            push_freq(labeler(key), in_chapter.iter().filter_map(|c| c.predicted()).collect());
            let pairs = in_chapter
                .iter()
                .filter_map(|c| Some((c.predicted()?, c.ground_truth.as_slice())));
            accuracy.extend(
                per_lo_accuracy(&universe, pairs, min_support)
                    .into_iter()
                    .map(|a| AccuracyRow {
                        chapter: chapter.clone(),
                        labeler: labeler(key),
                        name: name_of(&a.code),
                        code: a.code,
                        support: a.support,
                        hits: a.hits,
                        accuracy: a.accuracy,
                    }),
            );
        }
    }

    Report {
        distance_mode: record.config.distance_mode,
        min_support,
        table: aggregate_table(record),
        avg_lo_count: avg,
        f1_by_count: heatmap,
        lo_frequency: frequency,
        per_lo_accuracy: accuracy,
    }
}

fn fixed(v: Option<f64>, places: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.places$}"))
}

/// Left-aligns the first `text_cols` columns and right-aligns the rest.
fn aligned(header: &[&str], rows: &[Vec<String>], text_cols: usize) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i < text_cols {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "{cell:>w$}");
            }
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        out
    };
    let mut out = line(&mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&mut rule.iter().map(String::as_str)));
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

/// The main results table: EM as n/N, other columns as 3-decimal means.
pub fn render_table(rows: &[TableRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.model.clone(),
                r.format.to_string(),
                r.strategy.to_string(),
                format!("{}/{}", r.em_hits, r.em_total),
                fixed(r.jaccard, 3),
                fixed(r.f1, 3),
                fixed(r.distance, 3),
                r.failed.to_string(),
            ]
        })
        .collect();
    aligned(
        &["Dataset", "Model", "Format", "Strategy", "EM", "J", "F1", "D", "Failed"],
        &body,
        4,
    )
}

pub fn render_report(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "LO labeling results (distance: {})\n", report.distance_mode);
    out.push_str(&render_table(&report.table));

    out.push_str("\nAverage LOs per question\n\n");
    let rows: Vec<Vec<String>> = report
        .avg_lo_count
        .iter()
        .map(|r| {
            vec![
                r.chapter.clone(),
                r.labeler.clone(),
                r.questions.to_string(),
                fixed(r.mean, 2),
            ]
        })
        .collect();
    out.push_str(&aligned(&["Chapter", "Labeler", "Questions", "Mean"], &rows, 2));

    out.push_str("\nF1 by number of LOs\n\n");
    let rows: Vec<Vec<String>> = report
        .f1_by_count
        .iter()
        .map(|r| {
            vec![
                format!("{}/{}/{}", r.model, r.strategy, r.format),
                r.axis.to_string(),
                r.lo_count.to_string(),
                format!("{:.3}", r.mean_f1),
                r.questions.to_string(),
            ]
        })
        .collect();
    out.push_str(&aligned(&["Labeler", "Axis", "LOs", "F1", "Questions"], &rows, 2));

    let _ = writeln!(out, "\nPer-LO accuracy (support >= {})\n", report.min_support);
    let rows: Vec<Vec<String>> = report
        .per_lo_accuracy
        .iter()
        .map(|r| {
            vec![
                r.labeler.clone(),
                r.code.to_string(),
                r.name.clone(),
                format!("{}/{}", r.hits, r.support),
                format!("{:.3}", r.accuracy),
            ]
        })
        .collect();
    out.push_str(&aligned(&["Labeler", "Code", "Name", "Hits", "Accuracy"], &rows, 3));
    out
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> std::io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(std::io::Error::other)?;
    }
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))
}

#[derive(Serialize)]
struct TableCsv<'a> {
    dataset: &'a str,
    model: &'a str,
    strategy: PromptStrategy,
    format: LOFormat,
    em: String,
    em_hits: usize,
    em_total: usize,
    jaccard: Option<f64>,
    f1: Option<f64>,
    distance: Option<f64>,
    failed: usize,
}

pub fn write_reports(report: &Report, dir: &Path) -> std::io::Result<()> {
    let mut json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    json.push('\n');
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    write_atomic(&dir.join("report.txt"), render_report(report).as_bytes())?;

    let table: Vec<TableCsv> = report
        .table
        .iter()
        .map(|r| TableCsv {
            dataset: &r.dataset,
            model: &r.model,
            strategy: r.strategy,
            format: r.format,
            em: format!("{}/{}", r.em_hits, r.em_total),
            em_hits: r.em_hits,
            em_total: r.em_total,
            jaccard: r.jaccard,
            f1: r.f1,
            distance: r.distance,
            failed: r.failed,
        })
        .collect();
    write_atomic(&dir.join("table.csv"), &csv_bytes(&table)?)?;
    write_atomic(&dir.join("avg_lo_count.csv"), &csv_bytes(&report.avg_lo_count)?)?;
    write_atomic(&dir.join("f1_by_count.csv"), &csv_bytes(&report.f1_by_count)?)?;
    write_atomic(&dir.join("lo_frequency.csv"), &csv_bytes(&report.lo_frequency)?)?;
    write_atomic(&dir.join("per_lo_accuracy.csv"), &csv_bytes(&report.per_lo_accuracy)?)?;
    Ok(())
}

/// Names of every file [`write_reports`] produces.
pub const REPORT_FILES: [&str; 7] = [
    "report.json",
    "report.txt",
    "table.csv",
    "avg_lo_count.csv",
    "f1_by_count.csv",
    "lo_frequency.csv",
    "per_lo_accuracy.csv",
];
