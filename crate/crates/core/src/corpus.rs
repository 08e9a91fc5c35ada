// SPDX-License-Identifier: Apache-2.0

//! Question banks with expert ground-truth labels.
//!
//! The on-disk form is line-delimited JSON, one question per line, with the
//! fields `id`, `chapter`, `source`, `dataset`, `text`, `ground_truth` and an
//! optional `notes`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{parse_lo_code, LOCode, Taxonomy};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub chapter: String,
    pub source: String,
    pub dataset: String,
    pub text: String,
    pub ground_truth: Vec<LOCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusMode {
    /// Every question must carry at least one ground-truth code.
    Labeled,
    /// Pre-annotation question bank; empty ground truth allowed.
    Unlabeled,
}

/// One problem found while validating a corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CorpusIssue {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing or empty field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("question {id}: duplicate question id")]
    DuplicateQuestionId { id: String },
    #[error("question {id}: malformed LO code {token:?}")]
    InvalidCode { id: String, token: String },
    #[error("question {id}: unknown LO code {code}")]
    UnknownLOCode { id: String, code: LOCode },
    #[error("question {id}: {code} belongs to {lo_chapter:?}, question is in {chapter:?}")]
    ChapterMismatch {
        id: String,
        code: LOCode,
        chapter: String,
        lo_chapter: String,
    },
    #[error("question {id}: chapter {chapter:?} is not in the taxonomy")]
    UnknownChapter { id: String, chapter: String },
    #[error("question {id}: empty ground truth")]
    EmptyGroundTruth { id: String },
}

impl CorpusIssue {
    /// Question id the issue is about, when the line got far enough to have one.
    pub fn question_id(&self) -> Option<&str> {
        match self {
            Self::Malformed { .. } | Self::MissingField { .. } => None,
            Self::DuplicateQuestionId { id }
            | Self::InvalidCode { id, .. }
            | Self::UnknownLOCode { id, .. }
            | Self::ChapterMismatch { id, .. }
            | Self::UnknownChapter { id, .. }
            | Self::EmptyGroundTruth { id } => Some(id),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}", IssueList(.0))]
    Invalid(Vec<CorpusIssue>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct IssueList<'a>(&'a [CorpusIssue]);

impl fmt::Display for IssueList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} corpus issue(s)", self.0.len())?;
        for issue in self.0 {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    questions: Vec<Question>,
    mode: CorpusMode,
}

#[derive(Deserialize)]
struct RawQuestion {
    id: Option<String>,
    chapter: Option<String>,
    source: Option<String>,
    dataset: Option<String>,
    text: Option<String>,
    ground_truth: Option<Vec<String>>,
    #[serde(default)]
    notes: Option<String>,
}

impl Corpus {
    /// Validates already-built questions against `taxonomy`, with the same
    /// rules as [`Corpus::from_jsonl`]. Issue line numbers are 1-based positions.
    pub fn new(questions: Vec<Question>, taxonomy: &Taxonomy, mode: CorpusMode) -> Result<Self, CorpusError> {
        let mut issues = Vec::new();
        let mut seen = HashSet::new();
        for (i, q) in questions.iter().enumerate() {
            let required = [
                ("id", &q.id),
                ("chapter", &q.chapter),
                ("source", &q.source),
                ("dataset", &q.dataset),
                ("text", &q.text),
            ];
            if let Some((field, _)) = required.iter().find(|(_, v)| v.trim().is_empty()) {
                issues.push(CorpusIssue::MissingField { line: i + 1, field });
                continue;
            }
            check_question(q, taxonomy, mode, &mut seen, &mut issues);
        }
        if issues.is_empty() {
            Ok(Self { questions, mode })
        } else {
            Err(CorpusError::Invalid(issues))
        }
    }

    pub fn from_jsonl(text: &str, taxonomy: &Taxonomy, mode: CorpusMode) -> Result<Self, CorpusError> {
        let mut issues = Vec::new();
        let mut seen = HashSet::new();
        let mut questions = Vec::new();

        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawQuestion = match serde_json::from_str(line) {
                Ok(raw) => raw,
                Err(e) => {
                    issues.push(CorpusIssue::Malformed {
                        line: line_no,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            match decode(raw, line_no) {
                Ok((q, bad_tokens)) => {
                    for token in bad_tokens {
                        issues.push(CorpusIssue::InvalidCode {
                            id: q.id.clone(),
                            token,
                        });
                    }
                    check_question(&q, taxonomy, mode, &mut seen, &mut issues);
                    questions.push(q);
                }
                Err(issue) => issues.push(issue),
            }
        }

        if issues.is_empty() {
            Ok(Self { questions, mode })
        } else {
            Err(CorpusError::Invalid(issues))
        }
    }

    /// One JSON object per line, in corpus order.
    pub fn to_jsonl(&self) -> String {
        questions_to_jsonl(&self.questions)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn mode(&self) -> CorpusMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

pub fn questions_to_jsonl(questions: &[Question]) -> String {
    let mut out = String::new();
    for q in questions {
        out.push_str(&serde_json::to_string(q).expect("question serializes"));
        out.push('\n');
    }
    out
}

// Issues are collected, not propagated, so their size does not matter here.
#[allow(clippy::result_large_err)]
fn decode(raw: RawQuestion, line: usize) -> Result<(Question, Vec<String>), CorpusIssue> {
    #[allow(clippy::result_large_err)]
    fn req(v: Option<String>, line: usize, field: &'static str) -> Result<String, CorpusIssue> {
        match v {
            Some(s) if !s.trim().is_empty() => Ok(s),
            _ => Err(CorpusIssue::MissingField { line, field }),
        }
    }
    let id = req(raw.id, line, "id")?;
    let chapter = req(raw.chapter, line, "chapter")?;
    let source = req(raw.source, line, "source")?;
    let dataset = req(raw.dataset, line, "dataset")?;
    let text = req(raw.text, line, "text")?;
    let tokens = raw.ground_truth.ok_or(CorpusIssue::MissingField {
        line,
        field: "ground_truth",
    })?;

    let mut ground_truth: Vec<LOCode> = Vec::with_capacity(tokens.len());
    let mut bad = Vec::new();
    for token in tokens {
        match parse_lo_code(token.trim()) {
            Ok(code) if !ground_truth.contains(&code) => ground_truth.push(code),
            Ok(_) => {}
            Err(_) => bad.push(token),
        }
    }
    Ok((
        Question {
            id,
            chapter,
            source,
            dataset,
            text,
            ground_truth,
            notes: raw.notes,
        },
        bad,
    ))
}

fn check_question(
    q: &Question,
    taxonomy: &Taxonomy,
    mode: CorpusMode,
    seen: &mut HashSet<String>,
    issues: &mut Vec<CorpusIssue>,
) {
    if !seen.insert(q.id.clone()) {
        issues.push(CorpusIssue::DuplicateQuestionId { id: q.id.clone() });
    }
    if !taxonomy.chapters().contains(&q.chapter) {
        issues.push(CorpusIssue::UnknownChapter {
            id: q.id.clone(),
            chapter: q.chapter.clone(),
        });
    }
    for code in &q.ground_truth {
        match taxonomy.get(code) {
            None => issues.push(CorpusIssue::UnknownLOCode {
                id: q.id.clone(),
                code: code.clone(),
            }),
            Some(lo) if lo.chapter != q.chapter => issues.push(CorpusIssue::ChapterMismatch {
                id: q.id.clone(),
                code: code.clone(),
                chapter: q.chapter.clone(),
                lo_chapter: lo.chapter.clone(),
            }),
            Some(_) => {}
        }
    }
    if mode == CorpusMode::Labeled && q.ground_truth.is_empty() {
        issues.push(CorpusIssue::EmptyGroundTruth { id: q.id.clone() });
    }
}

pub fn load_corpus(path: impl AsRef<Path>, taxonomy: &Taxonomy, mode: CorpusMode) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    Corpus::from_jsonl(&text, taxonomy, mode)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub chapter: String,
    pub source: String,
    pub dataset: String,
    pub count: usize,
}

/// Question counts per (chapter, source, dataset), in order of first appearance.
pub fn corpus_stats(questions: &[Question]) -> Vec<StatsRow> {
    let mut rows: Vec<StatsRow> = Vec::new();
    for q in questions {
        match rows
            .iter_mut()
            .find(|r| r.chapter == q.chapter && r.source == q.source && r.dataset == q.dataset)
        {
            Some(row) => row.count += 1,
            None => rows.push(StatsRow {
                chapter: q.chapter.clone(),
                source: q.source.clone(),
                dataset: q.dataset.clone(),
                count: 1,
            }),
        }
    }
    rows
}
