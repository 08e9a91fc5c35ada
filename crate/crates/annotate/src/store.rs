// SPDX-License-Identifier: Apache-2.0

//! Annotation state for a question bank, persisted as one JSON snapshot.
//!
//! Every accepted write replaces the snapshot by atomic rename before the
//! new state becomes visible, so a restart always reloads the last state a
//! client was told about. Writes are serialized by the state lock; reads
//! see a consistent snapshot.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use lotag_core::corpus::{questions_to_jsonl, Corpus, Question};
use lotag_core::fsutil::write_atomic;
use lotag_core::taxonomy::{parse_lo_code, LOCode, LearningObjective, Taxonomy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationState {
    /// Codes in the order the annotator selected them.
    pub selected: Vec<LOCode>,
    pub notes: String,
    pub revision: u64,
    pub last_modified: Option<DateTime<Utc>>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("question {0:?} not found")]
    NotFound(String),
    #[error("revision conflict: expected {expected}, current is {}", current.revision)]
    RevisionConflict {
        expected: u64,
        current: Box<AnnotationState>,
    },
    #[error("invalid LO code {0:?}")]
    InvalidCode(String),
    #[error("{code} belongs to {lo_chapter:?}, question is in {chapter:?}")]
    ChapterMismatch {
        code: LOCode,
        chapter: String,
        lo_chapter: String,
    },
    #[error("snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub id: String,
    pub chapter: String,
    pub source: String,
    pub dataset: String,
    pub label_count: usize,
    pub labeled: bool,
    pub revision: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize)]
pub struct QuestionFilter {
    pub chapter: Option<String>,
    pub dataset: Option<String>,
    pub labeled: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuestionDetail {
    pub question: Question,
    pub state: AnnotationState,
    /// The question's chapter subset in taxonomy order.
    pub los: Vec<LearningObjective>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportBundle {
    /// Line-delimited corpus in question-bank order.
    pub corpus: String,
    /// Ids exported with empty ground truth.
    pub unlabeled: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    questions: BTreeMap<String, AnnotationState>,
}

pub struct AnnotationStore {
    taxonomy: Arc<Taxonomy>,
    questions: Vec<Question>,
    index: HashMap<String, usize>,
    state: RwLock<Vec<AnnotationState>>,
    path: Option<PathBuf>,
}

impl AnnotationStore {
    /// Opens a store over `bank`. Labels and notes already in the bank seed
    /// the initial state; a snapshot at `path`, if present, overrides them.
    pub fn open(taxonomy: Arc<Taxonomy>, bank: &Corpus, path: Option<PathBuf>) -> Result<Self, AnnotationError> {
        let questions = bank.questions().to_vec();
        let index = questions.iter().enumerate().map(|(i, q)| (q.id.clone(), i)).collect();
        let mut states: Vec<AnnotationState> = questions
            .iter()
            .map(|q| AnnotationState {
                selected: q.ground_truth.clone(),
                notes: q.notes.clone().unwrap_or_default(),
                revision: 0,
                last_modified: None,
            })
            .collect();

        let store_path = path.clone();
        let mut store = Self {
            taxonomy,
            questions,
            index,
            state: RwLock::new(Vec::new()),
            path,
        };
        if let Some(path) = store_path.filter(|p| p.exists()) {
            let text = std::fs::read_to_string(&path).map_err(|e| snapshot_err(&path, e))?;
            let snapshot: Snapshot = serde_json::from_str(&text).map_err(|e| snapshot_err(&path, e))?;
            if snapshot.version != SNAPSHOT_VERSION {
                return Err(snapshot_err(&path, format!("unsupported version {}", snapshot.version)));
            }
            for (id, state) in snapshot.questions {
                let Some(&i) = store.index.get(&id) else {
                    log::warn!("snapshot has state for {id:?}, which is not in the question bank");
                    continue;
                };
                store
                    .check_codes(i, &state.selected)
                    .map_err(|e| snapshot_err(&path, format!("{id}: {e}")))?;
                states[i] = state;
            }
        }
        store.state = RwLock::new(states);
        Ok(store)
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    fn position(&self, id: &str) -> Result<usize, AnnotationError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| AnnotationError::NotFound(id.to_owned()))
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Vec<AnnotationState>> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn list_questions(&self, filter: &QuestionFilter) -> Vec<QuestionSummary> {
        let states = self.read();
        self.questions
            .iter()
            .zip(states.iter())
            .filter(|(q, s)| {
                filter.chapter.as_ref().is_none_or(|c| &q.chapter == c)
                    && filter.dataset.as_ref().is_none_or(|d| &q.dataset == d)
                    && filter.labeled.is_none_or(|l| l == !s.selected.is_empty())
            })
            .map(|(q, s)| QuestionSummary {
                id: q.id.clone(),
                chapter: q.chapter.clone(),
                source: q.source.clone(),
                dataset: q.dataset.clone(),
                label_count: s.selected.len(),
                labeled: !s.selected.is_empty(),
                revision: s.revision,
            })
            .collect()
    }

    pub fn state(&self, id: &str) -> Result<AnnotationState, AnnotationError> {
        let i = self.position(id)?;
        Ok(self.read()[i].clone())
    }

    pub fn get_question(&self, id: &str) -> Result<QuestionDetail, AnnotationError> {
        let i = self.position(id)?;
        let q = &self.questions[i];
        let los = self
            .taxonomy
            .subset_by_chapter(&q.chapter)
            .map(|s| s.into_iter().cloned().collect())
            .unwrap_or_default();
        Ok(QuestionDetail {
            question: q.clone(),
            state: self.read()[i].clone(),
            los,
        })
    }

    fn check_codes(&self, i: usize, codes: &[LOCode]) -> Result<(), AnnotationError> {
        let chapter = &self.questions[i].chapter;
        for code in codes {
            let lo = self
                .taxonomy
                .get(code)
                .ok_or_else(|| AnnotationError::InvalidCode(code.to_string()))?;
            if &lo.chapter != chapter {
                return Err(AnnotationError::ChapterMismatch {
                    code: code.clone(),
                    chapter: chapter.clone(),
                    lo_chapter: lo.chapter.clone(),
                });
            }
        }
        Ok(())
    }

    /// Replaces the selected codes. Duplicates are dropped, first one wins.
    pub fn put_labels(
        &self,
        id: &str,
        codes: &[String],
        expected_revision: u64,
    ) -> Result<AnnotationState, AnnotationError> {
        let i = self.position(id)?;
        let mut parsed = Vec::with_capacity(codes.len());
        let mut seen = HashSet::new();
        for token in codes {
            let code = parse_lo_code(token).map_err(|_| AnnotationError::InvalidCode(token.clone()))?;
            if seen.insert(code.clone()) {
                parsed.push(code);
            }
        }
        self.check_codes(i, &parsed)?;
        self.write(i, expected_revision, |s| s.selected = parsed)
    }

    /// Replaces the notes verbatim; an empty string clears them.
    pub fn put_notes(&self, id: &str, notes: &str, expected_revision: u64) -> Result<AnnotationState, AnnotationError> {
        let i = self.position(id)?;
        self.write(i, expected_revision, |s| s.notes = notes.to_owned())
    }

    fn write(
        &self,
        i: usize,
        expected_revision: u64,
        apply: impl FnOnce(&mut AnnotationState),
    ) -> Result<AnnotationState, AnnotationError> {
        let mut states = self.state.write().unwrap_or_else(|e| e.into_inner());
        let current = &states[i];
        if current.revision != expected_revision {
            return Err(AnnotationError::RevisionConflict {
                expected: expected_revision,
                current: Box::new(current.clone()),
            });
        }
        let mut next = current.clone();
        apply(&mut next);
        next.revision += 1;
        next.last_modified = Some(Utc::now());

        if let Some(path) = &self.path {
            let mut snapshot = Snapshot {
                version: SNAPSHOT_VERSION,
                questions: BTreeMap::new(),
            };
            for (j, (q, s)) in self.questions.iter().zip(states.iter()).enumerate() {
                let s = if j == i { &next } else { s };
                if s.revision > 0 {
                    snapshot.questions.insert(q.id.clone(), s.clone());
                }
            }
            let mut text = serde_json::to_string_pretty(&snapshot).map_err(|e| snapshot_err(path, e))?;
            text.push('\n');
            write_atomic(path, text.as_bytes()).map_err(|e| snapshot_err(path, e))?;
        }
        states[i] = next.clone();
        Ok(next)
    }

    /// Current labels and notes as a corpus file. Unlabeled questions are
    /// exported with empty ground truth and listed in `unlabeled`.
    pub fn export(&self) -> ExportBundle {
        let states = self.read();
        let mut unlabeled = Vec::new();
        let questions: Vec<Question> = self
            .questions
            .iter()
            .zip(states.iter())
            .map(|(q, s)| {
                if s.selected.is_empty() {
                    unlabeled.push(q.id.clone());
                }
                Question {
                    ground_truth: s.selected.clone(),
                    notes: (!s.notes.is_empty()).then(|| s.notes.clone()),
                    ..q.clone()
                }
            })
            .collect();
        ExportBundle {
            corpus: questions_to_jsonl(&questions),
            unlabeled,
        }
    }
}

fn snapshot_err(path: &Path, e: impl ToString) -> AnnotationError {
    AnnotationError::Snapshot {
        path: path.to_owned(),
        message: e.to_string(),
    }
}
