// SPDX-License-Identifier: Apache-2.0

//! Experiment grid execution: questions × models × strategies × formats ×
//! samples, one gateway call and one score per cell.
//!
//! A run directory holds:
//!
//! * `run.json`: the resolved config and timestamps, plus a failure summary
//! * `predictions.jsonl`: one line per cell with the raw reply and extracted codes
//! * `scores.jsonl`: one line per cell with labels and metrics
//! * the report files written by [`crate::report::write_reports`]
//!
//! Everything except `run.json` is a deterministic function of the inputs
//! when the backend is replay.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_corpus, Corpus, CorpusError, CorpusMode, Question};
use crate::fsutil::write_atomic;
use crate::gateway::{
    parse_prediction, BackendMode, Cassette, Gateway, GatewayError, ModelConfig, PredictionRecord, ReqwestTransport,
    Transport,
};
use crate::metrics::{score_question, DistanceMode, QuestionScore};
use crate::prompting::{build_prompt, LOFormat, PromptStrategy};
use crate::report;
use crate::taxonomy::{load_taxonomy, LOCode, Taxonomy, TaxonomyError};

pub const RUN_FILE: &str = "run.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment config: {0}")]
    ConfigInvalid(String),
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("run directory {path}: {message}")]
    RunDir { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn all_strategies() -> Vec<PromptStrategy> {
    PromptStrategy::ALL.to_vec()
}

fn all_formats() -> Vec<LOFormat> {
    LOFormat::ALL.to_vec()
}

fn one() -> usize {
    1
}

fn one_sample() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub taxonomy: PathBuf,
    pub corpus: PathBuf,
    pub models: Vec<ModelConfig>,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<PromptStrategy>,
    #[serde(default = "all_formats")]
    pub formats: Vec<LOFormat>,
    pub backend: BackendMode,
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub distance_mode: DistanceMode,
    #[serde(default = "one_sample")]
    pub samples_per_cell: u32,
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths are taken from the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        // Absolute, so a stored run can be re-scored from any working directory.
        let base = std::path::absolute(match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        })?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.taxonomy);
        fix(&mut cfg.corpus);
        fix(&mut cfg.output_dir);
        if let Some(c) = cfg.cassette.as_mut() {
            fix(c);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::ConfigInvalid(m.to_owned()));
        if self.models.is_empty() {
            return bad("at least one model is required");
        }
        if self.strategies.is_empty() {
            return bad("at least one prompting strategy is required");
        }
        if self.formats.is_empty() {
            return bad("at least one LO format is required");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.samples_per_cell == 0 {
            return bad("samples_per_cell must be at least 1");
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            m.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
            if !names.insert(&m.model_name) {
                return Err(RunError::ConfigInvalid(format!("duplicate model {:?}", m.model_name)));
            }
        }
        if self.backend != BackendMode::Live && self.cassette.is_none() {
            return bad("record and replay backends need a cassette path");
        }
        Ok(())
    }

    pub fn cell_count(&self, questions: usize) -> usize {
        questions * self.models.len() * self.strategies.len() * self.formats.len() * self.samples_per_cell as usize
    }
}

/// Identity of a grid cell. Field order is the merge order of results.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub question_id: String,
    pub model: String,
    pub strategy: PromptStrategy,
    pub format: LOFormat,
    pub sample: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellError {
    pub kind: String,
    pub message: String,
}

impl CellError {
    fn from_gateway(e: &GatewayError) -> Self {
        let kind = match e {
            GatewayError::NetworkError { .. } => "NetworkError",
            GatewayError::AuthError(_) => "AuthError",
            GatewayError::CassetteMiss(_) => "CassetteMiss",
            GatewayError::MalformedResponse(_) => "MalformedResponse",
            GatewayError::HttpStatus { .. } => "HttpStatus",
            GatewayError::ConfigInvalid(_) => "ConfigInvalid",
            GatewayError::Cassette { .. } => "Cassette",
        };
        Self {
            kind: kind.into(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    #[serde(flatten)]
    pub key: CellKey,
    pub dataset: String,
    pub chapter: String,
    pub ground_truth: Vec<LOCode>,
    pub prediction: Option<PredictionRecord>,
    pub score: Option<QuestionScore>,
    pub error: Option<CellError>,
}

impl CellRecord {
    pub fn predicted(&self) -> Option<&[LOCode]> {
        self.prediction.as_ref().map(|p| p.predicted.as_slice())
    }

    pub fn is_scored(&self) -> bool {
        self.score.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub cells: Vec<CellRecord>,
}

impl RunRecord {
    pub fn failures(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    pub fn scored(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| c.is_scored())
    }
}

struct Job<'a> {
    key: CellKey,
    question: &'a Question,
    model: usize,
}

/// Executes the grid with the given transport and returns the record
/// without writing anything.
pub fn execute(
    cfg: &ExperimentConfig,
    taxonomy: &Taxonomy,
    corpus: &Corpus,
    transport: Arc<dyn Transport>,
) -> Result<RunRecord, RunError> {
    cfg.validate()?;
    let started_at = Utc::now();

    let cassette = Arc::new(match &cfg.cassette {
        Some(path) if cfg.backend == BackendMode::Replay && !path.exists() => {
            return Err(RunError::ConfigInvalid(format!(
                "cassette {} does not exist",
                path.display()
            )))
        }
        Some(path) => Cassette::open(path)?,
        None => Cassette::in_memory(),
    });
    let gateways = cfg
        .models
        .iter()
        .map(|m| Gateway::new(m.clone(), cfg.backend, cassette.clone(), transport.clone()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut jobs = Vec::with_capacity(cfg.cell_count(corpus.len()));
    for question in corpus.questions() {
        for (model, m) in cfg.models.iter().enumerate() {
            for &strategy in &cfg.strategies {
                for &format in &cfg.formats {
                    for sample in 0..cfg.samples_per_cell {
                        jobs.push(Job {
                            key: CellKey {
                                question_id: question.id.clone(),
                                model: m.model_name.clone(),
                                strategy,
                                format,
                                sample,
                            },
                            question,
                            model,
                        });
                    }
                }
            }
        }
    }
    jobs.sort_by(|a, b| a.key.cmp(&b.key));

    let run = |job: &Job| run_cell(job, taxonomy, &gateways[job.model], cfg.distance_mode);

    #[cfg(feature = "parallel")]
    let cells: Vec<CellRecord> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let cells: Vec<CellRecord> = jobs.iter().map(run).collect();

    Ok(RunRecord {
        config: cfg.clone(),
        started_at,
        finished_at: Utc::now(),
        cells,
    })
}

fn run_cell(job: &Job, taxonomy: &Taxonomy, gateway: &Gateway, mode: DistanceMode) -> CellRecord {
    let q = job.question;
    let mut cell = CellRecord {
        key: job.key.clone(),
        dataset: q.dataset.clone(),
        chapter: q.chapter.clone(),
        ground_truth: q.ground_truth.clone(),
        prediction: None,
        score: None,
        error: None,
    };
    let fail = |cell: &mut CellRecord, kind: &str, message: String| {
        cell.error = Some(CellError {
            kind: kind.into(),
            message,
        });
    };

    let subset = match taxonomy.subset_by_chapter(&q.chapter) {
        Ok(s) => s,
        Err(e) => {
            fail(&mut cell, "UnknownChapter", e.to_string());
            return cell;
        }
    };
    let prompt = match build_prompt(q, &subset, job.key.strategy, job.key.format) {
        Ok(p) => p,
        Err(e) => {
            fail(&mut cell, "Prompt", e.to_string());
            return cell;
        }
    };
    let start = Instant::now();
    let completion = match gateway.complete(&prompt.rendered_text, job.key.sample) {
        Ok(c) => c,
        Err(e) => {
            cell.error = Some(CellError::from_gateway(&e));
            return cell;
        }
    };
    // Replayed replies have no model latency; recording 0 keeps replay output stable.
    let latency_ms = match gateway.mode() {
        BackendMode::Replay => 0,
        _ => start.elapsed().as_millis() as u64,
    };

    let allowed: BTreeSet<LOCode> = subset.iter().map(|lo| lo.code.clone()).collect();
    let parsed = parse_prediction(&completion.text, &allowed);
    match score_question(&parsed.predicted, &q.ground_truth, taxonomy, mode) {
        Ok(score) => cell.score = Some(score),
        Err(e) => fail(&mut cell, "Metrics", e.to_string()),
    }
    cell.prediction = Some(PredictionRecord {
        question_id: q.id.clone(),
        strategy: job.key.strategy,
        format: job.key.format,
        model_name: job.key.model.clone(),
        sample: job.key.sample,
        fingerprint: completion.fingerprint,
        raw_text: completion.text,
        predicted: parsed.predicted,
        dropped_codes: parsed.dropped,
        latency_ms,
    });
    cell
}

/// Loads inputs, executes the grid over HTTP, and persists the run and its reports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord, RunError> {
    run_experiment_with(cfg, Arc::new(ReqwestTransport::new()))
}

pub fn run_experiment_with(cfg: &ExperimentConfig, transport: Arc<dyn Transport>) -> Result<RunRecord, RunError> {
    cfg.validate()?;
    let taxonomy = load_taxonomy(&cfg.taxonomy)?;
    let corpus = load_corpus(&cfg.corpus, &taxonomy, CorpusMode::Labeled)?;
    let record = execute(cfg, &taxonomy, &corpus, transport)?;
    persist_run(&record, &cfg.output_dir)?;
    report::write_reports(&report::build_report(&record, &taxonomy), &cfg.output_dir)?;
    Ok(record)
}

#[derive(Serialize, Deserialize)]
struct RunSummary {
    config: ExperimentConfig,
    started_at: DateTime<Utc>,
    finished_at: DateTime<Utc>,
    cells: usize,
    scored: usize,
    failures: Vec<FailureLine>,
}

#[derive(Serialize, Deserialize)]
struct FailureLine {
    #[serde(flatten)]
    key: CellKey,
    #[serde(flatten)]
    error: CellError,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    #[serde(flatten)]
    key: CellKey,
    prediction: Option<PredictionRecord>,
    error: Option<CellError>,
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    #[serde(flatten)]
    key: CellKey,
    dataset: String,
    chapter: String,
    ground_truth: Vec<LOCode>,
    predicted: Option<Vec<LOCode>>,
    score: Option<QuestionScore>,
    error: Option<CellError>,
}

fn jsonl<T: Serialize>(items: impl Iterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("run line serializes"));
        out.push('\n');
    }
    out
}

pub fn persist_run(record: &RunRecord, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let summary = RunSummary {
        config: record.config.clone(),
        started_at: record.started_at,
        finished_at: record.finished_at,
        cells: record.cells.len(),
        scored: record.scored().count(),
        failures: record
            .failures()
            .map(|c| FailureLine {
                key: c.key.clone(),
                error: c.error.clone().expect("failure has error"),
            })
            .collect(),
    };
    let mut run_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    run_json.push('\n');
    write_atomic(&dir.join(RUN_FILE), run_json.as_bytes())?;

    let predictions = record.cells.iter().map(|c| PredictionLine {
        key: c.key.clone(),
        prediction: c.prediction.clone(),
        error: if c.prediction.is_none() { c.error.clone() } else { None },
    });
    write_atomic(&dir.join(PREDICTIONS_FILE), jsonl(predictions).as_bytes())?;
    write_scores(record, dir)
}

fn write_scores(record: &RunRecord, dir: &Path) -> Result<(), RunError> {
    let scores = record.cells.iter().map(|c| ScoreLine {
        key: c.key.clone(),
        dataset: c.dataset.clone(),
        chapter: c.chapter.clone(),
        ground_truth: c.ground_truth.clone(),
        predicted: c.predicted().map(<[LOCode]>::to_vec),
        score: c.score.clone(),
        error: c.error.clone(),
    });
    write_atomic(&dir.join(SCORES_FILE), jsonl(scores).as_bytes())?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RunError::RunDir {
                path: path.to_owned(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Reads a run directory written by [`persist_run`].
pub fn load_run(dir: &Path) -> Result<RunRecord, RunError> {
    let run_path = dir.join(RUN_FILE);
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(&run_path)?).map_err(|e| RunError::RunDir {
            path: run_path.clone(),
            message: e.to_string(),
        })?;
    let predictions: Vec<PredictionLine> = read_lines(&dir.join(PREDICTIONS_FILE))?;
    let scores: Vec<ScoreLine> = read_lines(&dir.join(SCORES_FILE))?;
    if predictions.len() != scores.len() {
        return Err(RunError::RunDir {
            path: dir.to_owned(),
            message: format!("{} predictions but {} scores", predictions.len(), scores.len()),
        });
    }
    let cells = predictions
        .into_iter()
        .zip(scores)
        .map(|(p, s)| {
            if p.key != s.key {
                return Err(RunError::RunDir {
                    path: dir.to_owned(),
                    message: format!("prediction and score lines out of step at {:?}", p.key),
                });
            }
            Ok(CellRecord {
                key: s.key,
                dataset: s.dataset,
                chapter: s.chapter,
                ground_truth: s.ground_truth,
                prediction: p.prediction,
                score: s.score,
                error: s.error,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunRecord {
        config: summary.config,
        started_at: summary.started_at,
        finished_at: summary.finished_at,
        cells,
    })
}

/// Recomputes every cell score from the stored predictions.
pub fn rescore(record: &mut RunRecord, taxonomy: &Taxonomy, mode: DistanceMode) {
    record.config.distance_mode = mode;
    for cell in &mut record.cells {
        let Some(prediction) = &cell.prediction else { continue };
        match score_question(&prediction.predicted, &cell.ground_truth, taxonomy, mode) {
            Ok(score) => {
                cell.score = Some(score);
                cell.error = None;
            }
            Err(e) => {
                cell.score = None;
                cell.error = Some(CellError {
                    kind: "Metrics".into(),
                    message: e.to_string(),
                });
            }
        }
    }
}

/// Re-scores a stored run in place and rewrites its score and report files.
pub fn rescore_run_dir(dir: &Path, mode: DistanceMode) -> Result<RunRecord, RunError> {
    let mut record = load_run(dir)?;
    let taxonomy = load_taxonomy(&record.config.taxonomy)?;
    rescore(&mut record, &taxonomy, mode);
    persist_run(&record, dir)?;
    report::write_reports(&report::build_report(&record, &taxonomy), dir)?;
    Ok(record)
}
