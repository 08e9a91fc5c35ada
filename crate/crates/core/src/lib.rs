// SPDX-License-Identifier: Apache-2.0

//! Labeling physics questions with atomic learning objectives (LOs) through
//! LLM prompting, and scoring the labels against expert ground truth.
//!
//! The pipeline runs taxonomy → corpus → prompting → gateway → metrics →
//! runner → report. With the default `parallel` feature, grid cells and batch
//! scoring run on rayon; without it everything runs sequentially.

pub mod analytics;
pub mod corpus;
pub mod fsutil;
pub mod gateway;
pub mod metrics;
pub mod prompting;
pub mod report;
pub mod runner;
pub mod taxonomy;

pub use corpus::{corpus_stats, load_corpus, Corpus, CorpusMode, Question};
pub use gateway::{parse_prediction, BackendMode, Cassette, Gateway, ModelConfig, RequestFingerprint};
pub use metrics::{score_question, DistanceMode, LabelSet, QuestionScore};
pub use prompting::{build_prompt, render_lo, LOFormat, PromptStrategy};
pub use runner::{run_experiment, ExperimentConfig, RunRecord};
pub use taxonomy::{load_taxonomy, parse_lo_code, ActionType, LOCategory, LOCode, LearningObjective, Taxonomy};
