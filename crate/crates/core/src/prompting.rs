// SPDX-License-Identifier: Apache-2.0

//! Prompt assembly for the strategy × LO-format grid.
//!
//! Prompt text comes from versioned template assets under `templates/`.
//! A template is plain text with placeholders of the form `[INSERT NAME]`,
//! where `NAME` is one or more uppercase words. The recognised placeholders
//! are `[INSERT FORMAT]`, `[INSERT LEARNING OBJECTIVES]` and
//! `[INSERT THE QUESTION]`; anything else is rejected when the template is
//! parsed.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Question;
use crate::taxonomy::LearningObjective;

pub const TEMPLATE_VERSION: &str = "v1";

const SIMPLE: &str = include_str!("../templates/v1/simple.txt");
const EXPLANATION: &str = include_str!("../templates/v1/explanation.txt");
const COT: &str = include_str!("../templates/v1/cot.txt");
const FORMAT_STRUCTURED: &str = include_str!("../templates/v1/format_structured.txt");
const FORMAT_NATURAL: &str = include_str!("../templates/v1/format_natural_language.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("LO subset is empty")]
    EmptyLOSubset,
    #[error("template: unknown placeholder {0:?}")]
    UnknownPlaceholder(String),
    #[error("template: unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptStrategy {
    Simple,
    Explanation,
    CoT,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 3] = [Self::Simple, Self::Explanation, Self::CoT];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "Simple",
            Self::Explanation => "Explanation",
            Self::CoT => "CoT",
        }
    }

    fn template(self) -> &'static Template {
        static PARSED: OnceLock<[Template; 3]> = OnceLock::new();
        let all = PARSED
            .get_or_init(|| [SIMPLE, EXPLANATION, COT].map(|t| Template::parse(t).expect("bundled template parses")));
        &all[self as usize]
    }

    /// Raw template source for this strategy.
    pub fn template_source(self) -> &'static str {
        match self {
            Self::Simple => SIMPLE,
            Self::Explanation => EXPLANATION,
            Self::CoT => COT,
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Self::Simple),
            "explanation" => Ok(Self::Explanation),
            "cot" | "chain-of-thought" => Ok(Self::CoT),
            _ => Err(format!("unknown prompting strategy {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LOFormat {
    Structured,
    NaturalLanguage,
}

impl LOFormat {
    pub const ALL: [LOFormat; 2] = [Self::Structured, Self::NaturalLanguage];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Structured => "Structured",
            Self::NaturalLanguage => "NaturalLanguage",
        }
    }

    /// Pattern description substituted for `[INSERT FORMAT]`.
    pub fn description(self) -> &'static str {
        match self {
            Self::Structured => FORMAT_STRUCTURED.trim_end(),
            Self::NaturalLanguage => FORMAT_NATURAL.trim_end(),
        }
    }
}

impl fmt::Display for LOFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LOFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "structured" => Ok(Self::Structured),
            "naturallanguage" | "natural" | "nl" => Ok(Self::NaturalLanguage),
            _ => Err(format!("unknown LO format {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Format,
    Objectives,
    Question,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Template {
    segments: Vec<Segment>,
}

impl Template {
    fn parse(source: &str) -> Result<Self, PromptError> {
        const OPEN: &str = "[INSERT ";
        let mut segments = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(start) = rest.find(OPEN) {
            let end = rest[start..]
                .find(']')
                .map(|e| start + e)
                .ok_or(PromptError::Unterminated(offset + start))?;
            if start > 0 {
                segments.push(Segment::Text(rest[..start].to_owned()));
            }
            let slot = match &rest[start + OPEN.len()..end] {
                "FORMAT" => Slot::Format,
                "LEARNING OBJECTIVES" => Slot::Objectives,
                "THE QUESTION" => Slot::Question,
                other => return Err(PromptError::UnknownPlaceholder(other.to_owned())),
            };
            segments.push(Segment::Slot(slot));
            offset += end + 1;
            rest = &rest[end + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_owned()));
        }
        Ok(Self { segments })
    }

    fn render(&self, format: &str, objectives: &str, question: &str) -> String {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(Slot::Format) => out.push_str(format),
                Segment::Slot(Slot::Objectives) => out.push_str(objectives),
                Segment::Slot(Slot::Question) => out.push_str(question),
            }
        }
        out
    }
}

/// Lowercases the leading letter unless the first word is an acronym.
fn lower_first(s: &str) -> String {
    let s = s.trim();
    let first_word = s.split_whitespace().next().unwrap_or("");
    let acronym = first_word.chars().filter(|c| c.is_alphabetic()).count() > 1
        && first_word.chars().filter(|c| c.is_alphabetic()).all(char::is_uppercase);
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if !acronym => c.to_lowercase().chain(chars).collect(),
        _ => s.to_owned(),
    }
}

pub fn render_lo(lo: &LearningObjective, format: LOFormat) -> String {
    match format {
        LOFormat::Structured => format!(
            "{}: {}, {}, Provided: {}, Outcome: {}",
            lo.code,
            lo.name,
            lo.item.trim(),
            lo.provided.trim(),
            lo.outcome.trim()
        ),
        LOFormat::NaturalLanguage => {
            let outcome = lower_first(&lo.outcome);
            let outcome = outcome.trim_end_matches(['.', ' ']);
            format!(
                "{}: LO Name: {}, Description: {}, Explanation: Given {}, the student should be able to {}.",
                lo.code,
                lo.name,
                lo.item.trim(),
                lower_first(&lo.provided),
                outcome
            )
        }
    }
}

#[derive(Clone, Debug)]
pub struct PromptSpec<'a> {
    pub strategy: PromptStrategy,
    pub format: LOFormat,
    pub lo_subset: Vec<&'a LearningObjective>,
    pub question: &'a Question,
    pub rendered_text: String,
}

/// Assembles the full prompt. `lo_subset` order is preserved.
pub fn build_prompt<'a>(
    question: &'a Question,
    lo_subset: &[&'a LearningObjective],
    strategy: PromptStrategy,
    format: LOFormat,
) -> Result<PromptSpec<'a>, PromptError> {
    if lo_subset.is_empty() {
        return Err(PromptError::EmptyLOSubset);
    }
    let objectives = lo_subset
        .iter()
        .map(|lo| render_lo(lo, format))
        .collect::<Vec<_>>()
        .join("\n");
    let rendered_text = strategy
        .template()
        .render(format.description(), &objectives, question.text.trim());
    Ok(PromptSpec {
        strategy,
        format,
        lo_subset: lo_subset.to_vec(),
        question,
        rendered_text,
    })
}
