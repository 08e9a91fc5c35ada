// SPDX-License-Identifier: Apache-2.0

//! Writes a replay cassette with scripted replies for every cell of an
//! experiment config, so the grid can run offline.
//!
//! ```text
//! cargo run -p lotag-core --example synth_cassette -- crates/core/fixtures/experiment_energy.json
//! ```
//!
//! Replies are a deterministic function of (question, strategy, format). Two
//! questions reuse model labels quoted in the error analysis of the source
//! study; the rest perturb the ground truth so every metric moves.

use std::collections::BTreeMap;

use lotag_core::corpus::{load_corpus, CorpusMode};
use lotag_core::fsutil::write_atomic;
use lotag_core::gateway::{Cassette, RequestFingerprint};
use lotag_core::prompting::{build_prompt, LOFormat, PromptStrategy};
use lotag_core::runner::ExperimentConfig;
use lotag_core::taxonomy::{load_taxonomy, LOCode};

fn quoted_labels(id: &str) -> Option<&'static [&'static str]> {
    match id {
        "energy-course-01" => Some(&["ME-KE-1", "ME-KE-2", "ME-GPE-1", "ME-GPE-3", "ME-WCF-1", "ME-CME-1"]),
        "energy-course-02" => Some(&["ME-W-3", "ME-WKE-1", "ME-KE-1", "ME-KE-2"]),
        _ => None,
    }
}

fn labels(
    qi: usize,
    id: &str,
    truth: &[LOCode],
    subset: &[LOCode],
    strategy: PromptStrategy,
    format: LOFormat,
) -> Vec<String> {
    if let Some(quoted) = quoted_labels(id) {
        if strategy == PromptStrategy::CoT && format == LOFormat::Structured {
            return quoted.iter().map(|s| s.to_string()).collect();
        }
    }
    let mut out: Vec<String> = truth.iter().map(ToString::to_string).collect();
    let extra = subset
        .iter()
        .cycle()
        .skip(qi * 3 + strategy as usize + format as usize)
        .find(|c| !truth.contains(c))
        .map(ToString::to_string);
    match (strategy, format) {
        (PromptStrategy::Simple, _) => out.extend(extra),
        (PromptStrategy::Explanation, LOFormat::Structured) => {
            if out.len() > 1 {
                out.pop();
            }
        }
        (PromptStrategy::Explanation, LOFormat::NaturalLanguage) => {
            if out.len() > 1 {
                out.remove(0);
            }
            out.extend(extra);
        }
        (PromptStrategy::CoT, LOFormat::Structured) => {}
        (PromptStrategy::CoT, LOFormat::NaturalLanguage) => {
            if qi.is_multiple_of(2) {
                out.extend(extra);
            }
        }
    }
    out
}

fn reply(strategy: PromptStrategy, codes: &[String], qi: usize) -> String {
    match strategy {
        PromptStrategy::Simple => codes.join(", "),
        PromptStrategy::Explanation => {
            let mut s = String::from("Relevant learning objectives:\n");
            for c in codes {
                s.push_str(&format!("- {c}: the problem requires this objective.\n"));
            }
            s
        }
        PromptStrategy::CoT => {
            let mut s = String::from(
                "Step 1: Identify the physical situation and the quantities given.\n\
                 Step 2: Decide which principles connect the givens to the unknown.\n",
            );
            // Out-of-subset and malformed tokens exercise the parser's drop list.
            if qi.is_multiple_of(3) {
                s.push_str("Step 3: This is not a momentum problem, so LM-ILM-1 does not apply.\n");
            } else if qi % 3 == 1 {
                s.push_str("Step 3: Ignore ME-KE-0, which is not a valid objective.\n");
            }
            s.push_str(&format!("Final answer: {}\n", codes.join(", ")));
            s
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .ok_or("usage: synth_cassette <experiment.json>")?;
    let cfg = ExperimentConfig::load(&path)?;
    let cassette_path = cfg.cassette.clone().ok_or("config has no cassette path")?;
    let taxonomy = load_taxonomy(&cfg.taxonomy)?;
    let corpus = load_corpus(&cfg.corpus, &taxonomy, CorpusMode::Labeled)?;

    let mut entries = BTreeMap::new();
    for (qi, q) in corpus.questions().iter().enumerate() {
        let subset = taxonomy.subset_by_chapter(&q.chapter)?;
        let codes: Vec<LOCode> = subset.iter().map(|lo| lo.code.clone()).collect();
        for model in &cfg.models {
            for &strategy in &cfg.strategies {
                for &format in &cfg.formats {
                    let prompt = build_prompt(q, &subset, strategy, format)?;
                    let text = reply(
                        strategy,
                        &labels(qi, &q.id, &q.ground_truth, &codes, strategy, format),
                        qi,
                    );
                    for sample in 0..cfg.samples_per_cell {
                        let fp = RequestFingerprint::compute(model, &prompt.rendered_text, sample);
                        entries.insert(fp.as_str().to_owned(), text.clone());
                    }
                }
            }
        }
    }
    let cassette = Cassette::from_entries(entries);
    write_atomic(&cassette_path, cassette.to_json_string().as_bytes())?;
    println!("wrote {} entries to {}", cassette.len(), cassette_path.display());
    Ok(())
}
