// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! ```text
//! cargo test -p lotag-core --test acceptance
//! ```
//!
//! Expected values come from oracles written here, independent of the
//! library: a brute-force metric reference, hand-computed distances, label
//! sets and prompt text transcribed from the source study, and counts read
//! off the study's taxonomy table.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use lotag_core::analytics::{f1_by_count_heatmap, CountedScore, HeatmapAxis};
use lotag_core::corpus::{load_corpus, CorpusMode, Question};
use lotag_core::gateway::{parse_prediction, HttpReply, Transport, TransportError};
use lotag_core::metrics::{score_question, DistanceMode, QuestionScore};
use lotag_core::prompting::{build_prompt, render_lo, LOFormat, PromptStrategy};
use lotag_core::report::{build_report, REPORT_FILES};
use lotag_core::runner::{run_experiment_with, ExperimentConfig, PREDICTIONS_FILE, SCORES_FILE};
use lotag_core::taxonomy::{
    load_manifest, load_taxonomy, validate_against_manifest, ActionType, LOCategory, LOCode, LearningObjective,
    Taxonomy,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

const TOL: f64 = 1e-12;
const FIXTURE_TOL: f64 = 1e-9;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn codes(list: &[&str]) -> Vec<LOCode> {
    list.iter().map(|c| c.parse().expect("fixture code")).collect()
}

// ---------------------------------------------------------------------------
// Synthetic taxonomy and brute-force reference

const SYN_LOS: usize = 30;

/// 10 names × 3 codes; the action cycles so names mix actions.
fn syn_action(i: usize) -> ActionType {
    ActionType::ALL[(i * 7 / 3) % 4]
}

fn syn_name(i: usize) -> usize {
    i / 3
}

fn syn_code(i: usize) -> LOCode {
    LOCode::new("SY", &format!("N{}", syn_name(i)), (i % 3 + 1) as u32).unwrap()
}

fn synthetic_taxonomy() -> Taxonomy {
    let los = (0..SYN_LOS)
        .map(|i| LearningObjective {
            code: syn_code(i),
            name: format!("Name {}", syn_name(i)),
            item: format!("item {i}"),
            action: syn_action(i),
            provided: "Given".into(),
            outcome: "Outcome".into(),
            category: LOCategory::PhysicsLaws,
            chapter: "Synthetic".into(),
        })
        .collect();
    Taxonomy::new(los).unwrap()
}

struct Reference {
    em: f64,
    j: f64,
    p: f64,
    r: f64,
    f1: f64,
    pairwise: u32,
    set_rule: u32,
    inter: usize,
}

fn ref_d(a: usize, b: usize) -> u32 {
    if a == b {
        0
    } else if syn_name(a) != syn_name(b) {
        3
    } else if syn_action(a) != syn_action(b) {
        2
    } else {
        1
    }
}

fn ref_unmatched(a: usize, other: &BTreeSet<usize>) -> u32 {
    if other.iter().any(|&o| syn_name(o) == syn_name(a)) {
        1
    } else {
        2
    }
}

fn reference(f: &BTreeSet<usize>, g: &BTreeSet<usize>) -> Reference {
    let inter = f.intersection(g).count();
    let union = f.union(g).count();
    let (nf, ng) = (f.len(), g.len());
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let both_empty = nf == 0 && ng == 0;
    let p = if both_empty { 1.0 } else { ratio(inter, nf) };
    let r = if both_empty { 1.0 } else { ratio(inter, ng) };
    let f1 = if both_empty {
        1.0
    } else if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    let pairwise = f
        .iter()
        .map(|&a| {
            if g.is_empty() {
                ref_unmatched(a, g)
            } else {
                g.iter().map(|&b| ref_d(a, b)).min().unwrap()
            }
        })
        .sum::<u32>()
        + g.difference(f).map(|&b| ref_unmatched(b, f)).sum::<u32>();
    let set_rule = f.difference(g).map(|&a| ref_unmatched(a, g)).sum::<u32>()
        + g.difference(f).map(|&b| ref_unmatched(b, f)).sum::<u32>();
    Reference {
        em: if f == g { 1.0 } else { 0.0 },
        j: if union == 0 { 1.0 } else { ratio(inter, union) },
        p,
        r,
        f1,
        pairwise,
        set_rule,
        inter,
    }
}

fn random_pairs(seed: u64, n: usize) -> Vec<(BTreeSet<usize>, BTreeSet<usize>)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let pool: Vec<usize> = (0..SYN_LOS).collect();
    (0..n)
        .map(|_| {
            let pick = |rng: &mut StdRng| {
                let k = rng.gen_range(0..=8);
                pool.choose_multiple(rng, k).copied().collect::<BTreeSet<_>>()
            };
            let g = pick(&mut rng);
            let f = match rng.gen_range(0..5) {
                0 => g.clone(),
                1 => {
                    let mut f = g.clone();
                    f.insert(rng.gen_range(0..SYN_LOS));
                    f
                }
                _ => pick(&mut rng),
            };
            (f, g)
        })
        .collect()
}

fn library_score(t: &Taxonomy, f: &BTreeSet<usize>, g: &BTreeSet<usize>, mode: DistanceMode) -> QuestionScore {
    let f: Vec<LOCode> = f.iter().map(|&i| syn_code(i)).collect();
    let g: Vec<LOCode> = g.iter().map(|&i| syn_code(i)).collect();
    score_question(&f, &g, t, mode).unwrap()
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let t = synthetic_taxonomy();
    let pairs = random_pairs(0x5eed_0001, 1000);
    let mut worst: f64 = 0.0;
    for (i, (f, g)) in pairs.iter().enumerate() {
        let want = reference(f, g);
        let pm = library_score(&t, f, g, DistanceMode::PairwiseMin);
        let sr = library_score(&t, f, g, DistanceMode::SetRule);
        for (name, got, exp) in [
            ("EM", f64::from(pm.exact_match), want.em),
            ("J", pm.jaccard, want.j),
            ("P", pm.precision, want.p),
            ("R", pm.recall, want.r),
            ("F1", pm.f1, want.f1),
        ] {
            let delta = (got - exp).abs();
            worst = worst.max(delta);
            ensure!(delta <= TOL, "pair {i}: {name} {got} vs reference {exp}");
        }
        ensure!(
            pm.distance == f64::from(want.pairwise),
            "pair {i}: PairwiseMin distance {} vs reference {}",
            pm.distance,
            want.pairwise
        );
        ensure!(
            sr.distance == f64::from(want.set_rule),
            "pair {i}: SetRule distance {} vs reference {}",
            sr.distance,
            want.set_rule
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}, limit 5 s");
    Ok(format!(
        "1000 pairs over 30 LOs, max |delta| {worst:.1e}, distances exact in both modes, {} ms",
        elapsed.as_millis()
    ))
}

fn criterion_2() -> Outcome {
    let lm = load_taxonomy(fixture("taxonomy_linear_momentum.json")).map_err(|e| e.to_string())?;
    let energy = load_taxonomy(fixture("taxonomy_energy.json")).map_err(|e| e.to_string())?;

    // Skater question: model labels vs human labels.
    let f = codes(&["LM-ILM-2", "LM-CLM-1", "LM-CLM-2", "LM-CLM-4", "LM-CLM-5", "LM-ILM-6"]);
    let g = codes(&["LM-ILM-2"]);
    let s1 = score_question(&f, &g, &lm, DistanceMode::default()).map_err(|e| e.to_string())?;
    ensure!(
        (s1.jaccard - 1.0 / 6.0).abs() <= FIXTURE_TOL,
        "skater J = {}",
        s1.jaccard
    );
    ensure!((s1.f1 - 2.0 / 7.0).abs() <= FIXTURE_TOL, "skater F1 = {}", s1.f1);

    // Motorcycle question.
    let f = codes(&["ME-W-3", "ME-WKE-1", "ME-KE-1", "ME-KE-2"]);
    let g = codes(&["ME-WKE-1", "ME-W-2", "ME-W-3", "ME-KE-2", "ME-KE-1"]);
    let s3 = score_question(&f, &g, &energy, DistanceMode::default()).map_err(|e| e.to_string())?;
    ensure!((s3.jaccard - 0.8).abs() <= FIXTURE_TOL, "motorcycle J = {}", s3.jaccard);
    ensure!((s3.f1 - 8.0 / 9.0).abs() <= FIXTURE_TOL, "motorcycle F1 = {}", s3.f1);
    Ok(format!(
        "skater J {:.6} F1 {:.6}; motorcycle J {:.6} F1 {:.6}",
        s1.jaccard, s1.f1, s3.jaccard, s3.f1
    ))
}

fn criterion_3() -> Outcome {
    let t = synthetic_taxonomy();
    let pairs = random_pairs(0x5eed_0003, 1000);
    let mut equal_pairs = 0;
    let mut worst: f64 = 0.0;
    for (i, (f, g)) in pairs.iter().enumerate() {
        for mode in [DistanceMode::PairwiseMin, DistanceMode::SetRule] {
            let s = library_score(&t, f, g, mode);
            let chain = [s.exact_match == 1, s.jaccard == 1.0, s.f1 == 1.0, s.distance == 0.0];
            ensure!(
                chain.iter().all(|&c| c == chain[0]),
                "pair {i} ({mode}): EM/J/F1/D==0 disagree: {chain:?}"
            );
            if mode == DistanceMode::PairwiseMin && chain[0] {
                equal_pairs += 1;
            }

            // F1 = 2J/(1+J) as rationals: J = I/U, so 2J/(1+J) = 2I/(U+I),
            // and F1 = 2I/(|F|+|G|) with U + I = |F| + |G|.
            let r = reference(f, g);
            let (inter, nf, ng) = (r.inter as u64, f.len() as u64, g.len() as u64);
            let union = nf + ng - inter;
            if nf + ng > 0 {
                ensure!(
                    2 * inter * (nf + ng) == 2 * inter * (union + inter),
                    "pair {i}: rational identity fails"
                );
                // Library values are the correctly rounded rationals.
                ensure!(s.jaccard == inter as f64 / union as f64, "pair {i}: J not I/U");
                ensure!(
                    s.f1 == (2 * inter) as f64 / (nf + ng) as f64,
                    "pair {i}: F1 not 2I/(|F|+|G|)"
                );
            }
            worst = worst.max((s.f1 - 2.0 * s.jaccard / (1.0 + s.jaccard)).abs());
        }
    }
    ensure!(equal_pairs > 0, "no F == G pairs drawn; chain only tested one way");
    ensure!(worst <= 4.0 * f64::EPSILON, "f64 deviation {worst:e} exceeds 4 ulp");
    Ok(format!(
        "1000 pairs ({equal_pairs} with F == G), chain holds in both modes; F1 == 2J/(1+J) exact over rationals, f64 deviation {worst:.1e}"
    ))
}

fn criterion_4() -> Outcome {
    let t = load_taxonomy(fixture("taxonomy_energy.json")).map_err(|e| e.to_string())?;
    let ke1 = codes(&["ME-KE-1"]);
    let ke2 = codes(&["ME-KE-2"]);
    let d = |f: &[LOCode], g: &[LOCode], mode| score_question(f, g, &t, mode).map(|s| s.distance);
    let pm = d(&ke1, &ke2, DistanceMode::PairwiseMin).map_err(|e| e.to_string())?;
    let sr = d(&ke1, &ke2, DistanceMode::SetRule).map_err(|e| e.to_string())?;
    let empty_pm = d(&[], &ke2, DistanceMode::PairwiseMin).map_err(|e| e.to_string())?;
    let empty_sr = d(&[], &ke2, DistanceMode::SetRule).map_err(|e| e.to_string())?;
    // ME-KE-1 is Conc.ID and ME-KE-2 Conc.Prop under one name: pairwise
    // charges 2 for F's LO plus 1 for G's unmatched LO; the set rule charges
    // 1 + 1.
    ensure!(pm == 3.0, "PairwiseMin D = {pm}, expected 3");
    ensure!(sr == 2.0, "SetRule D = {sr}, expected 2");
    ensure!(
        empty_pm == 2.0 && empty_sr == 2.0,
        "F = {{}} gives {empty_pm}/{empty_sr}, expected 2/2"
    );
    Ok("{ME-KE-1} vs {ME-KE-2}: 3 pairwise, 2 set rule; {} vs {ME-KE-2}: 2 in both".into())
}

fn criterion_5() -> Outcome {
    let manifest = load_manifest(fixture("manifest_selected.json")).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    // Counts read off the taxonomy table: (file, chapter, codes, names, action split).
    let expected = [
        ("taxonomy_newtons_laws.json", "Newton's Laws", 41, 16, [14, 8, 17, 2]),
        ("taxonomy_energy.json", "Energy", 20, 10, [5, 5, 7, 3]),
        ("taxonomy_linear_momentum.json", "Linear Momentum", 18, 6, [6, 5, 7, 0]),
    ];
    for (file, chapter, n_codes, n_names, actions) in expected {
        let t = load_taxonomy(fixture(file)).map_err(|e| e.to_string())?;
        let only: BTreeMap<_, _> = manifest
            .iter()
            .filter(|(k, _)| *k == chapter)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ensure!(!only.is_empty(), "manifest has no {chapter} entry");
        let report = validate_against_manifest(&t, &only);
        ensure!(report.is_empty(), "{chapter}: {:?}", report.mismatches);

        let counts = t.chapter_counts(chapter);
        ensure!(counts.codes == n_codes, "{chapter}: {} codes", counts.codes);
        ensure!(counts.names == n_names, "{chapter}: {} names", counts.names);
        for (action, want) in ActionType::ALL.iter().zip(actions) {
            let got = counts.actions.get(action).copied().unwrap_or(0);
            ensure!(got == want, "{chapter}: {action:?} {got}, expected {want}");
        }
        summary.push(format!("{chapter} {n_codes}/{n_names}"));
    }
    let combined = load_taxonomy(fixture("taxonomy.json")).map_err(|e| e.to_string())?;
    let report = validate_against_manifest(&combined, &manifest);
    ensure!(report.is_empty(), "combined taxonomy: {:?}", report.mismatches);
    Ok(format!("empty mismatch reports; {}", summary.join(", ")))
}

const SIMPLE_BLOCK: &str = "Your task is to analyze the question and select ALL relevant learning objectives.
The instructions are:
1. Carefully read the physics question and the list of learning objectives.
2. Select ALL learning objectives that are directly applicable to solving or understanding the question.";

const EXPLANATION_BLOCK: &str = "Your task is to analyze the question and select ALL relevant learning objectives. Please provide brief explanation for each selection.
The instructions are:
1. Carefully read the physics question and the list of learning objectives.
2. Select ALL learning objectives that are directly applicable to solving or understanding the question
3. For each selected objective, provide a concise explanation of its relevance to the question.";

const COT_BLOCK: &str = "Your task is to analyze the question and select ALL relevant learning objectives. Use chain-of-thought reasoning with step-by-step thought process. Please provide brief explanation for each selection.
The instructions are:
1. Carefully read the physics question and the list of learning objectives.
2. Provide step-by-step thought process to analyze the question and think about its relevance with the provided learning objectives.
3. Based on the thought process, select ALL learning objectives that are directly applicable to solving or understanding the question.
4. For each selected objective, provide a concise explanation of its relevance to the question.";

fn numbered_instructions(prompt: &str) -> usize {
    let Some(rest) = prompt.split("The instructions are:\n").nth(1) else {
        return 0;
    };
    rest.lines()
        .take_while(|l| {
            l.split_once(". ")
                .is_some_and(|(n, _)| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
        })
        .count()
}

fn criterion_6() -> Outcome {
    let t = load_taxonomy(fixture("taxonomy.json")).map_err(|e| e.to_string())?;
    let subset = t.subset_by_chapter("Energy").map_err(|e| e.to_string())?;
    let question = Question {
        id: "golden".into(),
        chapter: "Energy".into(),
        source: "Course".into(),
        dataset: "Energy".into(),
        text: "A 2.0 kg cart rolls down a 1.0 m high ramp. Find its speed at the bottom.".into(),
        ground_truth: vec![],
        notes: None,
    };
    let closing = "Select ALL relevant objectives, not just the most relevant one.";
    let mut cells = 0;
    for (strategy, block, count) in [
        (PromptStrategy::Simple, SIMPLE_BLOCK, 2),
        (PromptStrategy::Explanation, EXPLANATION_BLOCK, 3),
        (PromptStrategy::CoT, COT_BLOCK, 4),
    ] {
        for format in LOFormat::ALL {
            let p = build_prompt(&question, &subset, strategy, format).map_err(|e| e.to_string())?;
            let text = &p.rendered_text;
            ensure!(text.contains(block), "{strategy}/{format}: strategy block not verbatim");
            ensure!(text.contains(closing), "{strategy}/{format}: closing sentence missing");
            let n = numbered_instructions(text);
            ensure!(
                n == count,
                "{strategy}/{format}: {n} numbered instructions, expected {count}"
            );
            for lo in &subset {
                let line = render_lo(lo, format);
                let hits = text.lines().filter(|l| *l == line).count();
                let code_hits = text
                    .lines()
                    .filter(|l| l.starts_with(&format!("{}: ", lo.code)))
                    .count();
                ensure!(
                    hits == 1 && code_hits == 1,
                    "{strategy}/{format}: {} listed {code_hits} times",
                    lo.code
                );
            }
            ensure!(!text.contains("[INSERT"), "{strategy}/{format}: unfilled placeholder");
            cells += 1;
        }
    }
    Ok(format!(
        "{cells} cells, instruction counts 2/3/4, all {} Energy LOs listed once",
        subset.len()
    ))
}

#[derive(Default)]
struct NoNetwork(AtomicUsize);

impl Transport for NoNetwork {
    fn post_json(&self, _: &str, _: &str, _: &serde_json::Value, _: Duration) -> Result<HttpReply, TransportError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(TransportError("network access attempted".into()))
    }
}

/// (scored cells, failed cells, run directory contents by file name)
type ReplayOutput = (usize, usize, BTreeMap<String, Vec<u8>>);

fn replay_once(dir: &Path, transport: Arc<NoNetwork>) -> Result<ReplayOutput, String> {
    let mut cfg = ExperimentConfig::load(fixture("experiment_energy.json")).map_err(|e| e.to_string())?;
    cfg.output_dir = dir.to_owned();
    let record = run_experiment_with(&cfg, transport).map_err(|e| e.to_string())?;
    let mut files = BTreeMap::new();
    for name in [SCORES_FILE, PREDICTIONS_FILE].into_iter().chain(REPORT_FILES) {
        files.insert(
            name.to_owned(),
            std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?,
        );
    }
    Ok((record.cells.len(), record.scored().count(), files))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let transport = Arc::new(NoNetwork::default());
    let (cells_a, scored_a, files_a) = replay_once(&tmp.path().join("a"), transport.clone())?;
    let (cells_b, scored_b, files_b) = replay_once(&tmp.path().join("b"), transport.clone())?;
    let elapsed = start.elapsed();
    ensure!(cells_a == 54 && cells_b == 54, "cells {cells_a}/{cells_b}, expected 54");
    ensure!(
        scored_a == 54 && scored_b == 54,
        "scored {scored_a}/{scored_b}, expected 54"
    );
    let calls = transport.0.load(Ordering::SeqCst);
    ensure!(calls == 0, "{calls} network calls attempted");
    for (name, bytes) in &files_a {
        ensure!(files_b.get(name) == Some(bytes), "{name} differs between runs");
    }
    ensure!(
        elapsed < Duration::from_secs(10),
        "two runs took {elapsed:?}, limit 10 s"
    );
    Ok(format!(
        "54/54 cells scored twice, 0 network calls, {} files byte-identical, {} ms",
        files_a.len(),
        elapsed.as_millis()
    ))
}

fn criterion_8() -> Outcome {
    let t = load_taxonomy(fixture("taxonomy.json")).map_err(|e| e.to_string())?;
    let allowed: BTreeSet<LOCode> = t
        .subset_by_chapter("Energy")
        .unwrap()
        .iter()
        .map(|lo| lo.code.clone())
        .collect();
    let inside: Vec<String> = allowed.iter().map(ToString::to_string).collect();
    let outside: Vec<String> = t
        .los()
        .iter()
        .filter(|lo| lo.chapter != "Energy")
        .map(|lo| lo.code.to_string())
        .chain(
            [
                "ME-KE-9",
                "ME-ZZ-1",
                "XX-KE-1",
                "ME-KE-0",
                "ME-KE-01",
                "me-ke-1x",
                "ME-KE-",
                "-ME-KE-1-",
            ]
            .map(String::from),
        )
        .collect();
    let filler = [
        "the", "answer", "is", "LO", "ME", "KE-1", "\n", "1.", "(", ")", ",", ";", "**", "Step", "-", "ME-",
    ];
    let mut rng = StdRng::seed_from_u64(0x5eed_0008);
    let mut predicted_total = 0;
    let mut dropped_total = 0;
    for i in 0..500 {
        let mut text = String::new();
        for _ in 0..rng.gen_range(0..40) {
            let token = match rng.gen_range(0..4) {
                0 => inside.choose(&mut rng).unwrap().clone(),
                1 => outside.choose(&mut rng).unwrap().clone(),
                2 => filler.choose(&mut rng).unwrap().to_string(),
                _ => (0..rng.gen_range(1..8))
                    .map(|_| rng.gen_range(b'!'..=b'~') as char)
                    .collect(),
            };
            text.push_str(&token);
            text.push(if rng.gen_bool(0.2) { '-' } else { ' ' });
        }
        let parsed = parse_prediction(&text, &allowed);
        for code in &parsed.predicted {
            ensure!(
                allowed.contains(code),
                "reply {i}: {code} outside the subset in {text:?}"
            );
        }
        predicted_total += parsed.predicted.len();
        dropped_total += parsed.dropped.len();
    }
    ensure!(
        predicted_total > 0 && dropped_total > 0,
        "fuzz never exercised both paths"
    );
    Ok(format!(
        "500 replies, {predicted_total} codes kept, {dropped_total} tokens dropped, none outside S"
    ))
}

fn criterion_9() -> Outcome {
    // Synthetic bucket: 15 questions with one human LO and F1 0.5.
    let synthetic = vec![
        CountedScore {
            ground_truth_len: 1,
            predicted_len: 2,
            f1: 0.5
        };
        15
    ];
    let b = f1_by_count_heatmap(&synthetic, HeatmapAxis::Human);
    ensure!(
        b.len() == 1 && b[0].lo_count == 1 && b[0].questions == 15 && (b[0].mean_f1 - 0.5).abs() < TOL,
        "synthetic heatmap {b:?}"
    );

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::load(fixture("experiment_energy.json")).map_err(|e| e.to_string())?;
    cfg.output_dir = tmp.path().to_owned();
    let record = run_experiment_with(&cfg, Arc::new(NoNetwork::default())).map_err(|e| e.to_string())?;
    let t = load_taxonomy(&cfg.taxonomy).map_err(|e| e.to_string())?;
    let corpus = load_corpus(&cfg.corpus, &t, CorpusMode::Labeled).map_err(|e| e.to_string())?;
    let n = corpus.len();
    let report = build_report(&record, &t);

    let mut sums: BTreeMap<(String, HeatmapAxis), usize> = BTreeMap::new();
    for row in &report.f1_by_count {
        *sums
            .entry((format!("{}/{}/{}", row.model, row.strategy, row.format), row.axis))
            .or_default() += row.questions;
    }
    ensure!(
        sums.len() == 12,
        "{} heatmaps, expected 6 labelers × 2 axes",
        sums.len()
    );
    for (key, total) in &sums {
        ensure!(*total == n, "{key:?}: buckets hold {total} questions, corpus has {n}");
    }

    // Ground-truth support counted straight from the corpus file.
    let mut support: BTreeMap<LOCode, usize> = BTreeMap::new();
    for q in corpus.questions() {
        for c in &q.ground_truth {
            *support.entry(c.clone()).or_default() += 1;
        }
    }
    let frequent: BTreeSet<&LOCode> = support.iter().filter(|(_, &s)| s >= 5).map(|(c, _)| c).collect();
    let rare = support.iter().filter(|(_, &s)| s < 5).count();
    ensure!(
        !frequent.is_empty() && rare > 0,
        "fixture lacks LOs on both sides of the threshold"
    );
    let labelers: BTreeSet<&str> = report.per_lo_accuracy.iter().map(|r| r.labeler.as_str()).collect();
    ensure!(labelers.len() == 6, "{} labelers with accuracy rows", labelers.len());
    for labeler in labelers {
        let listed: BTreeSet<&LOCode> = report
            .per_lo_accuracy
            .iter()
            .filter(|r| r.labeler == labeler)
            .map(|r| &r.code)
            .collect();
        ensure!(
            listed == frequent,
            "{labeler}: accuracy rows {listed:?}, expected {frequent:?}"
        );
    }

    let energy_codes = t.subset_by_chapter("Energy").unwrap().len();
    let human: Vec<_> = report.lo_frequency.iter().filter(|r| r.labeler == "human").collect();
    ensure!(
        human.len() == energy_codes,
        "human frequency lists {} of {energy_codes} LOs",
        human.len()
    );
    let zeros: Vec<String> = human
        .iter()
        .filter(|r| r.count == 0)
        .map(|r| r.code.to_string())
        .collect();
    let expected_zeros = energy_codes - support.len();
    ensure!(
        zeros.len() == expected_zeros,
        "{} zero-count LOs listed, expected {expected_zeros}",
        zeros.len()
    );
    let total: usize = human.iter().map(|r| r.count).sum();
    let labels: usize = corpus.questions().iter().map(|q| q.ground_truth.len()).sum();
    ensure!(total == labels, "frequency sum {total} != label count {labels}");

    Ok(format!(
        "12 heatmaps partition {n} questions; accuracy lists the {} LOs with support >= 5; {} zero-count LOs listed",
        frequent.len(),
        zeros.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle", criterion_1),
        ("error-analysis fixtures", criterion_2),
        ("identity chain", criterion_3),
        ("distance hand oracle", criterion_4),
        ("taxonomy manifest", criterion_5),
        ("prompt golden cells", criterion_6),
        ("replay determinism", criterion_7),
        ("subset constraint fuzz", criterion_8),
        ("analytics", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
