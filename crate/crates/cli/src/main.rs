// SPDX-License-Identifier: Apache-2.0

//! `lotag`: validate inputs, run labeling experiments, re-score and report
//! stored runs, and serve the annotation API.

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lotag_annotate::AnnotationStore;
use lotag_core::corpus::{corpus_stats, load_corpus, CorpusMode};
use lotag_core::metrics::DistanceMode;
use lotag_core::report::{self, build_report_with, render_report, render_table, DEFAULT_MIN_SUPPORT};
use lotag_core::runner::{self, ExperimentConfig, RunRecord};
use lotag_core::taxonomy::{load_manifest, load_taxonomy, validate_against_manifest};

/// Exit status when a run or re-score finished but some cells failed.
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "lotag", version, about = "Learning-objective labeling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a taxonomy, optionally against a manifest and one or more corpora.
    Validate {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// JSONL question file; may be repeated.
        #[arg(long)]
        corpus: Vec<PathBuf>,
        /// Allow questions without ground truth.
        #[arg(long)]
        unlabeled: bool,
        /// Also check manifest chapters the taxonomy does not contain.
        #[arg(long)]
        strict: bool,
    },
    /// Execute the experiment grid described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Re-score a stored run, e.g. under a different distance mode.
    Score {
        run_dir: PathBuf,
        #[arg(long, default_value = "pairwise-min")]
        distance_mode: DistanceMode,
    },
    /// Rebuild and print the reports of a stored run.
    Report {
        run_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
        min_support: usize,
        /// Print only the main table.
        #[arg(long)]
        table_only: bool,
    },
    /// Start the annotation service.
    Serve {
        #[arg(long)]
        taxonomy: PathBuf,
        /// Question bank to annotate (JSONL).
        #[arg(long)]
        corpus: PathBuf,
        /// Snapshot file holding annotation state across restarts.
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Built annotation UI assets, served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Validate {
            taxonomy,
            manifest,
            corpus,
            unlabeled,
            strict,
        } => validate(taxonomy, manifest, corpus, unlabeled, strict),
        Command::Run {
            config,
            output_dir,
            parallelism,
        } => run(config, output_dir, parallelism),
        Command::Score { run_dir, distance_mode } => {
            let record = runner::rescore_run_dir(&run_dir, distance_mode)
                .with_context(|| format!("re-scoring {}", run_dir.display()))?;
            emit(&render_table(&report::aggregate_table(&record)))?;
            Ok(finish(&record))
        }
        Command::Report {
            run_dir,
            min_support,
            table_only,
        } => {
            let record = runner::load_run(&run_dir).with_context(|| format!("loading {}", run_dir.display()))?;
            let taxonomy = load_taxonomy(&record.config.taxonomy)
                .with_context(|| format!("loading {}", record.config.taxonomy.display()))?;
            let report = build_report_with(&record, &taxonomy, min_support);
            report::write_reports(&report, &run_dir)?;
            emit(&if table_only {
                render_table(&report.table)
            } else {
                render_report(&report)
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            taxonomy,
            corpus,
            store,
            port,
            host,
            static_dir,
        } => serve(taxonomy, corpus, store, SocketAddr::new(host, port), static_dir),
    }
}

fn validate(
    taxonomy: PathBuf,
    manifest: Option<PathBuf>,
    corpora: Vec<PathBuf>,
    unlabeled: bool,
    strict: bool,
) -> Result<ExitCode> {
    let t = load_taxonomy(&taxonomy).with_context(|| format!("taxonomy {}", taxonomy.display()))?;
    let mut out = String::new();
    writeln!(out, "taxonomy: {} LOs in {} chapters", t.len(), t.chapters().len())?;
    for chapter in t.chapters() {
        let c = t.chapter_counts(chapter);
        writeln!(out, "  {chapter}: {} codes, {} names", c.codes, c.names)?;
    }
    let mut ok = true;
    if let Some(path) = manifest {
        let mut m = load_manifest(&path).with_context(|| format!("manifest {}", path.display()))?;
        if !strict {
            let absent: Vec<String> = m.keys().filter(|c| !t.chapters().contains(c)).cloned().collect();
            for chapter in &absent {
                m.remove(chapter);
            }
            if !absent.is_empty() {
                writeln!(
                    out,
                    "manifest: skipping chapters not in the taxonomy: {}",
                    absent.join(", ")
                )?;
            }
        }
        let report = validate_against_manifest(&t, &m);
        if report.is_empty() {
            writeln!(out, "manifest: {} chapters match", m.len())?;
        } else {
            ok = false;
            writeln!(out, "manifest: {} mismatch(es)", report.mismatches.len())?;
            for mismatch in &report.mismatches {
                writeln!(out, "  {mismatch}")?;
            }
        }
    }
    let mode = if unlabeled {
        CorpusMode::Unlabeled
    } else {
        CorpusMode::Labeled
    };
    for path in corpora {
        match load_corpus(&path, &t, mode) {
            Ok(corpus) => {
                writeln!(out, "corpus {}: {} questions", path.display(), corpus.len())?;
                for row in corpus_stats(corpus.questions()) {
                    writeln!(
                        out,
                        "  {} / {} / {}: {}",
                        row.chapter, row.source, row.dataset, row.count
                    )?;
                }
            }
            Err(e) => {
                ok = false;
                writeln!(out, "corpus {}: {e}", path.display())?;
            }
        }
    }
    emit(&out)?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// Writes to stdout; a closed pipe (`lotag report | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(config: PathBuf, output_dir: Option<PathBuf>, parallelism: Option<usize>) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("config {}", config.display()))?;
    if let Some(dir) = output_dir {
        cfg.output_dir = std::path::absolute(dir)?;
    }
    if let Some(n) = parallelism {
        cfg.parallelism = n;
    }
    let record = runner::run_experiment(&cfg)?;
    let mut out = render_table(&report::aggregate_table(&record));
    writeln!(out, "\nrun written to {}", cfg.output_dir.display())?;
    emit(&out)?;
    Ok(finish(&record))
}

fn finish(record: &RunRecord) -> ExitCode {
    let failures: Vec<_> = record.failures().collect();
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    eprintln!("{} of {} cells failed", failures.len(), record.cells.len());
    for cell in failures.iter().take(10) {
        let e = cell.error.as_ref().expect("failed cell has an error");
        let k = &cell.key;
        eprintln!(
            "  {} {} {} {} #{}: {}: {}",
            k.question_id, k.model, k.strategy, k.format, k.sample, e.kind, e.message
        );
    }
    ExitCode::from(EXIT_PARTIAL)
}

fn serve(
    taxonomy: PathBuf,
    corpus: PathBuf,
    store: PathBuf,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
) -> Result<ExitCode> {
    let t = Arc::new(load_taxonomy(&taxonomy).with_context(|| format!("taxonomy {}", taxonomy.display()))?);
    let bank =
        load_corpus(&corpus, &t, CorpusMode::Unlabeled).with_context(|| format!("corpus {}", corpus.display()))?;
    if let Some(dir) = &static_dir {
        if !dir.is_dir() {
            bail!("static dir {} is not a directory", dir.display());
        }
    }
    let store = Arc::new(AnnotationStore::open(t, &bank, Some(store))?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(lotag_annotate::serve(store, addr, static_dir))?;
    Ok(ExitCode::SUCCESS)
}
