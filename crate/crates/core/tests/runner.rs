// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lotag_core::gateway::{HttpReply, Transport, TransportError};
use lotag_core::metrics::DistanceMode;
use lotag_core::report::{aggregate_table, build_report, render_table, REPORT_FILES};
use lotag_core::runner::{
    load_run, rescore_run_dir, run_experiment_with, ExperimentConfig, RunError, PREDICTIONS_FILE, SCORES_FILE,
};
use lotag_core::taxonomy::load_taxonomy;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[derive(Default)]
struct CountingTransport(AtomicUsize);

impl Transport for CountingTransport {
    fn post_json(
        &self,
        _url: &str,
        _bearer: &str,
        _body: &serde_json::Value,
        _timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(TransportError("network disabled in tests".into()))
    }
}

fn config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(fixture("experiment_energy.json")).unwrap();
    cfg.output_dir = out.to_owned();
    cfg
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn replay_runs_every_cell_offline_and_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let transport = Arc::new(CountingTransport::default());
    let mut outputs = Vec::new();
    for (i, threads) in [1, 4].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let mut cfg = config(&dir);
        cfg.parallelism = threads;
        let record = run_experiment_with(&cfg, transport.clone()).unwrap();
        assert_eq!(record.cells.len(), 54);
        assert_eq!(record.scored().count(), 54);
        let files: BTreeMap<&str, String> = [SCORES_FILE, PREDICTIONS_FILE]
            .into_iter()
            .chain(REPORT_FILES)
            .map(|f| (f, read(&dir, f)))
            .collect();
        outputs.push(files);
    }
    assert_eq!(transport.0.load(Ordering::SeqCst), 0);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn missing_fingerprint_is_recorded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut entries: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(fixture("cassette_energy.json")).unwrap()).unwrap();
    let first = entries.keys().next().unwrap().clone();
    entries.remove(&first);
    let cassette = tmp.path().join("cassette.json");
    std::fs::write(&cassette, serde_json::to_string(&entries).unwrap()).unwrap();

    let mut cfg = config(&tmp.path().join("out"));
    cfg.cassette = Some(cassette);
    let record = run_experiment_with(&cfg, Arc::new(CountingTransport::default())).unwrap();
    assert_eq!(record.scored().count(), 53);
    let failures: Vec<_> = record.failures().collect();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].error.as_ref().unwrap().kind, "CassetteMiss");

    let failed: usize = aggregate_table(&record).iter().map(|r| r.failed).sum();
    assert_eq!(failed, 1);
}

#[test]
fn missing_cassette_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.cassette = Some(tmp.path().join("absent.json"));
    let err = run_experiment_with(&cfg, Arc::new(CountingTransport::default())).unwrap_err();
    assert!(matches!(err, RunError::ConfigInvalid(_)), "{err}");
}

#[test]
fn invalid_configs_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let base = config(tmp.path());
    let mut cases = Vec::new();
    let mut c = base.clone();
    c.models.clear();
    cases.push(c);
    let mut c = base.clone();
    c.strategies.clear();
    cases.push(c);
    let mut c = base.clone();
    c.parallelism = 0;
    cases.push(c);
    let mut c = base.clone();
    c.samples_per_cell = 0;
    cases.push(c);
    let mut c = base.clone();
    c.cassette = None;
    cases.push(c);
    for c in cases {
        assert!(matches!(c.validate(), Err(RunError::ConfigInvalid(_))));
    }
    assert!(base.validate().is_ok());
    assert_eq!(base.cell_count(9), 54);
}

#[test]
fn stored_run_loads_and_rescores() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let record = run_experiment_with(&cfg, Arc::new(CountingTransport::default())).unwrap();
    let loaded = load_run(tmp.path()).unwrap();
    assert_eq!(loaded.cells, record.cells);

    let rescored = rescore_run_dir(tmp.path(), DistanceMode::SetRule).unwrap();
    assert_eq!(rescored.config.distance_mode, DistanceMode::SetRule);
    for (a, b) in record.cells.iter().zip(&rescored.cells) {
        let (a, b) = (a.score.as_ref().unwrap(), b.score.as_ref().unwrap());
        assert_eq!(b.distance_mode, DistanceMode::SetRule);
        assert_eq!(a.jaccard, b.jaccard);
        // Per LO, the unmatched charge never exceeds the best pairwise charge.
        assert!(b.distance <= a.distance);
    }
    assert!(read(tmp.path(), "report.txt").contains("distance: SetRule"));
}

#[test]
fn table_means_match_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let record = run_experiment_with(&config(tmp.path()), Arc::new(CountingTransport::default())).unwrap();
    let rows = aggregate_table(&record);
    // 2 datasets × 1 model × 3 strategies × 2 formats.
    assert_eq!(rows.len(), 12);
    for row in &rows {
        let cells: Vec<_> = record
            .cells
            .iter()
            .filter(|c| c.dataset == row.dataset && c.key.strategy == row.strategy && c.key.format == row.format)
            .collect();
        let n = cells.len() as f64;
        let j: f64 = cells.iter().map(|c| c.score.as_ref().unwrap().jaccard).sum::<f64>() / n;
        let d: f64 = cells.iter().map(|c| c.score.as_ref().unwrap().distance).sum::<f64>() / n;
        assert_eq!(row.em_total, cells.len());
        assert!((row.jaccard.unwrap() - j).abs() < 1e-12);
        assert!((row.distance.unwrap() - d).abs() < 1e-12);
    }
}

#[test]
fn report_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let record = run_experiment_with(&config(tmp.path()), Arc::new(CountingTransport::default())).unwrap();
    let taxonomy = load_taxonomy(fixture("taxonomy.json")).unwrap();
    let report = build_report(&record, &taxonomy);
    let rendered = render_table(&report.table);
    let path = fixture("golden/table_energy.txt");
    if std::env::var_os("LOTAG_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &rendered).unwrap();
    }
    assert_eq!(rendered, std::fs::read_to_string(&path).unwrap());
}
