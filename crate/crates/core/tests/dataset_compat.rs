//! Loader compatibility against checked-in dataset files: version 1.0
//! rows predate the simulator counter columns, and readers must tolerate
//! columns they do not know about.

use std::path::{Path, PathBuf};

use onedse::datagen::{load_dataset, DatasetManifest};
use onedse::simulator::SimStats;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn v1_0_dataset_loads_with_zero_counters() {
    let ds = load_dataset(&fixture("dataset_v1_0.csv")).unwrap();
    assert_eq!(ds.manifest.version, "1.0");
    assert_eq!(ds.manifest.params.len(), 3);
    assert_eq!(ds.manifest.failures, 1);
    assert_eq!(ds.rows.len(), 3);

    // The counter columns are absent in 1.0 files; every counter reads
    // back as zero rather than failing the load.
    for row in &ds.rows {
        assert_eq!(row.counters, SimStats::default(), "chunk {}", row.chunk_id);
    }

    // Spot-check that the known columns landed in the right fields even
    // with the stray `note` column in the file.
    let last = &ds.rows[2];
    assert_eq!(last.chunk_id, 7);
    assert_eq!(last.ranks, vec![2, 0, 1]);
    assert_eq!(last.metrics.ipc, 0.65);
    assert_eq!(last.metrics.power, 1.1);
    assert_eq!(last.metrics.area, 3.25);
    assert_eq!(last.metrics.objective, 0.19);
}

#[test]
fn current_version_tolerates_missing_counters_and_extra_columns() {
    // The counter columns are optional by contract, not by version: a
    // current-version manifest over the same counter-free CSV must load
    // identically.
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::copy(fixture("dataset_v1_0.csv"), &csv).unwrap();
    let mtext = std::fs::read_to_string(fixture("dataset_v1_0.csv.manifest.json")).unwrap();
    let mut manifest: DatasetManifest = serde_json::from_str(&mtext).unwrap();
    manifest.version = onedse::datagen::MANIFEST_VERSION.to_string();
    std::fs::write(
        dir.path().join("d.csv.manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
    let ds = load_dataset(&csv).unwrap();
    assert_eq!(ds.rows.len(), 3);
    assert!(ds.rows.iter().all(|r| r.counters == SimStats::default()));
}

#[test]
fn unknown_future_version_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::copy(fixture("dataset_v1_0.csv"), &csv).unwrap();
    let mtext = std::fs::read_to_string(fixture("dataset_v1_0.csv.manifest.json")).unwrap();
    let mut manifest: DatasetManifest = serde_json::from_str(&mtext).unwrap();
    manifest.version = "2.0".to_string();
    std::fs::write(
        dir.path().join("d.csv.manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
    let err = load_dataset(&csv).unwrap_err();
    assert!(
        err.to_string().contains("unsupported dataset version"),
        "unexpected error: {err}"
    );
}
