use cfpersuade::cfengine::{ActionMode, EngineKind};
use cfpersuade::pipeline::{report, run_pipeline, ExperimentConfig, Report, Variant};
use cfpersuade::ErrorKind;

fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed, synthetic_dialogues: 120, n_databases: 3, ..Default::default() };
    cfg.variants = vec![
        Variant { engine: EngineKind::Scm, actions: ActionMode::Causal, latent: true },
        Variant { engine: EngineKind::Kqr, actions: ActionMode::Random, latent: false },
    ];
    cfg.tp3m.hidden = vec![32, 16];
    cfg.tp3m.train.epochs = 10;
    cfg.scm.hidden = vec![32];
    cfg.scm.train.epochs = 10;
    cfg.strategy.epochs = 10;
    cfg.policy.hidden = 16;
    cfg.policy.updates = 40;
    cfg
}

fn read(path: std::path::PathBuf) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn bundle_is_complete_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_pipeline(&small_config(1), dir.path()).unwrap();
    assert_eq!(rep.status, "ok");
    for f in ["report.json", "graph.json", "manifest.json", "config.json", "models/ddp.json", "models/tp3m.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert_eq!(rep.variants.len(), 2);
    let (table, csv) = report(dir.path()).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 + rep.variants.len());
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    for v in &rep.variants {
        assert!(v.policy.is_some());
        let col = header.iter().position(|h| *h == v.name).unwrap();
        let total: f64 = last[col].parse().unwrap();
        assert!((total - v.total).abs() < 1e-9);
        let mean = v.database_totals.iter().sum::<f64>() / v.database_totals.len() as f64;
        assert!((mean - v.total).abs() < 1e-6);
    }
    let loaded = Report::load(dir.path().join("report.json")).unwrap();
    assert_eq!(loaded.config_hash, rep.config_hash);
}

#[test]
fn reruns_are_byte_identical_and_reuse_stages() {
    let cfg = small_config(2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&cfg, b.path()).unwrap();
    assert_eq!(read(a.path().join("report.json")), read(b.path().join("report.json")));
    assert_eq!(read(a.path().join("manifest.json")), read(b.path().join("manifest.json")));
    // second run in place loads every stage from disk
    run_pipeline(&cfg, a.path()).unwrap();
    assert_eq!(read(a.path().join("report.json")), read(b.path().join("report.json")));
}

#[test]
fn config_hash_tracks_hyperparameters() {
    let a = small_config(3);
    let mut b = a.clone();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    b.policy.gamma = 0.5;
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    let mut c = a.clone();
    c.seed = 4;
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn stage_failure_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { corpus: Some(dir.path().join("missing.jsonl")), ..small_config(0) };
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    let rep = Report::load(dir.path().join("report.json")).unwrap();
    assert_eq!(rep.status, "failed");
    assert_eq!(rep.error.unwrap().stage, "ingest");
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { n_databases: 0, ..small_config(0) };
    assert_eq!(run_pipeline(&cfg, dir.path()).unwrap_err().kind(), ErrorKind::Config);
}
