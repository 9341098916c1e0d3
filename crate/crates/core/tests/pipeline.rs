use std::fs;
use std::path::Path;

use refscore_core::client::{MockConfig, ModelId};
use refscore_core::corpus::ViewKind;
use refscore_core::experiment::{
    self, analyze, report, run_experiment, BackendKind, CellStatus, ExperimentConfig, HarnessError,
};
use refscore_core::prompts::StrategyId;
use refscore_core::score_parser::ManualQueue;
use refscore_core::synthetic::synthetic_corpus;

fn setup(root: &Path, articles: usize) -> ExperimentConfig {
    let (corpus, latent) = synthetic_corpus(articles, 9);
    corpus.save(&root.join("corpus")).unwrap();
    let latent_path = root.join("latent.json");
    fs::write(&latent_path, serde_json::to_string(&latent).unwrap()).unwrap();
    ExperimentConfig {
        corpus: root.join("corpus"),
        views: vec![ViewKind::Abstract],
        strategies: vec![StrategyId::S6],
        models: vec![ModelId::new("gpt-4o").unwrap()],
        iterations: 6,
        backend: BackendKind::Mock,
        seed: 1,
        out: root.join("run"),
        sampled_subsets: 50,
        mock_latent: Some(latent_path),
        ..ExperimentConfig::default()
    }
}

fn models(names: &[&str]) -> Vec<ModelId> {
    names.iter().map(|n| ModelId::new(*n).unwrap()).collect()
}

#[test]
fn single_cell_report_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 15);
    run_experiment(&cfg).unwrap();
    let out = report(&cfg.out).unwrap();
    assert_eq!(out.curve_files.len(), 1);
    let table = fs::read_to_string(&out.correlation_table).unwrap();
    // header + prediction row + human row, each with a label column
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').count() == 3));
    let curve = fs::read_to_string(&out.curve_files[0]).unwrap();
    assert_eq!(curve.lines().next(), Some("k,mean,ci_low,ci_high"));
    assert_eq!(curve.lines().count(), 7);
    let calib = fs::read_to_string(&out.calibration).unwrap();
    assert_eq!(calib.lines().count(), 2);
}

#[test]
fn three_models_give_four_by_four_symmetric_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 15);
    cfg.models = models(&["gpt-4o", "gpt-4o-mini", "gpt-3.5-turbo"]);
    run_experiment(&cfg).unwrap();
    let out = report(&cfg.out).unwrap();
    assert_eq!(out.curve_files.len(), 3);
    let table = fs::read_to_string(&out.correlation_table).unwrap();
    let cells: Vec<Vec<String>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(str::to_string).collect())
        .collect();
    assert_eq!(cells.len(), 4);
    for i in 0..4 {
        assert_eq!(cells[i].len(), 4);
        assert_eq!(cells[i][i], "1");
        for j in 0..4 {
            assert_eq!(cells[i][j], cells[j][i]);
        }
    }
    assert!(out.summary_text.contains("abstract__s6__gpt-3.5-turbo"));
}

#[test]
fn pending_queue_halts_only_the_affected_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 20);
    cfg.views = vec![ViewKind::Title, ViewKind::Abstract];
    cfg.mock = MockConfig {
        unparseable_probability: 0.02,
        ..MockConfig::default()
    };
    let m = run_experiment(&cfg).unwrap();
    let pending: Vec<_> = m
        .cells
        .iter()
        .filter(|c| matches!(c.status, CellStatus::PendingQueue(_)))
        .collect();
    assert!(!pending.is_empty(), "seed should produce an unparseable report");
    assert!(m.cells.iter().any(|c| c.status == CellStatus::Complete));
    assert!(matches!(experiment::pending_cells(&m), Some(HarnessError::PendingQueue(_))));
    for c in &pending {
        assert!(!cfg.out.join("cells").join(&c.name).join("matrix.csv").exists());
    }
    let err = report(&cfg.out).unwrap_err();
    assert_eq!(err.exit_code(), 6);
    assert!(err.to_string().contains(&pending[0].name));

    let queue_path = cfg.out.join("queue.jsonl");
    let mut q = ManualQueue::load(&queue_path).unwrap();
    let ids: Vec<String> = q.pending().map(|e| e.id.clone()).collect();
    for id in &ids {
        q.resolve_manual(id, 2.5, "hand scored").unwrap();
    }
    q.save(&queue_path).unwrap();
    let m = analyze(&cfg.out, |_| {}).unwrap();
    assert!(m.cells.iter().all(|c| c.status == CellStatus::Complete));
    report(&cfg.out).unwrap();
    let scores = fs::read_to_string(cfg.out.join("cells").join(&pending[0].name).join("scores.jsonl")).unwrap();
    assert!(scores.contains("\"kind\":\"manual\""));
}

#[test]
fn replay_never_queries_and_detects_missing_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 10);
    cfg.backend = BackendKind::Replay;
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 6, "{err}");
    assert!(!cfg.out.join("cache").join("abstract__s6__gpt-4o.jsonl").exists());
}

#[test]
fn drift_is_recorded_when_rules_change() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 10);
    run_experiment(&cfg).unwrap();
    let rules = dir.path().join("rules.toml");
    let custom = refscore_core::score_parser::RuleSet::default_source().replace(
        "# Score extraction rules",
        "# Edited score extraction rules",
    );
    fs::write(&rules, custom.replace("id = \"score-line\"", "id = \"score-line-2\"")).unwrap();
    let m = analyze(&cfg.out, |c| c.rules = Some(rules.clone())).unwrap();
    assert_eq!(m.drift.len(), 1, "{:?}", m.drift);
    let summary = report(&cfg.out).unwrap().summary_text;
    assert!(summary.contains("rules changed"));
}

#[test]
fn zero_strategies_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 10);
    cfg.strategies.clear();
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!cfg.out.exists());
}
