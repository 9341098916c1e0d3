use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn refscore(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refscore"))
        .current_dir(dir)
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn synth_run_report_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&refscore(d, &["synth", "--articles", "12", "--seed", "3", "--out", "corpus"]));
    assert!(d.join("corpus/latent.json").exists());
    let run_args = [
        "run", "--corpus", "corpus", "--out", "run", "--views", "title,abstract", "--strategies", "s1,s6",
        "--models", "gpt-4o", "--iterations", "5", "--seed", "4", "--mock-latent", "corpus/latent.json",
    ];
    let stdout = ok(&refscore(d, &run_args));
    assert_eq!(stdout.matches(": complete").count(), 4, "{stdout}");
    let matrix = fs::read_to_string(d.join("run/cells/abstract__s1__gpt-4o/matrix.csv")).unwrap();
    assert_eq!(matrix.lines().count(), 13);
    assert_eq!(matrix.lines().next().unwrap(), "article,iter_0,iter_1,iter_2,iter_3,iter_4,human");

    let before = fs::read(d.join("run/cells/title__s6__gpt-4o/curve.csv")).unwrap();
    ok(&refscore(d, &["analyze", "--out", "run"]));
    assert_eq!(fs::read(d.join("run/cells/title__s6__gpt-4o/curve.csv")).unwrap(), before);

    let summary = ok(&refscore(d, &["report", "--out", "run"]));
    assert!(summary.contains("abstract__s6__gpt-4o"));
    for f in ["correlations.csv", "mean_scores.csv", "calibration.csv", "summary.txt"] {
        assert!(d.join("run/report").join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_dir(d.join("run/report/curves")).unwrap().count(), 4);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&refscore(d, &["synth", "--articles", "8", "--out", "corpus"]));
    fs::write(
        d.join("exp.toml"),
        "corpus = \"corpus\"\nout = \"from-config\"\niterations = 4\nstrategies = [\"s2\"]\n[mock]\nnoise_sd = 0.3\n",
    )
    .unwrap();
    ok(&refscore(d, &["run", "--config", "exp.toml", "--out", "from-flag"]));
    assert!(d.join("from-flag/cells/abstract__s2__gpt-4o/matrix.csv").exists());
    assert!(!d.join("from-config").exists());
    let manifest = fs::read_to_string(d.join("from-flag/manifest.json")).unwrap();
    assert!(manifest.contains("\"noise_sd\": 0.3"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&refscore(d, &["synth", "--articles", "8", "--out", "corpus"]));
    let code = |args: &[&str]| refscore(d, args).status.code();

    fs::write(d.join("bad.toml"), "iterations = 0\n").unwrap();
    assert_eq!(code(&["run", "--config", "bad.toml", "--corpus", "corpus"]), Some(2));
    assert_eq!(code(&["run", "--corpus", "nowhere", "--out", "r0"]), Some(3));
    assert_eq!(code(&["run", "--corpus", "corpus", "--out", "r1", "--backend", "live"]), Some(2));
    assert_eq!(code(&["run", "--corpus", "corpus", "--out", "r2", "--backend", "replay"]), Some(6));
    assert_eq!(code(&["report", "--out", "r2"]), Some(1));

    fs::write(
        d.join("q.toml"),
        "corpus = \"corpus\"\nout = \"rq\"\niterations = 5\n[mock]\nunparseable_probability = 0.2\n",
    )
    .unwrap();
    assert_eq!(code(&["run", "--config", "q.toml"]), Some(5));
    let listing = ok(&refscore(d, &["queue", "list", "--out", "rq"]));
    let ids: Vec<&str> = listing
        .lines()
        .filter(|l| !l.starts_with(' '))
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert!(!ids.is_empty());
    assert_eq!(code(&["queue", "resolve", "--out", "rq", ids[0], "7"]), Some(2));
    for id in &ids {
        ok(&refscore(d, &["queue", "resolve", "--out", "rq", id, "3", "--note", "read by hand"]));
    }
    assert_eq!(code(&["queue", "resolve", "--out", "rq", ids[0], "3"]), Some(2));
    ok(&refscore(d, &["analyze", "--out", "rq"]));
    assert!(ok(&refscore(d, &["queue", "list", "--out", "rq"])).is_empty());
}

#[test]
fn prompts_export_and_views() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&refscore(d, &["prompts", "export", "--out", "prompts", "--all"]));
    assert_eq!(out.lines().count(), 8);
    let s6 = fs::read_to_string(d.join("prompts/s6.txt")).unwrap();
    let s1 = fs::read_to_string(d.join("prompts/s1.txt")).unwrap();
    assert!(s6.starts_with(&s1[..40]));
    assert!(s6.contains("4*") && !s6.contains("[Strategy"));
    assert!(d.join("prompts/s6-minus-defs.txt").exists());

    ok(&refscore(d, &["synth", "--articles", "3", "--out", "corpus"]));
    ok(&refscore(d, &["views", "--corpus", "corpus", "--view", "truncated", "--out", "views"]));
    let text = fs::read_to_string(d.join("views/art000.truncated.txt")).unwrap();
    assert!(!text.contains("Smith, A."));
    assert!(!text.contains("Keywords:"));
    ok(&refscore(d, &[
        "views", "--corpus", "corpus", "--view", "title", "--out", "batch", "--batch-strategy", "s0",
        "--iterations", "2",
    ]));
    let batch = fs::read_to_string(d.join("batch/title__s0__gpt-4o.jsonl")).unwrap();
    assert_eq!(batch.lines().count(), 6);
    assert!(batch.lines().next().unwrap().contains("\"custom_id\":\"art000#0\""));
}

#[test]
fn ingest_cleans_raw_articles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let header = "Journal of Examples 12 (2024)";
    let mut blocks = Vec::new();
    let words = ["Alpha", "Beta", "Gamma", "Delta"];
    for (page, word) in (1..=4u32).zip(words) {
        blocks.push(serde_json::json!({"page": page, "text": format!("{header}\n{word} findings are reported and")}));
        blocks.push(serde_json::json!({"page": page, "text": format!("{word} discussion follows.")}));
    }
    blocks.push(serde_json::json!({"page": 4, "text": "A | B\n1 | 2", "role": "table"}));
    let raw = serde_json::json!({
        "id": "r1", "title": "  A   title ", "abstract": "An abstract.", "human_score": 2.5, "blocks": blocks,
    });
    fs::write(d.join("raw.jsonl"), format!("{raw}\n")).unwrap();
    ok(&refscore(d, &["ingest", "--raw", "raw.jsonl", "--out", "corpus"]));
    ok(&refscore(d, &["views", "--corpus", "corpus", "--view", "truncated", "--out", "v"]));
    let text = fs::read_to_string(d.join("v/r1.truncated.txt")).unwrap();
    assert!(!text.contains("Journal of Examples"), "{text}");
    assert!(text.contains("Alpha findings are reported and Alpha discussion follows."), "{text}");
    assert!(!text.contains("A | B"));
}
