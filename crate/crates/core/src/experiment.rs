//! End-to-end experiment runs: configuration, per-cell scoring and
//! analysis, run manifests and the summary report.
//!
//! A run directory looks like this:
//!
//! ```text
//! out/
//!   manifest.json            written last
//!   queue.jsonl              reports awaiting a manual score
//!   cache/<cell>.jsonl       completion records
//!   cells/<cell>/scores.jsonl
//!   cells/<cell>/matrix.csv
//!   cells/<cell>/curve.csv
//!   cells/<cell>/calibration.csv
//!   report/...               written by `report`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::client::{
    Backend, BackendTag, Cache, CellSpec, Client, ClientError, LiveConfig, MockBackend, MockConfig,
    ModelId, SamplingParams,
};
use crate::corpus::{self, Corpus, CorpusError, ViewKind, ViewOptions};
use crate::prompts::{self, StrategyId};
use crate::score_parser::{self, ManualQueue, QueueEntry, RuleSet, ScoreKind};
use crate::scorebook::{build_matrix, CellValue, MatrixError, ScoreMatrix, ScoreRecord};
use crate::stats::{self, CalibrationRow, CurveOptions, FitOptions, SubsetSampling};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("network: {0}")]
    Network(ClientError),
    #[error("pending manual resolution in cells: {}", .0.join(", "))]
    PendingQueue(Vec<String>),
    #[error("analysis: {0}")]
    Analysis(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Corpus(_) => 3,
            HarnessError::Network(_) => 4,
            HarnessError::PendingQueue(_) => 5,
            HarnessError::Analysis(_) => 6,
            HarnessError::Io { .. } => 1,
        }
    }
}

impl From<ClientError> for HarnessError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(m) => HarnessError::Config(m),
            ClientError::Corpus(c) => HarnessError::Corpus(c),
            ClientError::Iteration { index, source } => match HarnessError::from(*source) {
                HarnessError::Network(inner) => HarnessError::Network(ClientError::Iteration {
                    index,
                    source: Box::new(inner),
                }),
                other => other,
            },
            ClientError::Cache { path, message } => HarnessError::Io { path, message },
            ClientError::NotCached(_) | ClientError::FingerprintMismatch { .. } => {
                HarnessError::Analysis(e.to_string())
            }
            other => HarnessError::Network(other),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    write_atomic(path, text.as_bytes()).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Mock,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(BackendKind::Live),
            "mock" => Ok(BackendKind::Mock),
            "replay" => Ok(BackendKind::Replay),
            other => Err(HarnessError::Config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub views: Vec<ViewKind>,
    pub strategies: Vec<StrategyId>,
    pub models: Vec<ModelId>,
    pub iterations: usize,
    pub backend: BackendKind,
    pub seed: u64,
    pub out: PathBuf,
    /// Defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub parallel: usize,
    pub confidence_level: f64,
    pub round_scores: bool,
    pub leave_one_out: bool,
    pub sampled_subsets: usize,
    pub subset_sampling: SubsetSampling,
    /// Custom rules file; the embedded rule set otherwise.
    pub rules: Option<PathBuf>,
    /// JSON object mapping article ids to latent qualities for the mock
    /// judge; human scores are used otherwise.
    pub mock_latent: Option<PathBuf>,
    pub reference_headings: Vec<String>,
    pub sampling: SamplingParams,
    pub live: LiveConfig,
    pub mock: MockConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            views: vec![ViewKind::Abstract],
            strategies: vec![StrategyId::S6],
            models: vec![ModelId::new("gpt-4o").expect("non-empty")],
            iterations: 30,
            backend: BackendKind::Mock,
            seed: 0,
            out: PathBuf::from("run"),
            cache_dir: None,
            parallel: 4,
            confidence_level: 0.95,
            round_scores: false,
            leave_one_out: false,
            sampled_subsets: 1000,
            subset_sampling: SubsetSampling::Distinct,
            rules: None,
            mock_latent: None,
            reference_headings: ViewOptions::default().reference_headings,
            sampling: SamplingParams::default(),
            live: LiveConfig::default(),
            mock: MockConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(src: &str) -> Result<Self, HarnessError> {
        toml::from_str(src).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let src = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_toml(&src)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.into()));
        if self.iterations == 0 {
            return fail("iterations must be at least 1");
        }
        if self.views.is_empty() {
            return fail("at least one view is required");
        }
        if self.strategies.is_empty() {
            return fail("at least one strategy is required");
        }
        if self.models.is_empty() {
            return fail("at least one model is required");
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return fail("confidence level must lie in (0, 1)");
        }
        if self.sampled_subsets == 0 {
            return fail("sampled_subsets must be at least 1");
        }
        self.sampling.validate()?;
        let p = &self.mock;
        if !(0.0..=1.0).contains(&p.refusal_probability)
            || !(0.0..=1.0).contains(&p.title_refusal_probability)
            || !(0.0..=1.0).contains(&p.unparseable_probability)
            || !(p.noise_sd >= 0.0 && p.bias_sd >= 0.0)
        {
            return fail("mock probabilities must lie in [0, 1] and standard deviations must be >= 0");
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    pub fn view_options(&self) -> ViewOptions {
        ViewOptions {
            reference_headings: self.reference_headings.clone(),
        }
    }

    pub fn curve_options(&self) -> CurveOptions {
        CurveOptions {
            level: self.confidence_level,
            sampled_subsets: self.sampled_subsets,
            sampling: self.subset_sampling,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            round: self.round_scores,
            leave_one_out: self.leave_one_out,
        }
    }

    pub fn rule_set(&self) -> Result<RuleSet, HarnessError> {
        match &self.rules {
            Some(p) => RuleSet::from_file(p).map_err(|e| HarnessError::Config(e.to_string())),
            None => Ok(RuleSet::default()),
        }
    }

    /// Every (view, strategy, model) cell in run order.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &view in &self.views {
            for &strategy in &self.strategies {
                for model in &self.models {
                    out.push(CellSpec {
                        view,
                        strategy,
                        model: model.clone(),
                        params: self.sampling,
                        view_options: self.view_options(),
                    });
                }
            }
        }
        out
    }
}

/// Directory-safe name of a cell.
pub fn cell_name(cell: &CellSpec) -> String {
    format!(
        "{}__{}__{}",
        cell.view,
        cell.strategy,
        corpus::file_stem(cell.model.as_str())
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "detail", rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    PendingQueue(Vec<String>),
    AnalysisFailed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub name: String,
    pub view: ViewKind,
    pub strategy: StrategyId,
    pub model: ModelId,
    pub status: CellStatus,
    pub records_by_backend: BTreeMap<BackendTag, usize>,
    pub score_kinds: BTreeMap<String, usize>,
    pub missing_cells: usize,
    /// Articles whose every iteration was missing; dropped from
    /// correlations and calibration.
    pub articles_without_score: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub prompt_digests: BTreeMap<String, String>,
    pub rules_digest: String,
    pub seed: u64,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub cells: Vec<CellSummary>,
    /// Differences between this run's prompt/rule digests and the previous
    /// manifest in the same directory.
    pub drift: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("manifest.json");
        let raw = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        serde_json::from_str(&raw).map_err(|e| io_error(&path, e))
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    article_id: &'a str,
    iteration: usize,
    value: Option<f64>,
    kind: Option<ScoreKind>,
    rule_id: Option<&'a str>,
    queue_id: Option<&'a str>,
}

fn make_backend(config: &ExperimentConfig, corpus: &Corpus) -> Result<Backend, HarnessError> {
    Ok(match config.backend {
        BackendKind::Replay => Backend::Replay,
        BackendKind::Mock => {
            let mut mock = config.mock.clone();
            if mock.latent.is_empty() {
                mock.latent = corpus
                    .articles
                    .iter()
                    .map(|a| (a.id.clone(), a.human_score))
                    .collect();
            }
            Backend::Mock(MockBackend::new(config.seed, mock))
        }
        #[cfg(feature = "live")]
        BackendKind::Live => Backend::Live(crate::client::LiveBackend::from_env(config.live.clone())?),
        #[cfg(not(feature = "live"))]
        BackendKind::Live => {
            return Err(HarnessError::Config(
                "built without the `live` feature".into(),
            ))
        }
    })
}

/// Runs a full experiment. Cells with pending manual entries or failed
/// analysis are reported in the manifest; other cells still complete.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest, HarnessError> {
    run_with_mock_latent(config, None)
}

/// Like [`run_experiment`], with explicit latent qualities for the mock
/// judge instead of the corpus human scores.
pub fn run_with_mock_latent(
    config: &ExperimentConfig,
    latent: Option<BTreeMap<String, f64>>,
) -> Result<RunManifest, HarnessError> {
    let started = now_ms();
    config.validate()?;
    let corpus = Corpus::load(&config.corpus)?;
    let rules = config.rule_set()?;
    let mut cfg = config.clone();
    if let Some(latent) = latent {
        cfg.mock.latent = latent;
    } else if let (BackendKind::Mock, Some(path)) = (cfg.backend, &cfg.mock_latent) {
        let raw = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        cfg.mock.latent = serde_json::from_str(&raw)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    }
    let client = Client::new(make_backend(&cfg, &corpus)?).with_parallelism(config.parallel);
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let previous = RunManifest::load(out).ok();
    let queue_path = out.join("queue.jsonl");
    let mut queue = ManualQueue::load(&queue_path).map_err(|e| io_error(&queue_path, e))?;

    let mut cells = Vec::new();
    for cell in config.cells() {
        cells.push(run_cell(config, &corpus, &rules, &client, &cell, &mut queue)?);
        queue.save(&queue_path).map_err(|e| io_error(&queue_path, e))?;
    }

    let prompt_digests: BTreeMap<String, String> = config
        .strategies
        .iter()
        .map(|s| (s.to_string(), prompts::prompt_digest(*s)))
        .collect();
    let mut drift = Vec::new();
    if let Some(prev) = previous {
        for (s, d) in &prompt_digests {
            if let Some(old) = prev.prompt_digests.get(s) {
                if old != d {
                    drift.push(format!("prompt {s} changed since the previous run"));
                }
            }
        }
        if prev.rules_digest != rules.digest() {
            drift.push("score extraction rules changed since the previous run".into());
        }
    }
    let manifest = RunManifest {
        config: config.clone(),
        prompt_digests,
        rules_digest: rules.digest().to_string(),
        seed: config.seed,
        started_at_ms: started,
        finished_at_ms: now_ms(),
        cells,
        drift,
    };
    let path = out.join("manifest.json");
    write(&path, &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(manifest)
}

fn run_cell(
    config: &ExperimentConfig,
    corpus: &Corpus,
    rules: &RuleSet,
    client: &Client,
    cell: &CellSpec,
    queue: &mut ManualQueue,
) -> Result<CellSummary, HarnessError> {
    let name = cell_name(cell);
    let cache_path = config.cache_dir().join(format!("{name}.jsonl"));
    let cache = match client.backend() {
        Backend::Replay => Cache::open_read_only(&cache_path)?,
        _ => Cache::open(&cache_path)?,
    };
    let n = config.iterations;
    let mut records = Vec::with_capacity(corpus.articles.len() * n);
    let mut lines = String::new();
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    let mut pending = Vec::new();
    for article in &corpus.articles {
        let reports = client.run_iterations(article, cell, n, &cache)?;
        for (i, report) in reports.iter().enumerate() {
            let queue_id = ManualQueue::entry_id(&name, &article.id, i);
            let parsed = match score_parser::extract_score(report, rules) {
                Ok(p) => Some(p),
                Err(e) => match queue.get(&queue_id).and_then(QueueEntry::score) {
                    Some(manual) => Some(manual),
                    None => {
                        queue.push(QueueEntry {
                            id: queue_id.clone(),
                            cell: name.clone(),
                            article_id: article.id.clone(),
                            iteration: i,
                            reason: e.to_string(),
                            report: report.clone(),
                            resolution: None,
                        });
                        None
                    }
                },
            };
            let value = match &parsed {
                Some(p) => {
                    *kinds.entry(format!("{:?}", p.kind)).or_default() += 1;
                    p.value.map_or(CellValue::Missing, CellValue::Score)
                }
                None => {
                    pending.push(queue_id.clone());
                    CellValue::Pending(queue_id.clone())
                }
            };
            let line = ScoreLine {
                article_id: &article.id,
                iteration: i,
                value: parsed.as_ref().and_then(|p| p.value),
                kind: parsed.as_ref().map(|p| p.kind),
                rule_id: parsed.as_ref().map(|p| p.rule_id.as_str()),
                queue_id: parsed.is_none().then_some(queue_id.as_str()),
            };
            lines.push_str(&serde_json::to_string(&line).expect("score line serializes"));
            lines.push('\n');
            records.push(ScoreRecord {
                article_id: article.id.clone(),
                iteration: i,
                value,
            });
        }
    }
    let dir = config.out.join("cells").join(&name);
    write(&dir.join("scores.jsonl"), &lines)?;

    let mut by_backend = BTreeMap::new();
    for r in cache.records() {
        *by_backend.entry(r.backend).or_insert(0) += 1;
    }
    let mut summary = CellSummary {
        name: name.clone(),
        view: cell.view,
        strategy: cell.strategy,
        model: cell.model.clone(),
        status: CellStatus::Complete,
        records_by_backend: by_backend,
        score_kinds: kinds,
        missing_cells: 0,
        articles_without_score: Vec::new(),
        notes: Vec::new(),
    };
    // stale analysis outputs must not survive a failed re-analysis
    for f in ["matrix.csv", "curve.csv", "calibration.csv"] {
        let _ = fs::remove_file(dir.join(f));
    }
    if !pending.is_empty() {
        summary.status = CellStatus::PendingQueue(pending);
        return Ok(summary);
    }
    let human: Vec<(String, f64)> = corpus
        .articles
        .iter()
        .map(|a| (a.id.clone(), a.human_score))
        .collect();
    let matrix = match build_matrix(&records, &human, n) {
        Ok(m) => m,
        Err(MatrixError::Pending(ids)) => {
            summary.status = CellStatus::PendingQueue(ids);
            return Ok(summary);
        }
        Err(e) => {
            summary.status = CellStatus::AnalysisFailed(e.to_string());
            return Ok(summary);
        }
    };
    summary.missing_cells = matrix.missing_count();
    write(&dir.join("matrix.csv"), &matrix.to_csv())?;
    if let Err(msg) = analyse_matrix(config, &matrix, &dir, &mut summary) {
        summary.status = CellStatus::AnalysisFailed(msg);
    }
    Ok(summary)
}

fn analyse_matrix(
    config: &ExperimentConfig,
    matrix: &ScoreMatrix,
    dir: &Path,
    summary: &mut CellSummary,
) -> Result<(), String> {
    let means = matrix.row_means();
    summary.articles_without_score = matrix
        .article_ids()
        .iter()
        .zip(&means)
        .filter(|(_, m)| m.is_none())
        .map(|(id, _)| id.clone())
        .collect();
    if !summary.articles_without_score.is_empty() {
        summary.notes.push(format!(
            "{} article(s) have no score in any iteration and are excluded pairwise",
            summary.articles_without_score.len()
        ));
    }
    if matrix.iterations() >= 4 {
        let curve = stats::correlation_curve(matrix, config.seed, &config.curve_options())
            .map_err(|e| e.to_string())?;
        let excluded: usize = curve.points.iter().map(|p| p.excluded).sum();
        if excluded > 0 {
            summary
                .notes
                .push(format!("{excluded} subset correlation(s) undefined and excluded"));
        }
        write(&dir.join("curve.csv"), &curve.to_csv()).map_err(|e| e.to_string())?;
    } else {
        summary
            .notes
            .push("fewer than 4 iterations: no correlation curve".into());
    }
    let row = stats::calibration_row(&means, matrix.human(), &config.fit_options())
        .map_err(|e| e.to_string())?;
    let csv = format!("{}\n{}\n", CalibrationRow::CSV_HEADER, row.csv_line(&summary.name));
    write(&dir.join("calibration.csv"), &csv).map_err(|e| e.to_string())
}

/// Re-runs parsing and analysis from the cache of a finished run.
pub fn analyze(
    dir: &Path,
    adjust: impl FnOnce(&mut ExperimentConfig),
) -> Result<RunManifest, HarnessError> {
    let manifest = RunManifest::load(dir)?;
    let mut config = manifest.config;
    config.cache_dir = Some(config.cache_dir());
    config.out = dir.to_path_buf();
    config.backend = BackendKind::Replay;
    adjust(&mut config);
    run_experiment(&config)
}

/// Files produced by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub curve_files: Vec<PathBuf>,
    pub correlation_table: PathBuf,
    pub mean_scores: PathBuf,
    pub calibration: PathBuf,
    pub summary: PathBuf,
    pub summary_text: String,
}

/// Cross-cell Spearman table over per-article mean scores, with the human
/// scores as the last row/column. Symmetric with a unit diagonal.
pub fn correlation_table(
    labels: &[String],
    predictions: &[Vec<Option<f64>>],
    human: &[f64],
) -> Vec<Vec<Option<f64>>> {
    let mut columns: Vec<Vec<Option<f64>>> = predictions.to_vec();
    columns.push(human.iter().map(|h| Some(*h)).collect());
    let k = labels.len() + 1;
    let mut table = vec![vec![None; k]; k];
    for i in 0..k {
        table[i][i] = Some(1.0);
        for j in (i + 1)..k {
            let (a, b): (Vec<f64>, Vec<f64>) = columns[i]
                .iter()
                .zip(&columns[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            let r = stats::spearman(&a, &b).ok();
            table[i][j] = r;
            table[j][i] = r;
        }
    }
    table
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Emits plot data and summary tables for a finished run.
pub fn report(dir: &Path) -> Result<ReportOutput, HarnessError> {
    let manifest = RunManifest::load(dir)?;
    let mut missing = Vec::new();
    let mut loaded = Vec::new();
    for cell in manifest.config.cells() {
        let name = cell_name(&cell);
        let cdir = dir.join("cells").join(&name);
        let matrix = fs::read_to_string(cdir.join("matrix.csv"));
        let calib = fs::read_to_string(cdir.join("calibration.csv"));
        match (matrix, calib) {
            (Ok(m), Ok(c)) => {
                let matrix = ScoreMatrix::from_csv(&m).map_err(|e| HarnessError::Analysis(e.to_string()))?;
                let curve = fs::read_to_string(cdir.join("curve.csv")).ok();
                loaded.push((name, matrix, curve, c));
            }
            _ => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::Analysis(format!(
            "incomplete run; cells without analysis: {}",
            missing.join(", ")
        )));
    }
    let rdir = dir.join("report");
    let human = loaded[0].1.human().to_vec();
    let ids = loaded[0].1.article_ids().to_vec();
    if loaded.iter().any(|(_, m, _, _)| m.article_ids() != ids.as_slice()) {
        return Err(HarnessError::Analysis("cells cover different articles".into()));
    }

    let mut curve_files = Vec::new();
    for (name, _, curve, _) in &loaded {
        if let Some(curve) = curve {
            let mut plot = String::from("k,mean,ci_low,ci_high\n");
            for line in curve.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                plot.push_str(&format!("{},{},{},{}\n", f[0], f[1], f[3], f[4]));
            }
            let path = rdir.join("curves").join(format!("{name}.csv"));
            write(&path, &plot)?;
            curve_files.push(path);
        }
    }

    let labels: Vec<String> = loaded.iter().map(|(n, ..)| n.clone()).collect();
    let preds: Vec<Vec<Option<f64>>> = loaded.iter().map(|(_, m, ..)| m.row_means()).collect();
    let table = correlation_table(&labels, &preds, &human);
    let mut all_labels = labels.clone();
    all_labels.push("human".into());
    let mut corr = format!("spearman,{}\n", all_labels.join(","));
    for (label, row) in all_labels.iter().zip(&table) {
        let cells: Vec<String> = row.iter().map(|v| fmt_cell(*v)).collect();
        corr.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    let correlation_path = rdir.join("correlations.csv");
    write(&correlation_path, &corr)?;

    let mean = |xs: &[Option<f64>]| {
        let present: Vec<f64> = xs.iter().flatten().copied().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    };
    let human_mean = human.iter().sum::<f64>() / human.len() as f64;
    let mut means_csv = format!("statistic,human,{}\n", labels.join(","));
    let cells: Vec<String> = preds.iter().map(|p| fmt_cell(mean(p))).collect();
    means_csv.push_str(&format!("mean_score,{human_mean},{}\n", cells.join(",")));
    let means_path = rdir.join("mean_scores.csv");
    write(&means_path, &means_csv)?;

    let mut calib = format!("{}\n", CalibrationRow::CSV_HEADER);
    for (_, _, _, c) in &loaded {
        for line in c.lines().skip(1) {
            calib.push_str(line);
            calib.push('\n');
        }
    }
    let calib_path = rdir.join("calibration.csv");
    write(&calib_path, &calib)?;

    let mut text = String::new();
    text.push_str(&format!(
        "{} articles, {} iterations, seed {}, backend {:?}\n\n",
        ids.len(),
        manifest.config.iterations,
        manifest.seed,
        manifest.config.backend
    ));
    text.push_str("cell | rho(k=1) | rho(k=n) | direct MAD | regression MAD | improvement\n");
    for (i, (name, matrix, _, c)) in loaded.iter().enumerate() {
        let n = matrix.iterations();
        let k1 = if n >= 4 {
            stats::correlation_curve(
                matrix,
                manifest.seed,
                &CurveOptions { sampled_subsets: 1, ..manifest.config.curve_options() },
            )
            .ok()
            .and_then(|cv| cv.point(1).and_then(|p| p.mean))
        } else {
            None
        };
        let f: Vec<&str> = c.lines().nth(1).unwrap_or_default().split(',').collect();
        let pct = |s: &str| s.parse::<f64>().map(stats::format_pct).unwrap_or_else(|_| "n/a".into());
        text.push_str(&format!(
            "{name} | {} | {} | {} | {} | {}\n",
            k1.map_or("n/a".into(), |v| format!("{v:.3}")),
            table[i][labels.len()].map_or("n/a".into(), |v| format!("{v:.3}")),
            f.get(2).and_then(|s| s.parse::<f64>().ok()).map_or("n/a".into(), |v| format!("{v:.2}")),
            f.get(6).and_then(|s| s.parse::<f64>().ok()).map_or("n/a".into(), |v| format!("{v:.2}")),
            f.get(7).map_or("n/a".into(), |s| pct(s)),
        ));
    }
    if !manifest.drift.is_empty() {
        text.push_str("\nwarnings:\n");
        for d in &manifest.drift {
            text.push_str(&format!("  {d}\n"));
        }
    }
    let summary_path = rdir.join("summary.txt");
    write(&summary_path, &text)?;

    Ok(ReportOutput {
        curve_files,
        correlation_table: correlation_path,
        mean_scores: means_path,
        calibration: calib_path,
        summary: summary_path,
        summary_text: text,
    })
}

/// Error for a run whose cells are waiting on the manual queue, if any.
pub fn pending_cells(manifest: &RunManifest) -> Option<HarnessError> {
    let pending: Vec<String> = manifest
        .cells
        .iter()
        .filter(|c| matches!(c.status, CellStatus::PendingQueue(_)))
        .map(|c| c.name.clone())
        .collect();
    (!pending.is_empty()).then_some(HarnessError::PendingQueue(pending))
}
