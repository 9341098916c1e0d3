use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refscore_core::client::ModelId;
use refscore_core::corpus::{self, Corpus, ViewKind, ViewOptions};
use refscore_core::experiment::{
    self, write_atomic, BackendKind, CellStatus, ExperimentConfig, HarnessError, RunManifest,
};
use refscore_core::prompts::{self, StrategyId};
use refscore_core::score_parser::ManualQueue;
use refscore_core::synthetic;

#[derive(Parser)]
#[command(name = "refscore", version, about = "Score research articles with LLM judges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean pre-extracted article text into a corpus directory.
    Ingest {
        /// Directory of raw article JSON files, or a JSONL file.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the document view of every article, or a chat batch file.
    Views {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "abstract")]
        view: ViewKind,
        #[arg(long)]
        out: PathBuf,
        /// Emit a chat-completions JSONL batch for this strategy instead of
        /// plain view text.
        #[arg(long)]
        batch_strategy: Option<StrategyId>,
        #[arg(long, default_value = "gpt-4o")]
        model: String,
        #[arg(long, default_value_t = 30)]
        iterations: usize,
    },
    /// Prompt text utilities.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
    /// Generate a synthetic corpus with known latent qualities.
    Synth {
        #[arg(long, default_value_t = 51)]
        articles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect reports, parse scores and analyse every cell.
    Run(RunArgs),
    /// Inspect or resolve reports that need a manual score.
    Queue {
        #[command(subcommand)]
        command: QueueCommand,
    },
    /// Re-parse and re-analyse a run from its cache without querying.
    Analyze {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        confidence_level: Option<f64>,
        #[arg(long)]
        round_scores: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit plot data and summary tables for a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Write each system prompt to `<dir>/<strategy>.txt`.
    Export {
        #[arg(long)]
        out: PathBuf,
        /// Also export the ablation without quality-level definitions.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Subcommand)]
enum QueueCommand {
    /// List queue entries (unresolved only unless --all).
    List {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        all: bool,
    },
    /// Record a manual score for an entry.
    Resolve {
        #[arg(long)]
        out: PathBuf,
        id: String,
        value: f64,
        #[arg(long, default_value = "")]
        note: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<ViewKind>>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyId>>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    confidence_level: Option<f64>,
    #[arg(long)]
    round_scores: Option<bool>,
    #[arg(long)]
    mock_latent: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.corpus {
            c.corpus = v;
        }
        if let Some(v) = self.views {
            c.views = v;
        }
        if let Some(v) = self.strategies {
            c.strategies = v;
        }
        if let Some(v) = self.models {
            c.models = v
                .into_iter()
                .map(ModelId::new)
                .collect::<Result<_, _>>()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.backend {
            c.backend = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.out {
            c.out = v;
        }
        if let Some(v) = self.parallel {
            c.parallel = v;
        }
        if let Some(v) = self.confidence_level {
            c.confidence_level = v;
        }
        if let Some(v) = self.round_scores {
            c.round_scores = v;
        }
        if let Some(v) = self.mock_latent {
            c.mock_latent = Some(v);
        }
        Ok(c)
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn save(path: &Path, text: &str) -> Result<(), HarnessError> {
    write_atomic(path, text.as_bytes()).map_err(|e| io(path, e))
}

fn print_manifest(m: &RunManifest) -> Result<(), HarnessError> {
    for cell in &m.cells {
        let status = match &cell.status {
            CellStatus::Complete => "complete".to_string(),
            CellStatus::PendingQueue(ids) => format!("{} report(s) awaiting manual score", ids.len()),
            CellStatus::AnalysisFailed(msg) => format!("analysis failed: {msg}"),
        };
        println!("{}: {status}", cell.name);
        for note in &cell.notes {
            println!("  {note}");
        }
    }
    for d in &m.drift {
        eprintln!("warning: {d}");
    }
    if let Some(e) = experiment::pending_cells(m) {
        return Err(e);
    }
    let failed: Vec<&str> = m
        .cells
        .iter()
        .filter(|c| matches!(c.status, CellStatus::AnalysisFailed(_)))
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(HarnessError::Analysis(format!("failed cells: {}", failed.join(", "))));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Ingest { raw, out } => {
            let articles = corpus::read_raw_articles(&raw)?
                .iter()
                .map(corpus::ingest)
                .collect::<Result<Vec<_>, _>>()?;
            let mut c = Corpus::new(articles);
            c.metadata.insert("source".into(), raw.display().to_string());
            c.save(&out)?;
            println!("ingested {} article(s) into {}", c.articles.len(), out.display());
        }
        Command::Views { corpus, view, out, batch_strategy, model, iterations } => {
            let c = Corpus::load(&corpus)?;
            let opts = ViewOptions::default();
            match batch_strategy {
                Some(strategy) => {
                    let lines = corpus::to_jsonl(
                        &c,
                        view,
                        strategy,
                        &model,
                        &Default::default(),
                        iterations,
                        &opts,
                    )
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                    let path = out.join(format!("{view}__{strategy}__{}.jsonl", corpus::file_stem(&model)));
                    save(&path, &(lines.join("\n") + "\n"))?;
                    println!("wrote {} request(s) to {}", lines.len(), path.display());
                }
                None => {
                    for a in &c.articles {
                        let v = corpus::build_view(a, view, &opts)?;
                        let path = out.join(format!("{}.{view}.txt", corpus::file_stem(&a.id)));
                        save(&path, &v.text)?;
                    }
                    println!("wrote {} {view} view(s) to {}", c.articles.len(), out.display());
                }
            }
        }
        Command::Prompts { command: PromptsCommand::Export { out, all } } => {
            let ids: &[StrategyId] = if all { &StrategyId::ALL } else { &StrategyId::STANDARD };
            for id in ids {
                let path = out.join(format!("{id}.txt"));
                save(&path, prompts::system_prompt(*id))?;
                println!("{}  {}", prompts::prompt_digest(*id), path.display());
            }
        }
        Command::Synth { articles, seed, out } => {
            let (c, latent) = synthetic::synthetic_corpus(articles, seed);
            c.save(&out)?;
            let latent: BTreeMap<_, _> = latent.into_iter().collect();
            let path = out.join("latent.json");
            let json = serde_json::to_string_pretty(&latent).expect("latent map serializes") + "\n";
            save(&path, &json)?;
            println!("wrote {articles} synthetic article(s) and {}", path.display());
        }
        Command::Run(args) => {
            let config = args.into_config()?;
            let m = experiment::run_experiment(&config)?;
            print_manifest(&m)?;
        }
        Command::Queue { command } => match command {
            QueueCommand::List { out, all } => {
                let path = out.join("queue.jsonl");
                let q = ManualQueue::load(&path).map_err(|e| io(&path, e))?;
                for e in q.entries().iter().filter(|e| all || e.resolution.is_none()) {
                    let state = match &e.resolution {
                        Some(r) => format!("resolved {}", r.value),
                        None => "pending".into(),
                    };
                    println!("{}\t{state}\t{}", e.id, e.reason);
                    println!("    {}", e.report.replace('\n', "\n    "));
                }
            }
            QueueCommand::Resolve { out, id, value, note } => {
                let path = out.join("queue.jsonl");
                let mut q = ManualQueue::load(&path).map_err(|e| io(&path, e))?;
                q.resolve_manual(&id, value, &note)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                q.save(&path).map_err(|e| io(&path, e))?;
                let left = q.pending().count();
                println!("resolved {id}; {left} pending; run `refscore analyze` to continue");
            }
        },
        Command::Analyze { out, confidence_level, round_scores, seed } => {
            let m = experiment::analyze(&out, |c| {
                if let Some(v) = confidence_level {
                    c.confidence_level = v;
                }
                if let Some(v) = round_scores {
                    c.round_scores = v;
                }
                if let Some(v) = seed {
                    c.seed = v;
                }
            })?;
            print_manifest(&m)?;
        }
        Command::Report { out } => {
            let r = experiment::report(&out)?;
            print!("{}", r.summary_text);
            println!("\nwrote {}", r.summary.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
