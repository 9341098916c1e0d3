//! Article corpus: ingestion of extracted text blocks, document views and
//! JSONL batch files.
//!
//! A corpus lives on disk as a directory holding a `manifest.json` (member
//! file names plus free-form metadata) and one UTF-8 JSON document per
//! article.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::client::SamplingParams;
use crate::prompts::{self, StrategyId};

/// Lowest and highest values on the quality scale.
pub const SCALE_MIN: f64 = 1.0;
pub const SCALE_MAX: f64 = 4.0;

/// Lines repeating on at least this many distinct pages are treated as
/// running headers or footers.
pub const HEADER_MIN_PAGES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("article {id}: {reason}")]
    InvalidArticle { id: String, reason: String },
    #[error("duplicate article ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("article {0} has no body text for a truncated view")]
    EmptyBody(String),
    #[error("corpus is empty")]
    Empty,
    #[error("unknown view kind {0:?}")]
    UnknownView(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Role of a paragraph inside an article body, fixed at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParagraphRole {
    #[default]
    Body,
    Table,
    Authors,
    Keywords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub text: String,
    #[serde(default, skip_serializing_if = "is_body")]
    pub role: ParagraphRole,
}

fn is_body(role: &ParagraphRole) -> bool {
    *role == ParagraphRole::Body
}

impl Paragraph {
    pub fn body(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            role: ParagraphRole::Body,
        }
    }

    pub fn with_role(text: impl Into<String>, role: ParagraphRole) -> Self {
        Self {
            text: text.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub paragraphs: Vec<Paragraph>,
    pub human_score: f64,
}

impl Article {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: &str| CorpusError::InvalidArticle {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(fail("empty id"));
        }
        if self.title.trim().is_empty() {
            return Err(fail("empty title"));
        }
        if !(SCALE_MIN..=SCALE_MAX).contains(&self.human_score) {
            return Err(fail(&format!(
                "human score {} outside [1, 4]",
                self.human_score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Title,
    Abstract,
    Truncated,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [ViewKind::Title, ViewKind::Abstract, ViewKind::Truncated];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Title => "title",
            ViewKind::Abstract => "abstract",
            ViewKind::Truncated => "truncated",
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "title" | "titles" => Ok(ViewKind::Title),
            "abstract" | "abstracts" => Ok(ViewKind::Abstract),
            "truncated" | "full" => Ok(ViewKind::Truncated),
            _ => Err(CorpusError::UnknownView(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentView {
    pub kind: ViewKind,
    pub text: String,
}

/// Options for rendering the truncated view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewOptions {
    /// Headings that start the reference list; matched case-insensitively
    /// after stripping section numbering and a trailing colon.
    pub reference_headings: Vec<String>,
}

impl Default for ViewOptions {
    fn default() -> Self {
        Self {
            reference_headings: vec!["References".into(), "Bibliography".into()],
        }
    }
}

impl ViewOptions {
    fn is_reference_heading(&self, text: &str) -> bool {
        let stripped = text
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c.is_whitespace())
            .trim_end_matches(':')
            .trim();
        self.reference_headings
            .iter()
            .any(|h| h.trim().eq_ignore_ascii_case(stripped))
    }
}

/// Renders one of the three input texts for an article.
pub fn build_view(
    article: &Article,
    kind: ViewKind,
    options: &ViewOptions,
) -> Result<DocumentView, CorpusError> {
    let text = match kind {
        ViewKind::Title => article.title.clone(),
        ViewKind::Abstract => format!("{}\n{}", article.title, article.abstract_text),
        ViewKind::Truncated => {
            let body: Vec<&str> = article
                .paragraphs
                .iter()
                .take_while(|p| !options.is_reference_heading(&p.text))
                .filter(|p| p.role == ParagraphRole::Body)
                .map(|p| p.text.as_str())
                .filter(|t| !t.trim().is_empty())
                .collect();
            if body.is_empty() {
                return Err(CorpusError::EmptyBody(article.id.clone()));
            }
            format!(
                "{}\n{}\n{}",
                article.title,
                article.abstract_text,
                body.join("\n")
            )
        }
    };
    Ok(DocumentView { kind, text })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub articles: Vec<Article>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusManifest {
    articles: Vec<String>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new(articles: Vec<Article>) -> Self {
        Self {
            articles,
            metadata: BTreeMap::new(),
        }
    }

    /// Checks every article and the uniqueness of ids.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.articles.is_empty() {
            return Err(CorpusError::Empty);
        }
        for a in &self.articles {
            a.validate()?;
        }
        let mut seen = HashSet::new();
        let mut dups: Vec<String> = self
            .articles
            .iter()
            .filter(|a| !seen.insert(a.id.as_str()))
            .map(|a| a.id.clone())
            .collect();
        if !dups.is_empty() {
            dups.sort();
            dups.dedup();
            return Err(CorpusError::DuplicateIds(dups));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.articles.iter().find(|a| a.id == id)
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let manifest_path = dir.join("manifest.json");
        let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: CorpusManifest =
            serde_json::from_str(&raw).map_err(|source| CorpusError::Json {
                path: manifest_path.clone(),
                source,
            })?;
        let mut articles = Vec::with_capacity(manifest.articles.len());
        for name in &manifest.articles {
            let path = dir.join(name);
            let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
            let article: Article =
                serde_json::from_str(&raw).map_err(|source| CorpusError::Json {
                    path: path.clone(),
                    source,
                })?;
            articles.push(article);
        }
        let corpus = Corpus {
            articles,
            metadata: manifest.metadata,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut names = Vec::with_capacity(self.articles.len());
        for a in &self.articles {
            let name = format!("{}.json", file_stem(&a.id));
            let path = dir.join(&name);
            let body = serde_json::to_string_pretty(a).expect("article serializes");
            fs::write(&path, body).map_err(io_err(&path))?;
            names.push(name);
        }
        let manifest = CorpusManifest {
            articles: names,
            metadata: self.metadata.clone(),
        };
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, body).map_err(io_err(&path))
    }
}

/// Maps an arbitrary id onto a file-system-safe stem.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn page_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s\-–—]*(?:page\s+)?\d{1,4}(?:\s*(?:of|/)\s*\d{1,4})?[\s\-–—]*$")
            .expect("valid regex")
    })
}

fn terminal_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"[.!?:]["'”’)\]]*$"#).expect("valid regex"))
}

fn normalize_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut last_digit = false;
    let mut last_space = true;
    for c in line.trim().chars() {
        if c.is_ascii_digit() {
            if !last_digit {
                out.push('#');
            }
            last_digit = true;
            last_space = false;
        } else if c.is_whitespace() {
            if !last_space {
                out.push(' ');
            }
            last_digit = false;
            last_space = true;
        } else {
            out.extend(c.to_lowercase());
            last_digit = false;
            last_space = false;
        }
    }
    out.trim_end().to_string()
}

fn collapse_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized lines that repeat on [`HEADER_MIN_PAGES`] or more distinct pages.
pub fn header_lines<S: AsRef<str>>(blocks: &[(u32, S)]) -> HashSet<String> {
    let mut pages: HashMap<String, HashSet<u32>> = HashMap::new();
    for (page, text) in blocks {
        for line in text.as_ref().lines() {
            let norm = normalize_line(line);
            if !norm.is_empty() {
                pages.entry(norm).or_default().insert(*page);
            }
        }
    }
    pages
        .into_iter()
        .filter(|(_, p)| p.len() >= HEADER_MIN_PAGES)
        .map(|(line, _)| line)
        .collect()
}

/// Strips header/footer and page-number lines from one block and collapses
/// whitespace.
pub fn strip_block(text: &str, headers: &HashSet<String>) -> String {
    let kept: Vec<&str> = text
        .lines()
        .filter(|line| !page_number_re().is_match(line))
        .filter(|line| !headers.contains(&normalize_line(line)))
        .collect();
    collapse_ws(&kept.join(" "))
}

pub fn ends_with_terminal(text: &str) -> bool {
    terminal_re().is_match(text.trim_end())
}

/// Turns extracted text blocks into paragraphs: drops running headers and
/// footers and page numbers, then merges each block into the previous one
/// when the previous one lacks terminal punctuation.
pub fn clean_blocks<S: AsRef<str>>(blocks: &[(u32, S)]) -> Vec<String> {
    let headers = header_lines(blocks);
    merge_paragraphs(
        blocks
            .iter()
            .map(|(_, text)| strip_block(text.as_ref(), &headers)),
    )
}

fn merge_paragraphs(blocks: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for block in blocks.filter(|b| !b.is_empty()) {
        match out.last_mut() {
            Some(prev) if !ends_with_terminal(prev) => {
                prev.push(' ');
                prev.push_str(&block);
            }
            _ => out.push(block),
        }
    }
    out
}

/// One extracted block as produced by an external PDF/Word text extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBlock {
    pub page: u32,
    pub text: String,
    #[serde(default)]
    pub role: ParagraphRole,
}

/// Pre-extracted article awaiting cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawArticle {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub human_score: f64,
    pub blocks: Vec<RawBlock>,
}

/// Cleans a raw article. Body blocks are merged into paragraphs; flagged
/// blocks (tables, author lists, keywords) are kept as single paragraphs
/// with their role so views can drop them.
pub fn ingest(raw: &RawArticle) -> Result<Article, CorpusError> {
    let all: Vec<(u32, &str)> = raw.blocks.iter().map(|b| (b.page, b.text.as_str())).collect();
    let headers = header_lines(&all);
    let mut paragraphs: Vec<Paragraph> = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let flush = |pending: &mut Vec<String>, paragraphs: &mut Vec<Paragraph>| {
        paragraphs.extend(merge_paragraphs(pending.drain(..)).into_iter().map(Paragraph::body));
    };
    for block in &raw.blocks {
        let text = strip_block(&block.text, &headers);
        if block.role == ParagraphRole::Body {
            pending.push(text);
        } else if !text.is_empty() {
            flush(&mut pending, &mut paragraphs);
            paragraphs.push(Paragraph::with_role(text, block.role));
        }
    }
    flush(&mut pending, &mut paragraphs);
    let article = Article {
        id: raw.id.clone(),
        title: collapse_ws(&raw.title),
        abstract_text: collapse_ws(&raw.abstract_text),
        paragraphs,
        human_score: raw.human_score,
    };
    article.validate()?;
    Ok(article)
}

/// Reads raw articles from a directory of `*.json` files (sorted by name)
/// or from a JSONL file with one article per line.
pub fn read_raw_articles(path: &Path) -> Result<Vec<RawArticle>, CorpusError> {
    let parse = |p: &Path, text: &str| {
        serde_json::from_str::<RawArticle>(text).map_err(|source| CorpusError::Json {
            path: p.to_path_buf(),
            source,
        })
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| parse(p, &fs::read_to_string(p).map_err(io_err(p))?))
            .collect()
    } else {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse(path, l))
            .collect()
    }
}

/// One line of a chat-completions batch file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLine {
    pub custom_id: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

pub fn custom_id(article_id: &str, iteration: usize) -> String {
    format!("{article_id}#{iteration}")
}

/// Splits a custom id at its last `#`.
pub fn parse_custom_id(id: &str) -> Option<(&str, usize)> {
    let (article, iter) = id.rsplit_once('#')?;
    Some((article, iter.parse().ok()?))
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error("iterations must be at least 1")]
    NoIterations,
}

/// Emits one JSONL line per (article, iteration), article-major.
pub fn to_jsonl(
    corpus: &Corpus,
    kind: ViewKind,
    strategy: StrategyId,
    model: &str,
    params: &SamplingParams,
    iterations: usize,
    options: &ViewOptions,
) -> Result<Vec<String>, BatchError> {
    if iterations == 0 {
        return Err(BatchError::NoIterations);
    }
    corpus.validate()?;
    let system = prompts::system_prompt(strategy);
    let mut lines = Vec::with_capacity(corpus.articles.len() * iterations);
    for article in &corpus.articles {
        let view = build_view(article, kind, options)?;
        let user = prompts::user_prompt(&view)?;
        for iteration in 0..iterations {
            let line = BatchLine {
                custom_id: custom_id(&article.id, iteration),
                model: model.to_string(),
                messages: vec![ChatMessage::system(system), ChatMessage::user(user.clone())],
                temperature: params.temperature,
                top_p: params.top_p,
                max_tokens: params.max_tokens,
            };
            lines.push(serde_json::to_string(&line).expect("batch line serializes"));
        }
    }
    Ok(lines)
}
