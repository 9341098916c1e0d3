//! Extraction of a single quality score from a free-text report.
//!
//! Rules are data: an ordered list loaded from TOML (the default set is
//! embedded from `resources/rules.toml`). Reports that no rule resolves go
//! to a manual queue instead of being dropped.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SCALE_MAX, SCALE_MIN};

const DEFAULT_RULES: &str = include_str!("../resources/rules.toml");

const STAR_TOKEN: &str = r"(?:\s*\*|-stars?\b|\s+stars?\b)";
const NUMBER: &str = r"\d+(?:\.\d+)?";

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("rules file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("rule {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("rule set is empty")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractError {
    #[error("unparseable report: {0}")]
    Unparseable(String),
    #[error("rule {rule_id} captured {value}, outside the 1-4 scale")]
    OutOfScale { rule_id: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Strip,
    Overall,
    SubscoreAverage,
    RangeMidpoint,
    OrigSigAverage,
    Refusal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Overall,
    SubscoreAverage,
    RangeMidpoint,
    OrigSigAverage,
    Manual,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedScore {
    /// `None` when the report declined to score.
    pub value: Option<f64>,
    pub kind: ScoreKind,
    pub rule_id: String,
}

impl ParsedScore {
    pub fn missing(rule_id: &str) -> Self {
        Self {
            value: None,
            kind: ScoreKind::Missing,
            rule_id: rule_id.into(),
        }
    }

    fn scored(value: f64, kind: ScoreKind, rule_id: &str) -> Self {
        Self {
            value: Some(value),
            kind,
            rule_id: rule_id.into(),
        }
    }
}

/// One rule as written in the rules file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub id: String,
    pub kind: RuleKind,
    pub pattern: String,
}

#[derive(Debug, Deserialize)]
struct RulesFile {
    rule: Vec<RuleRecord>,
}

#[derive(Debug, Clone)]
struct Rule {
    record: RuleRecord,
    regex: Regex,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<Rule>,
    digest: String,
}

fn macro_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(star|num):([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"))
}

/// Expands `{star:NAME}` and `{num:NAME}` into named capture groups.
pub fn expand_macros(pattern: &str) -> String {
    macro_re()
        .replace_all(pattern, |c: &Captures| match &c[1] {
            "star" => format!("(?P<{}>{NUMBER}){STAR_TOKEN}", &c[2]),
            _ => format!("(?P<{}>{NUMBER})", &c[2]),
        })
        .into_owned()
}

fn required_groups(kind: RuleKind) -> &'static [&'static str] {
    match kind {
        RuleKind::Strip | RuleKind::Refusal => &[],
        RuleKind::Overall => &["score"],
        RuleKind::SubscoreAverage | RuleKind::OrigSigAverage => &["dim", "score"],
        RuleKind::RangeMidpoint => &["low", "high"],
    }
}

impl RuleSet {
    pub fn from_records(records: Vec<RuleRecord>) -> Result<Self, RuleError> {
        let digest_src = serde_json::to_string(&records).expect("records serialize");
        Self::build(records, &digest_src)
    }

    fn build(records: Vec<RuleRecord>, digest_src: &str) -> Result<Self, RuleError> {
        if records.iter().all(|r| r.kind == RuleKind::Strip) {
            return Err(RuleError::Empty);
        }
        let mut rules = Vec::with_capacity(records.len());
        for record in records {
            let regex = Regex::new(&expand_macros(&record.pattern)).map_err(|e| RuleError::Invalid {
                id: record.id.clone(),
                message: e.to_string(),
            })?;
            let names: Vec<&str> = regex.capture_names().flatten().collect();
            if let Some(missing) = required_groups(record.kind)
                .iter()
                .find(|g| !names.contains(g))
            {
                return Err(RuleError::Invalid {
                    id: record.id.clone(),
                    message: format!("pattern lacks capture group `{missing}`"),
                });
            }
            rules.push(Rule { record, regex });
        }
        Ok(Self {
            rules,
            digest: hex::encode(Sha256::digest(digest_src.as_bytes())),
        })
    }

    pub fn from_toml(source: &str) -> Result<Self, RuleError> {
        let file: RulesFile = toml::from_str(source)?;
        Self::build(file.rule, source)
    }

    pub fn from_file(path: &Path) -> Result<Self, RuleError> {
        let src = fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&src)
    }

    pub fn records(&self) -> impl Iterator<Item = &RuleRecord> {
        self.rules.iter().map(|r| &r.record)
    }

    /// Hex SHA-256 of the rule source.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn default_source() -> &'static str {
        DEFAULT_RULES
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        static DEFAULT: OnceLock<RuleSet> = OnceLock::new();
        DEFAULT
            .get_or_init(|| RuleSet::from_toml(DEFAULT_RULES).expect("embedded rules are valid"))
            .clone()
    }
}

/// Rounds half-up to three decimal places.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0 + 0.5).floor() / 1000.0
}

fn in_scale(rule_id: &str, value: f64) -> Result<f64, ExtractError> {
    if (SCALE_MIN..=SCALE_MAX).contains(&value) {
        Ok(value)
    } else {
        Err(ExtractError::OutOfScale {
            rule_id: rule_id.into(),
            value,
        })
    }
}

fn capture_value(rule_id: &str, caps: &Captures, group: &str) -> Result<Option<f64>, ExtractError> {
    match caps.name(group) {
        None => Ok(None),
        Some(m) => {
            let v: f64 = m.as_str().parse().map_err(|_| {
                ExtractError::Unparseable(format!("rule {rule_id}: bad number {:?}", m.as_str()))
            })?;
            in_scale(rule_id, v).map(Some)
        }
    }
}

#[derive(Default)]
struct Dimensions {
    originality: Option<f64>,
    significance: Option<f64>,
    rigour: Option<f64>,
}

fn dimensions(rule: &Rule, text: &str) -> Result<Dimensions, ExtractError> {
    let mut dims = Dimensions::default();
    let id = &rule.record.id;
    for caps in rule.regex.captures_iter(text) {
        let value = capture_value(id, &caps, "score")?.expect("score group is required");
        let slot = match caps["dim"].to_ascii_lowercase().as_str() {
            "originality" => &mut dims.originality,
            "significance" => &mut dims.significance,
            _ => &mut dims.rigour,
        };
        slot.get_or_insert(value);
    }
    Ok(dims)
}

fn apply(rule: &Rule, text: &str) -> Result<Option<ParsedScore>, ExtractError> {
    let id = rule.record.id.as_str();
    match rule.record.kind {
        RuleKind::Strip => Ok(None),
        RuleKind::Overall => {
            let Some(caps) = rule.regex.captures(text) else {
                return Ok(None);
            };
            let score = capture_value(id, &caps, "score")?.expect("score group is required");
            Ok(Some(match capture_value(id, &caps, "high")? {
                Some(high) => ParsedScore::scored((score + high) / 2.0, ScoreKind::RangeMidpoint, id),
                None => ParsedScore::scored(score, ScoreKind::Overall, id),
            }))
        }
        RuleKind::SubscoreAverage => {
            let d = dimensions(rule, text)?;
            Ok(match (d.originality, d.significance, d.rigour) {
                (Some(o), Some(s), Some(r)) => Some(ParsedScore::scored(
                    round3((o + s + r) / 3.0),
                    ScoreKind::SubscoreAverage,
                    id,
                )),
                _ => None,
            })
        }
        RuleKind::OrigSigAverage => {
            let d = dimensions(rule, text)?;
            Ok(match (d.originality, d.significance) {
                (Some(o), Some(s)) => Some(ParsedScore::scored(
                    round3((o + s) / 2.0),
                    ScoreKind::OrigSigAverage,
                    id,
                )),
                _ => None,
            })
        }
        RuleKind::RangeMidpoint => {
            let Some(caps) = rule.regex.captures(text) else {
                return Ok(None);
            };
            let low = capture_value(id, &caps, "low")?.expect("low group is required");
            let high = capture_value(id, &caps, "high")?.expect("high group is required");
            let (lo, hi) = (low.min(high), low.max(high));
            Ok(Some(ParsedScore::scored((lo + hi) / 2.0, ScoreKind::RangeMidpoint, id)))
        }
        RuleKind::Refusal => Ok(rule.regex.is_match(text).then(|| ParsedScore::missing(id))),
    }
}

/// Applies the rules in order and returns the first result.
pub fn extract_score(report: &str, rules: &RuleSet) -> Result<ParsedScore, ExtractError> {
    if report.trim().is_empty() {
        return Err(ExtractError::Unparseable("empty report".into()));
    }
    let mut text = report.to_string();
    for rule in rules.rules.iter().filter(|r| r.record.kind == RuleKind::Strip) {
        text = rule.regex.replace_all(&text, " ").into_owned();
    }
    for rule in rules.rules.iter().filter(|r| r.record.kind != RuleKind::Strip) {
        if let Some(score) = apply(rule, &text)? {
            return Ok(score);
        }
    }
    Err(ExtractError::Unparseable("no extraction rule matched".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub value: f64,
    pub note: String,
}

/// An unparsed report waiting for a human score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub id: String,
    pub cell: String,
    pub article_id: String,
    pub iteration: usize,
    pub reason: String,
    pub report: String,
    #[serde(default)]
    pub resolution: Option<Resolution>,
}

impl QueueEntry {
    pub fn score(&self) -> Option<ParsedScore> {
        self.resolution.as_ref().map(|r| ParsedScore {
            value: Some(r.value),
            kind: ScoreKind::Manual,
            rule_id: "manual".into(),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QueueError {
    #[error("no queue entry {0}")]
    NotFound(String),
    #[error("queue entry {0} is already resolved")]
    AlreadyResolved(String),
    #[error("manual score {0} is outside the 1-4 scale")]
    OutOfScale(f64),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Manual-resolution queue, persisted as JSONL.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManualQueue {
    entries: Vec<QueueEntry>,
}

impl ManualQueue {
    pub fn entry_id(cell: &str, article_id: &str, iteration: usize) -> String {
        format!("{cell}/{}", crate::corpus::custom_id(article_id, iteration))
    }

    pub fn load(path: &Path) -> Result<Self, QueueError> {
        let raw = match fs::read_to_string(path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => {
                return Err(QueueError::Io {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        };
        let entries = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<QueueEntry>, _>>()
            .map_err(|e| QueueError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), QueueError> {
        crate::experiment::write_atomic(path, self.to_jsonl().as_bytes()).map_err(|e| {
            QueueError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        })
    }

    /// Adds an entry unless one with the same id exists (keeping any
    /// resolution already recorded for it).
    pub fn push(&mut self, entry: QueueEntry) {
        if self.get(&entry.id).is_none() {
            self.entries.push(entry);
        }
    }

    pub fn get(&self, id: &str) -> Option<&QueueEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn pending(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter().filter(|e| e.resolution.is_none())
    }

    /// Records a human score for an unresolved entry.
    pub fn resolve_manual(&mut self, id: &str, value: f64, note: &str) -> Result<ParsedScore, QueueError> {
        if !(SCALE_MIN..=SCALE_MAX).contains(&value) {
            return Err(QueueError::OutOfScale(value));
        }
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| QueueError::NotFound(id.into()))?;
        if entry.resolution.is_some() {
            return Err(QueueError::AlreadyResolved(id.into()));
        }
        entry.resolution = Some(Resolution {
            value,
            note: note.into(),
        });
        Ok(entry.score().expect("just resolved"))
    }
}

/// Per-kind tally, useful in summaries.
pub fn kind_counts<'a>(scores: impl IntoIterator<Item = &'a ParsedScore>) -> HashMap<ScoreKind, usize> {
    let mut out = HashMap::new();
    for s in scores {
        *out.entry(s.kind).or_insert(0) += 1;
    }
    out
}
