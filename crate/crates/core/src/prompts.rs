//! System prompt strategies and the user prompt.
//!
//! Strategy 6 is the full quality-assessment instruction text. Strategies 1
//! through 5 are successively longer prefixes of it, cut at the markers
//! embedded in `resources/ref_instructions.txt`. Strategy 0 is a short
//! instruction that asks only for a score.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::DocumentView;

const INSTRUCTIONS_SOURCE: &str = include_str!("../resources/ref_instructions.txt");
const STRATEGY0_SOURCE: &str = include_str!("../resources/strategy0.txt");

/// Literal prefix of every user message.
pub const USER_PROMPT_PREFIX: &str = "Score the following journal article: ";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("cannot build a user prompt from empty text")]
    EmptyView,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    S0,
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    /// Strategy 6 without the originality/significance/rigour definitions.
    S6MinusDefs,
}

impl StrategyId {
    /// The seven strategies run by default.
    pub const STANDARD: [StrategyId; 7] = [
        StrategyId::S0,
        StrategyId::S1,
        StrategyId::S2,
        StrategyId::S3,
        StrategyId::S4,
        StrategyId::S5,
        StrategyId::S6,
    ];

    pub const ALL: [StrategyId; 8] = [
        StrategyId::S0,
        StrategyId::S1,
        StrategyId::S2,
        StrategyId::S3,
        StrategyId::S4,
        StrategyId::S5,
        StrategyId::S6,
        StrategyId::S6MinusDefs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::S0 => "s0",
            StrategyId::S1 => "s1",
            StrategyId::S2 => "s2",
            StrategyId::S3 => "s3",
            StrategyId::S4 => "s4",
            StrategyId::S5 => "s5",
            StrategyId::S6 => "s6",
            StrategyId::S6MinusDefs => "s6-minus-defs",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str() == norm || id.as_str().trim_start_matches('s') == norm)
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))
    }
}

impl Serialize for StrategyId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

struct PromptTable {
    texts: [String; 8],
}

/// Splits the instruction source at its cut markers. Returns the six
/// segments (text before marker 1, between 1 and 2, ..., between 5 and 6)
/// and the separator that joins each segment to the previous one.
fn segments(source: &str) -> Vec<(String, String)> {
    let marker = Regex::new(r"\[Strategy (\d) is everything (?:before|above) here\]")
        .expect("valid regex");
    let mut out = Vec::new();
    let mut start = 0;
    let mut sep = String::new();
    for m in marker.find_iter(source) {
        let raw = &source[start..m.start()];
        out.push((sep.clone(), raw.trim().to_string()));
        let after = &source[m.end()..];
        let ws_before = &raw[raw.trim_end().len()..];
        let ws_after = &after[..after.len() - after.trim_start().len()];
        sep = if ws_before.contains('\n') || ws_after.contains('\n') {
            "\n\n".into()
        } else {
            " ".into()
        };
        start = m.end();
    }
    debug_assert!(source[start..].trim().is_empty());
    // Normalize paragraph breaks inside segments to a single blank line.
    let para = Regex::new(r"\n\s*\n").expect("valid regex");
    out.into_iter()
        .map(|(sep, text)| (sep, para.replace_all(&text, "\n\n").into_owned()))
        .collect()
}

fn join(segs: &[(String, String)], keep: impl Fn(usize) -> bool) -> String {
    let mut text = String::new();
    for (i, (sep, body)) in segs.iter().enumerate() {
        if !keep(i) {
            continue;
        }
        if !text.is_empty() {
            text.push_str(sep);
        }
        text.push_str(body);
    }
    text
}

fn table() -> &'static PromptTable {
    static TABLE: OnceLock<PromptTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let segs = segments(INSTRUCTIONS_SOURCE);
        assert_eq!(segs.len(), 6, "instruction source must carry six cut markers");
        let prefix = |n: usize| join(&segs, |i| i < n);
        let s0 = Regex::new(r"\n\s*\n")
            .expect("valid regex")
            .replace_all(STRATEGY0_SOURCE.trim(), "\n\n")
            .into_owned();
        PromptTable {
            texts: [
                s0,
                prefix(1),
                prefix(2),
                prefix(3),
                prefix(4),
                prefix(5),
                prefix(6),
                // segment 2 holds the originality/significance/rigour definitions
                join(&segs, |i| i != 2),
            ],
        }
    })
}

/// Full system prompt text for a strategy.
pub fn system_prompt(strategy: StrategyId) -> &'static str {
    let idx = StrategyId::ALL
        .iter()
        .position(|s| *s == strategy)
        .expect("every id is listed");
    &table().texts[idx]
}

/// Hex SHA-256 of a strategy's text.
pub fn prompt_digest(strategy: StrategyId) -> String {
    hex::encode(Sha256::digest(system_prompt(strategy).as_bytes()))
}

pub fn user_prompt(view: &DocumentView) -> Result<String, PromptError> {
    if view.text.is_empty() {
        return Err(PromptError::EmptyView);
    }
    Ok(format!("{USER_PROMPT_PREFIX}{}", view.text))
}
