//! Browser bindings: simulate a scoring experiment, parse a report, and
//! fit a calibration line. Every function returns a JSON string.

use refscore_core::client::MockConfig;
use refscore_core::corpus::ViewKind;
use refscore_core::score_parser::{extract_score, RuleSet};
use refscore_core::stats::{self, CurveOptions, FitOptions};
use refscore_core::synthetic::{simulate_matrix, synthetic_corpus};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn error(msg: impl std::fmt::Display) -> Value {
    json!({ "error": msg.to_string() })
}

/// Runs the mock judge over a synthetic corpus and returns the correlation
/// curve and calibration row.
pub fn simulate_json(
    articles: usize,
    iterations: usize,
    noise_sd: f64,
    bias_sd: f64,
    refusal: f64,
    sampled_subsets: usize,
    seed: u64,
) -> Value {
    if !(4..=500).contains(&articles) || !(4..=50).contains(&iterations) {
        return error("need 4-500 articles and 4-50 iterations");
    }
    if !(0.0..=1.0).contains(&refusal) || !(0.0..).contains(&noise_sd) || !(0.0..).contains(&bias_sd) {
        return error("refusal must lie in [0, 1] and standard deviations must be >= 0");
    }
    let (corpus, latent) = synthetic_corpus(articles, seed);
    let mock = MockConfig {
        noise_sd,
        bias_sd,
        refusal_probability: refusal,
        latent,
        ..MockConfig::default()
    };
    let matrix = match simulate_matrix(&corpus, &mock, seed, ViewKind::Abstract, iterations, &RuleSet::default()) {
        Ok(m) => m,
        Err(e) => return error(e),
    };
    let options = CurveOptions {
        sampled_subsets: sampled_subsets.clamp(1, 1000),
        ..CurveOptions::default()
    };
    let curve = match stats::correlation_curve(&matrix, seed, &options) {
        Ok(c) => c,
        Err(e) => return error(e),
    };
    let calibration = stats::calibration_row(&matrix.row_means(), matrix.human(), &FitOptions::default());
    json!({
        "curve": curve,
        "missing": matrix.missing_count(),
        "calibration": calibration.map_or_else(error, |c| json!(c)),
    })
}

/// Extracts a score from report text with the default rules.
pub fn parse_report_json(report: &str) -> Value {
    match extract_score(report, &RuleSet::default()) {
        Ok(p) => json!({ "value": p.value, "kind": p.kind, "rule": p.rule_id }),
        Err(e) => error(e),
    }
}

/// Fits human ~ model on `model,human` lines and, when given, calibrates
/// one averaged score.
pub fn calibrate_json(pairs: &str, score: Option<f64>) -> Value {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, line) in pairs.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<Result<f64, _>> = line
            .split([',', '\t', ' '])
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect();
        match nums.as_slice() {
            [Ok(a), Ok(b)] => {
                x.push(*a);
                y.push(*b);
            }
            _ => return error(format!("line {}: expected two numbers", i + 1)),
        }
    }
    match stats::ols_fit(&x, &y) {
        Ok(m) => json!({
            "intercept": m.intercept,
            "coefficient": m.coefficient,
            "mad": m.training_mad,
            "baseline_mad": m.baseline_mad,
            "improvement_pct": m.improvement.map(|f| f * 100.0),
            "calibrated": score.map(|s| m.calibrate(s)),
        }),
        Err(e) => error(e),
    }
}

#[wasm_bindgen]
pub fn simulate(
    articles: usize,
    iterations: usize,
    noise_sd: f64,
    bias_sd: f64,
    refusal: f64,
    sampled_subsets: usize,
    seed: u32,
) -> String {
    simulate_json(articles, iterations, noise_sd, bias_sd, refusal, sampled_subsets, seed.into()).to_string()
}

#[wasm_bindgen]
pub fn parse_report(report: &str) -> String {
    parse_report_json(report).to_string()
}

/// `score` is ignored when NaN.
#[wasm_bindgen]
pub fn calibrate(pairs: &str, score: f64) -> String {
    calibrate_json(pairs, (!score.is_nan()).then_some(score)).to_string()
}
