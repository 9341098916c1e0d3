//! Synthetic corpora and offline simulation of a scoring cell.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::client::{CellSpec, MockBackend, MockConfig, ModelId, SamplingParams};
use crate::corpus::{Article, Corpus, Paragraph, ParagraphRole, ViewKind, ViewOptions};
use crate::prompts::StrategyId;
use crate::score_parser::{extract_score, RuleSet};
use crate::scorebook::{build_matrix, CellValue, MatrixError, ScoreMatrix, ScoreRecord};

const TOPICS: [&str; 8] = [
    "citation counts",
    "altmetric indicators",
    "journal impact",
    "research collaboration",
    "open access uptake",
    "peer review outcomes",
    "gender differences in authorship",
    "funding acknowledgements",
];

const FIELDS: [&str; 6] = [
    "information science",
    "clinical medicine",
    "computer science",
    "sociology",
    "physics",
    "education",
];

const METHODS: [&str; 4] = [
    "a regression analysis",
    "a large-scale bibliometric comparison",
    "a content analysis",
    "a survey of authors",
];

/// Builds `n` articles with a latent quality drawn uniformly from [1, 4].
/// Human scores are the latent quality plus rater noise, snapped to the
/// half-star grid. Returns the corpus and the latent qualities by id.
pub fn synthetic_corpus(n: usize, seed: u64) -> (Corpus, BTreeMap<String, f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rater = Normal::new(0.0, 0.3).expect("valid sd");
    let mut latent = BTreeMap::new();
    let mut articles = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("art{i:03}");
        let q: f64 = rng.random_range(1.0..=4.0);
        let human = ((q + rater.sample(&mut rng)) * 2.0).round().clamp(2.0, 8.0) / 2.0;
        let topic = TOPICS[rng.random_range(0..TOPICS.len())];
        let field = FIELDS[rng.random_range(0..FIELDS.len())];
        let method = METHODS[rng.random_range(0..METHODS.len())];
        let title = format!("{} in {}: evidence from study {i}", capitalize(topic), field);
        let abstract_text = format!(
            "This article investigates {topic} in {field} using {method}. \
             The results suggest differences between groups that are relevant for research evaluation."
        );
        let paragraphs = vec![
            Paragraph::with_role(format!("Author {i}, University {}", i % 7), ParagraphRole::Authors),
            Paragraph::with_role(format!("Keywords: {topic}; {field}"), ParagraphRole::Keywords),
            Paragraph::body("1 Introduction"),
            Paragraph::body(format!(
                "Research on {topic} has grown, but evidence for {field} remains limited."
            )),
            Paragraph::body(format!("2 Methods\n\nThe study applies {method} to a purpose-built dataset.")),
            Paragraph::with_role("Group | N | Mean\nA | 120 | 2.1", ParagraphRole::Table),
            Paragraph::body("3 Results and discussion. The findings are reported with appropriate caveats."),
            Paragraph::body("References"),
            Paragraph::body("Smith, A. (2020). An earlier study. Journal of Examples, 1(1), 1-10."),
        ];
        latent.insert(id.clone(), q);
        articles.push(Article {
            id,
            title,
            abstract_text,
            paragraphs,
            human_score: human,
        });
    }
    let mut corpus = Corpus::new(articles);
    corpus.metadata.insert("generator".into(), "synthetic".into());
    corpus.metadata.insert("seed".into(), seed.to_string());
    (corpus, latent)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Scores every article `iterations` times with the mock judge, parses the
/// reports and assembles the matrix, entirely in memory.
pub fn simulate_matrix(
    corpus: &Corpus,
    mock: &MockConfig,
    seed: u64,
    view: ViewKind,
    iterations: usize,
    rules: &RuleSet,
) -> Result<ScoreMatrix, MatrixError> {
    let backend = MockBackend::new(seed, mock.clone());
    let cell = CellSpec {
        view,
        strategy: StrategyId::S6,
        model: ModelId::new("mock").expect("non-empty"),
        params: SamplingParams::default(),
        view_options: ViewOptions::default(),
    };
    let mut records = Vec::with_capacity(corpus.articles.len() * iterations);
    for article in &corpus.articles {
        let request = cell
            .request(article)
            .map_err(|e| MatrixError::Invalid(vec![e.to_string()]))?;
        for i in 0..iterations {
            let key = cell.key(&article.id, i);
            let report = backend.mock_complete(&request, &key);
            let value = match extract_score(&report, rules) {
                Ok(p) => p.value.map_or(CellValue::Missing, CellValue::Score),
                Err(_) => CellValue::Pending(key.to_string()),
            };
            records.push(ScoreRecord {
                article_id: article.id.clone(),
                iteration: i,
                value,
            });
        }
    }
    let human: Vec<(String, f64)> = corpus
        .articles
        .iter()
        .map(|a| (a.id.clone(), a.human_score))
        .collect();
    build_matrix(&records, &human, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_valid_and_seeded() {
        let (c, latent) = synthetic_corpus(51, 3);
        c.validate().unwrap();
        assert_eq!(c.articles.len(), 51);
        assert_eq!(latent.len(), 51);
        assert!(latent.values().all(|q| (1.0..=4.0).contains(q)));
        assert!(c.articles.iter().all(|a| (a.human_score * 2.0).fract() == 0.0));
        assert_eq!(synthetic_corpus(51, 3).0, c);
        assert_ne!(synthetic_corpus(51, 4).0, c);
    }

    #[test]
    fn simulated_matrix_has_full_shape() {
        let (c, latent) = synthetic_corpus(12, 1);
        let mock = MockConfig { latent, ..Default::default() };
        let m = simulate_matrix(&c, &mock, 5, ViewKind::Abstract, 6, &RuleSet::default()).unwrap();
        assert_eq!((m.articles(), m.iterations()), (12, 6));
    }
}
