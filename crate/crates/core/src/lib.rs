//! Harness for scoring research articles with chat-completion models and
//! analysing how averaged scores track human quality ratings.

pub mod client;
pub mod corpus;
pub mod experiment;
pub mod prompts;
pub mod score_parser;
pub mod scorebook;
pub mod stats;
pub mod synthetic;
