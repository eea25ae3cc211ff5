use std::collections::HashSet;
use std::time::Duration;

use crate::bm25_index::Tokenizer;

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("scoring protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("scorer did not answer within {0:?}")]
    Timeout(Duration),
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("scorer failed: {0}")]
    Failure(String),
    #[error("scorer i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Relevance model for (query, passage) pairs.
///
/// Implementations return one score in `[0, 1]` per pair, in input order, and
/// must be deterministic for identical inputs within a session.
pub trait Scorer: Send + Sync {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError>;

    fn descriptor(&self) -> String;

    /// Name of the tokenizer the model counts tokens with, if advertised.
    fn tokenizer_name(&self) -> Option<String> {
        None
    }
}

/// Scores `pairs` and enforces the length and range contract.
pub fn checked_scores(scorer: &dyn Scorer, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let scores = scorer.score_batch(pairs)?;
    if scores.len() != pairs.len() {
        return Err(ScorerError::ProtocolViolation(format!(
            "{} returned {} scores for {} pairs",
            scorer.descriptor(),
            scores.len(),
            pairs.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ScorerError::ProtocolViolation(format!(
            "{} returned out-of-range score {bad}",
            scorer.descriptor()
        )));
    }
    Ok(scores)
}

/// Same score for every pair.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(vec![self.0; pairs.len()])
    }

    fn descriptor(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// Fraction of distinct query tokens that also occur in the passage.
#[derive(Debug, Clone, Default)]
pub struct LexicalOverlapScorer {
    tokenizer: Tokenizer,
}

pub fn lexical_overlap_scorer() -> LexicalOverlapScorer {
    LexicalOverlapScorer::default()
}

impl LexicalOverlapScorer {
    pub fn with_tokenizer(tokenizer: Tokenizer) -> Self {
        LexicalOverlapScorer { tokenizer }
    }

    pub fn score(&self, query: &str, passage: &str) -> f64 {
        let q: HashSet<String> = self.tokenizer.tokenize(query).into_iter().collect();
        if q.is_empty() {
            return 0.0;
        }
        let p: HashSet<String> = self.tokenizer.tokenize(passage).into_iter().collect();
        q.intersection(&p).count() as f64 / q.len() as f64
    }
}

impl Scorer for LexicalOverlapScorer {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs.iter().map(|(q, p)| self.score(q, p)).collect())
    }

    fn descriptor(&self) -> String {
        "lexical_overlap".to_string()
    }

    fn tokenizer_name(&self) -> Option<String> {
        Some(self.tokenizer.name().to_string())
    }
}

/// Adapts a closure into a scorer.
pub struct FnScorer<F> {
    name: String,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnScorer {
            name: name.into(),
            f,
        }
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs.iter().map(|(q, p)| (self.f)(q, p)).collect())
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}
