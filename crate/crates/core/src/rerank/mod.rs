//! Commit-message and code reranking over a pluggable [`Scorer`].
//!
//! Both stages rescore the top `depth` files with max aggregation over their
//! passages and re-sort only that prefix; ties keep the prior order and the
//! tail is left untouched.

mod external;
mod patches;
mod scorer;

use std::collections::HashMap;

pub use external::{
    external_scorer, serve_protocol, Endpoint, ExternalScorer, Handshake, ScoreRequest,
    ScoreResponse, DEFAULT_TIMEOUT,
};
pub use patches::{split_linewise, CodePatch};
pub use scorer::{
    checked_scores, lexical_overlap_scorer, ConstantScorer, FnScorer, LexicalOverlapScorer,
    Scorer, ScorerError,
};

use crate::bm25_index::Tokenizer;
use crate::catalog::CommitMessages;
use crate::commit_store::ContentSource;
use crate::pipeline::ScoredFile;

pub const DEFAULT_PATCH_BUDGET: usize = 350;

/// Stable descending sort of the first `depth` entries by score.
fn resort_prefix(files: &mut [ScoredFile], depth: usize) {
    let d = depth.min(files.len());
    files[..d].sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Rescores each of the top `depth` files by its best-matching contributing
/// commit message.
pub fn rerank_by_commits(
    query: &str,
    mut candidates: Vec<ScoredFile>,
    depth: usize,
    scorer: &dyn Scorer,
    messages: &dyn CommitMessages,
) -> Result<Vec<ScoredFile>, ScorerError> {
    let d = depth.min(candidates.len());
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut passages: Vec<&str> = Vec::new();
    for file in &candidates[..d] {
        for c in &file.contributing {
            if slot.contains_key(c.commit_id.as_str()) {
                continue;
            }
            match messages.message_of(&c.commit_id) {
                Some(m) => {
                    slot.insert(&c.commit_id, passages.len());
                    passages.push(m);
                }
                None => log::warn!("no message for commit {}", c.commit_id),
            }
        }
    }
    let pairs: Vec<(&str, &str)> = passages.iter().map(|p| (query, *p)).collect();
    let scores = checked_scores(scorer, &pairs)?;
    let new_scores: Vec<f64> = candidates[..d]
        .iter()
        .map(|f| {
            f.contributing
                .iter()
                .filter_map(|c| slot.get(c.commit_id.as_str()).map(|&i| scores[i]))
                .fold(0.0, f64::max)
        })
        .collect();
    for (f, s) in candidates.iter_mut().zip(new_scores) {
        f.score = s;
    }
    resort_prefix(&mut candidates, d);
    Ok(candidates)
}

/// Rescores each of the top `depth` files by its best-matching code patch.
/// Files without readable content score 0.
pub fn rerank_by_code(
    query: &str,
    mut candidates: Vec<ScoredFile>,
    depth: usize,
    scorer: &dyn Scorer,
    contents: &dyn ContentSource,
    tokenizer: &Tokenizer,
    budget: usize,
) -> Result<Vec<ScoredFile>, ScorerError> {
    let d = depth.min(candidates.len());
    for file in &mut candidates[..d] {
        let patches = match contents.content(&file.path) {
            Some(text) => split_linewise(&file.path, &text, budget, tokenizer),
            None => {
                log::warn!("no content for {}; scoring 0", file.path);
                Vec::new()
            }
        };
        let pairs: Vec<(&str, &str)> = patches.iter().map(|p| (query, p.text.as_str())).collect();
        let scores = checked_scores(scorer, &pairs)?;
        file.score = scores.into_iter().fold(0.0, f64::max);
    }
    resort_prefix(&mut candidates, d);
    Ok(candidates)
}
