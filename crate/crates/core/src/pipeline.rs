//! From scored commits to ranked current-state files.
//!
//! BM25 commit hits are spread over the files each commit touched, reduced
//! per file, mapped onto the snapshot through file identities, and then
//! optionally reranked by commit messages and by code.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bm25_index::{InvertedIndex, ScoredCommit, Tokenizer};
use crate::catalog::{CommitCatalog, CommitFiles};
use crate::commit_store::ContentSource;
use crate::fid_map::LiveView;
use crate::rerank::{rerank_by_code, rerank_by_commits, Scorer, ScorerError, DEFAULT_PATCH_BUDGET};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("no file list for commit {0}")]
    MissingCommitFiles(String),
    #[error("no scorer configured for the {0} stage")]
    ScorerUnavailable(&'static str),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    /// Commit date of the commit the query was derived from; hits from
    /// that moment on are masked.
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_commit_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationStrategy {
    Sump,
    #[default]
    Maxp,
    Avgp,
}

impl AggregationStrategy {
    pub fn reduce(self, scores: impl IntoIterator<Item = f64>) -> f64 {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for s in scores {
            n += 1;
            sum += s;
            max = max.max(s);
        }
        if n == 0 {
            return 0.0;
        }
        match self {
            AggregationStrategy::Sump => sum,
            AggregationStrategy::Maxp => max,
            AggregationStrategy::Avgp => sum / n as f64,
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationStrategy::Sump => "sump",
            AggregationStrategy::Maxp => "maxp",
            AggregationStrategy::Avgp => "avgp",
        })
    }
}

impl FromStr for AggregationStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sump" => Ok(AggregationStrategy::Sump),
            "maxp" => Ok(AggregationStrategy::Maxp),
            "avgp" => Ok(AggregationStrategy::Avgp),
            other => Err(format!("unknown aggregation `{other}` (sump, maxp, avgp)")),
        }
    }
}

/// One retrieved commit's evidence for a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub commit_id: String,
    pub score: f64,
    /// 0-based rank of the commit in the retrieval list.
    pub rank: usize,
    /// Path the commit touched, possibly a former name of the file.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFile {
    pub path: String,
    pub score: f64,
    pub contributing: Vec<Contribution>,
}

impl ScoredFile {
    pub fn best_rank(&self) -> usize {
        self.contributing.iter().map(|c| c.rank).min().unwrap_or(usize::MAX)
    }

    /// The contribution selected by max aggregation (earliest rank on ties).
    pub fn top_contribution(&self) -> Option<&Contribution> {
        self.contributing.iter().reduce(|best, c| {
            if c.score > best.score || (c.score == best.score && c.rank < best.rank) {
                c
            } else {
                best
            }
        })
    }
}

/// Score descending, then best contributing rank, then path.
pub fn sort_files(files: &mut [ScoredFile]) {
    files.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.best_rank().cmp(&b.best_rank()))
            .then_with(|| a.path.cmp(&b.path))
    });
}

/// Spreads commit scores over the files each commit touched and reduces
/// them per file.
pub fn aggregate_files(
    scored_commits: &[ScoredCommit],
    commit_files: &dyn CommitFiles,
    strategy: AggregationStrategy,
) -> Result<Vec<ScoredFile>, PipelineError> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut files: Vec<ScoredFile> = Vec::new();
    for (rank, commit) in scored_commits.iter().enumerate() {
        let paths = commit_files
            .files_of(&commit.commit_id)
            .ok_or_else(|| PipelineError::MissingCommitFiles(commit.commit_id.clone()))?;
        for (i, path) in paths.iter().enumerate() {
            if paths[..i].contains(path) {
                continue;
            }
            let idx = *slot.entry(path.as_str()).or_insert_with(|| {
                files.push(ScoredFile {
                    path: path.clone(),
                    score: 0.0,
                    contributing: Vec::new(),
                });
                files.len() - 1
            });
            files[idx].contributing.push(Contribution {
                commit_id: commit.commit_id.clone(),
                score: commit.score,
                rank,
                path: path.clone(),
            });
        }
    }
    for f in &mut files {
        f.score = strategy.reduce(f.contributing.iter().map(|c| c.score));
    }
    sort_files(&mut files);
    Ok(files)
}

/// Maps historical paths onto the snapshot. Files with no live path are
/// dropped; files that land on the same live path are merged and rescored.
pub fn filter_to_current(
    files: Vec<ScoredFile>,
    live: &LiveView<'_>,
    strategy: AggregationStrategy,
) -> Vec<ScoredFile> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<ScoredFile> = Vec::new();
    for file in files {
        let Some(live_path) = live.resolve(&file.path) else {
            continue;
        };
        match slot.get(live_path) {
            Some(&idx) => {
                let merged = &mut out[idx];
                for c in file.contributing {
                    // one commit counts once per file, whatever name it used
                    if !merged.contributing.iter().any(|m| m.commit_id == c.commit_id) {
                        merged.contributing.push(c);
                    }
                }
            }
            None => {
                slot.insert(live_path, out.len());
                out.push(ScoredFile {
                    path: live_path.to_string(),
                    ..file
                });
            }
        }
    }
    for f in &mut out {
        f.contributing.sort_by_key(|c| c.rank);
        f.score = strategy.reduce(f.contributing.iter().map(|c| c.score));
    }
    sort_files(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSet {
    pub commit: bool,
    pub code: bool,
}

impl StageSet {
    pub const BM25: StageSet = StageSet {
        commit: false,
        code: false,
    };
    pub const FULL: StageSet = StageSet {
        commit: true,
        code: true,
    };
}

impl Default for StageSet {
    fn default() -> Self {
        StageSet::BM25
    }
}

impl FromStr for StageSet {
    type Err = String;

    /// `bm25`, optionally followed by `+commit` and/or `+code`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('+').map(str::trim);
        if parts.next() != Some("bm25") {
            return Err(format!("stages must start with `bm25`, got `{s}`"));
        }
        let mut stages = StageSet::BM25;
        for p in parts {
            match p {
                "commit" if !stages.commit => stages.commit = true,
                "code" if !stages.code => stages.code = true,
                other => return Err(format!("unknown or repeated stage `{other}`")),
            }
        }
        Ok(stages)
    }
}

impl fmt::Display for StageSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("bm25")?;
        if self.commit {
            f.write_str("+commit")?;
        }
        if self.code {
            f.write_str("+code")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub bm25_k: usize,
    pub commit_rerank_depth: usize,
    pub code_rerank_depth: usize,
    pub aggregation: AggregationStrategy,
    pub stages: StageSet,
    pub patch_token_budget: usize,
    /// Skip an enabled stage whose scorer is missing instead of failing.
    pub skip_unavailable: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bm25_k: 1000,
            commit_rerank_depth: 1000,
            code_rerank_depth: 100,
            aggregation: AggregationStrategy::Maxp,
            stages: StageSet::BM25,
            patch_token_budget: DEFAULT_PATCH_BUDGET,
            skip_unavailable: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.bm25_k == 0 || self.commit_rerank_depth == 0 || self.code_rerank_depth == 0 {
            return Err(PipelineError::InvalidConfig("depths must be at least 1".into()));
        }
        if self.code_rerank_depth > self.commit_rerank_depth || self.commit_rerank_depth > self.bm25_k {
            return Err(PipelineError::InvalidConfig(format!(
                "need code_rerank_depth ({}) <= commit_rerank_depth ({}) <= bm25_k ({})",
                self.code_rerank_depth, self.commit_rerank_depth, self.bm25_k
            )));
        }
        if self.patch_token_budget == 0 {
            return Err(PipelineError::InvalidConfig("patch_token_budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Built artifacts a query runs against.
pub struct SearchContext<'a> {
    pub index: &'a InvertedIndex,
    pub catalog: &'a CommitCatalog,
    pub live: LiveView<'a>,
    pub contents: &'a dyn ContentSource,
    /// Counts patch tokens for the code stage.
    pub patch_tokenizer: Tokenizer,
}

impl<'a> SearchContext<'a> {
    pub fn new(
        index: &'a InvertedIndex,
        catalog: &'a CommitCatalog,
        live: LiveView<'a>,
        contents: &'a dyn ContentSource,
    ) -> Self {
        SearchContext {
            index,
            catalog,
            live,
            contents,
            patch_tokenizer: Tokenizer::default(),
        }
    }

    /// Every earlier commit that touched any former name of `live_path`,
    /// newest first, as zero-score contributions.
    pub fn history_of(&self, live_path: &str, before: i64) -> Vec<Contribution> {
        let mut hist: Vec<(i64, Contribution)> = Vec::new();
        for c in self.catalog.commits() {
            if c.commit_date >= before {
                continue;
            }
            if let Some(p) = c.files.iter().find(|p| self.live.resolve(p) == Some(live_path)) {
                hist.push((
                    c.commit_date,
                    Contribution {
                        commit_id: c.commit_id.clone(),
                        score: 0.0,
                        rank: 0,
                        path: p.clone(),
                    },
                ));
            }
        }
        hist.sort_by(|a, b| b.0.cmp(&a.0));
        hist.into_iter()
            .enumerate()
            .map(|(rank, (_, c))| Contribution { rank, ..c })
            .collect()
    }
}

/// Candidates for the rerank stages from an externally supplied ranking.
/// Each file carries its earlier history as contributing commits.
pub fn candidates_from_ranking(
    query: &Query,
    ranking: &[(String, f64)],
    ctx: &SearchContext<'_>,
) -> Vec<ScoredFile> {
    ranking
        .iter()
        .map(|(path, score)| ScoredFile {
            path: path.clone(),
            score: *score,
            contributing: ctx.history_of(path, query.timestamp),
        })
        .collect()
}

/// BM25 over commits (masked at the query time), file aggregation and
/// current-state filtering.
pub fn search_files(
    query: &Query,
    ctx: &SearchContext<'_>,
    config: &PipelineConfig,
) -> Result<Vec<ScoredFile>, PipelineError> {
    let commits = ctx
        .index
        .search(&query.text, config.bm25_k, Some(query.timestamp));
    let files = aggregate_files(&commits, ctx.catalog, config.aggregation)?;
    let mut live = filter_to_current(files, &ctx.live, config.aggregation);
    live.truncate(config.bm25_k);
    Ok(live)
}

/// Runs the enabled rerank stages over an initial ranking. Each stage only
/// permutes its own prefix.
pub fn rerank_stages(
    query: &Query,
    initial: Vec<ScoredFile>,
    ctx: &SearchContext<'_>,
    config: &PipelineConfig,
    commit_scorer: Option<&dyn Scorer>,
    code_scorer: Option<&dyn Scorer>,
) -> Result<Vec<ScoredFile>, PipelineError> {
    let mut ranked = initial;
    if config.stages.commit {
        match commit_scorer {
            Some(scorer) => {
                ranked = rerank_by_commits(&query.text, ranked, config.commit_rerank_depth, scorer, ctx.catalog)?;
            }
            None if config.skip_unavailable => log::warn!("commit stage skipped: no scorer"),
            None => return Err(PipelineError::ScorerUnavailable("commit")),
        }
    }
    if config.stages.code {
        match code_scorer {
            Some(scorer) => {
                ranked = rerank_by_code(
                    &query.text,
                    ranked,
                    config.code_rerank_depth,
                    scorer,
                    ctx.contents,
                    &ctx.patch_tokenizer,
                    config.patch_token_budget,
                )?;
            }
            None if config.skip_unavailable => log::warn!("code stage skipped: no scorer"),
            None => return Err(PipelineError::ScorerUnavailable("code")),
        }
    }
    Ok(ranked)
}

/// The full cascade: [`search_files`] then the enabled rerank stages.
pub fn run_pipeline(
    query: &Query,
    ctx: &SearchContext<'_>,
    config: &PipelineConfig,
    commit_scorer: Option<&dyn Scorer>,
    code_scorer: Option<&dyn Scorer>,
) -> Result<Vec<ScoredFile>, PipelineError> {
    config.validate()?;
    let initial = search_files(query, ctx, config)?;
    rerank_stages(query, initial, ctx, config, commit_scorer, code_scorer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(id: &str, score: f64) -> ScoredCommit {
        ScoredCommit {
            commit_id: id.into(),
            score,
            commit_date: 1,
        }
    }

    fn worked_example() -> (Vec<ScoredCommit>, HashMap<String, Vec<String>>) {
        let files = |fs: &[&str]| fs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let map = HashMap::from([
            ("c1".to_string(), files(&["f1", "f2", "f3"])),
            ("c2".to_string(), files(&["f2", "f5", "f1", "f6"])),
            ("c3".to_string(), files(&["f4", "f3", "f2", "f7", "f8"])),
        ]);
        (vec![sc("c1", 5.0), sc("c2", 3.0), sc("c3", 1.0)], map)
    }

    fn pairs(files: &[ScoredFile]) -> Vec<(&str, f64)> {
        files.iter().map(|f| (f.path.as_str(), f.score)).collect()
    }

    #[test]
    fn worked_example_sump_and_maxp() {
        let (commits, map) = worked_example();
        let sump = aggregate_files(&commits, &map, AggregationStrategy::Sump).unwrap();
        assert_eq!(
            pairs(&sump),
            [("f2", 9.0), ("f1", 8.0), ("f3", 6.0), ("f5", 3.0), ("f6", 3.0), ("f4", 1.0), ("f7", 1.0), ("f8", 1.0)]
        );
        let maxp = aggregate_files(&commits, &map, AggregationStrategy::Maxp).unwrap();
        assert_eq!(
            pairs(&maxp),
            [("f1", 5.0), ("f2", 5.0), ("f3", 5.0), ("f5", 3.0), ("f6", 3.0), ("f4", 1.0), ("f7", 1.0), ("f8", 1.0)]
        );
        assert_eq!(maxp[1].contributing.len(), 3);
    }

    #[test]
    fn single_commit_same_under_all_strategies() {
        let map = HashMap::from([("c".to_string(), vec!["b".to_string(), "a".to_string()])]);
        for s in [AggregationStrategy::Sump, AggregationStrategy::Maxp, AggregationStrategy::Avgp] {
            let out = aggregate_files(&[sc("c", 2.5)], &map, s).unwrap();
            assert_eq!(pairs(&out), [("a", 2.5), ("b", 2.5)]);
        }
    }

    #[test]
    fn missing_commit_files() {
        let map: HashMap<String, Vec<String>> = HashMap::new();
        assert!(matches!(
            aggregate_files(&[sc("zz", 1.0)], &map, AggregationStrategy::Maxp),
            Err(PipelineError::MissingCommitFiles(id)) if id == "zz"
        ));
    }

    #[test]
    fn stage_strings() {
        assert_eq!("bm25".parse::<StageSet>().unwrap(), StageSet::BM25);
        assert_eq!("bm25+commit+code".parse::<StageSet>().unwrap(), StageSet::FULL);
        assert_eq!("bm25+code".parse::<StageSet>().unwrap().to_string(), "bm25+code");
        assert!("bm25+semantic".parse::<StageSet>().is_err());
        assert!("code".parse::<StageSet>().is_err());
        assert!("bm25+code+code".parse::<StageSet>().is_err());
    }

    #[test]
    fn config_invariants() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            code_rerank_depth: 2000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
