use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use commitsearch::pipeline::{AggregationStrategy, PipelineConfig, StageSet};

use crate::{DataFormat, Usage};

/// Run settings read from a TOML file. Command-line flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub store: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub fids: Option<PathBuf>,
    pub repo: Option<PathBuf>,
    pub snapshot: Option<String>,
    pub queries: Option<PathBuf>,
    pub prerank: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub commit_scorer: Option<String>,
    pub code_scorer: Option<String>,
    pub seed: Option<u64>,
    pub tag: Option<String>,
    pub pipeline: PipelineSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub bm25_k: Option<usize>,
    pub commit_rerank_depth: Option<usize>,
    pub code_rerank_depth: Option<usize>,
    pub aggregation: Option<AggregationStrategy>,
    /// Same syntax as `--stages`.
    pub stages: Option<String>,
    pub patch_token_budget: Option<usize>,
    pub skip_unavailable: Option<bool>,
}

impl RunConfig {
    /// Relative paths in the file are taken relative to the file itself.
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        if !path.is_file() {
            return Err(Usage(format!("config file {} does not exist", path.display())).into());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| DataFormat(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.store,
            &mut cfg.index,
            &mut cfg.fids,
            &mut cfg.repo,
            &mut cfg.queries,
            &mut cfg.prerank,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        let s = &self.pipeline;
        let mut pc = PipelineConfig::default();
        if let Some(v) = s.bm25_k {
            pc.bm25_k = v;
        }
        if let Some(v) = s.commit_rerank_depth {
            pc.commit_rerank_depth = v;
        }
        if let Some(v) = s.code_rerank_depth {
            pc.code_rerank_depth = v;
        }
        if let Some(v) = s.aggregation {
            pc.aggregation = v;
        }
        if let Some(v) = &s.stages {
            pc.stages = v.parse::<StageSet>().map_err(Usage)?;
        }
        if let Some(v) = s.patch_token_budget {
            pc.patch_token_budget = v;
        }
        if let Some(v) = s.skip_unavailable {
            pc.skip_unavailable = v;
        }
        Ok(pc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "store = \"store.jsonl\"\nqueries = \"/abs/q.jsonl\"\n[pipeline]\nstages = \"bm25+code\"\naggregation = \"sump\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.store.as_deref(), Some(dir.path().join("store.jsonl").as_path()));
        assert_eq!(cfg.queries.as_deref(), Some(Path::new("/abs/q.jsonl")));
        let pc = cfg.pipeline_config().unwrap();
        assert!(pc.stages.code && !pc.stages.commit);
        assert_eq!(pc.aggregation, AggregationStrategy::Sump);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "stroe = \"x\"\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.is::<DataFormat>());
    }
}
