//! Command-line driver: ingest a repository, build the index and file-id
//! cache, run searches, build training triplets and evaluate runs.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use commitsearch::bm25_index::{Bm25Params, IndexError, InvertedIndex, Tokenizer, TokenizerConfig, TokenizerMode};
use commitsearch::catalog::{live_files, CommitCatalog};
use commitsearch::commit_store::{
    ingest_repository, read_store, snapshot, write_store, CommitFileRecord, ContentSource, GitContents,
    IngestOptions, RepoSnapshot, StoreError,
};
use commitsearch::eval::{
    evaluate_run, make_oracle_prerank, read_qrels, read_run, seed_for, write_qrels, write_run_query, Cutoffs,
    EvalError, MapConvention, OracleError, Qrels,
};
use commitsearch::fid_map::{build_fid_map, FidCache, FidError};
use commitsearch::pipeline::{
    candidates_from_ranking, rerank_stages, search_files, AggregationStrategy, PipelineConfig, PipelineError, Query,
    ScoredFile, SearchContext, StageSet,
};
use commitsearch::rerank::{lexical_overlap_scorer, serve_protocol, ConstantScorer, Endpoint, ExternalScorer, Scorer, ScorerError};
use commitsearch::training::{
    make_code_triplets, make_commit_triplets, write_triplets, LabelMode, TripletError, TripletLimits, TruthSet,
};

use config::RunConfig;

/// Bad invocation or missing input (exit 2).
#[derive(Debug)]
pub struct Usage(pub String);

/// Input that exists but cannot be parsed (exit 3).
#[derive(Debug)]
pub struct DataFormat(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for DataFormat {}

#[derive(Parser)]
#[command(name = "commitsearch", version, about = "File search over a repository's commit history")]
struct Cli {
    /// Worker threads for per-query work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Read a git repository's history into a record store.
    Ingest(IngestArgs),
    /// Build the BM25 index over commit messages.
    Index(IndexArgs),
    /// Build the file-id cache that links renamed paths.
    Fid(FidArgs),
    /// Rank current files for each query and write a run file.
    Search(SearchArgs),
    /// Relevance judgments from each query's source commit.
    Qrels(QrelsArgs),
    /// Score a run file against qrels.
    Eval(EvalArgs),
    /// Pre-rankings with the relevant files planted at random positions.
    Oracle(OracleArgs),
    /// Training triplets for the commit or code reranker.
    Triplets(TripletArgs),
    /// Serve the lexical-overlap scorer over the scoring protocol on stdin/stdout.
    ServeLexical(ServeArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Git working tree or bare repository.
    #[arg(long)]
    repo: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Leave merge commits out.
    #[arg(long)]
    no_merges: bool,
    /// Keep only the most recent N commits.
    #[arg(long)]
    max_commits: Option<usize>,
    #[arg(long)]
    owner: Option<String>,
    #[arg(long)]
    repo_name: Option<String>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    /// Subword vocabulary, one token per line. Without it the code-aware
    /// tokenizer is used.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Keep case when tokenizing.
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args)]
struct FidArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Artifact locations shared by the commands that run queries.
#[derive(Args, Default)]
struct ArtifactArgs {
    /// TOML run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Built index. Built in memory from the store when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    /// File-id cache. Built in memory from the store when absent.
    #[arg(long)]
    fids: Option<PathBuf>,
    /// Repository for the snapshot and file contents. Without it the
    /// snapshot is replayed from the store.
    #[arg(long)]
    repo: Option<PathBuf>,
    /// Commit whose tree is the current state (default HEAD).
    #[arg(long)]
    snapshot: Option<String>,
    /// Queries, one JSON object per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Depth of the BM25 commit retrieval.
    #[arg(long)]
    bm25_k: Option<usize>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Ignore query timestamps and search the whole history.
    #[arg(long)]
    no_mask: bool,
    #[arg(long, value_enum)]
    aggregation: Option<Aggregation>,
    /// Maximum tokens per code patch.
    #[arg(long)]
    patch_budget: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    artifacts: ArtifactArgs,
    /// `bm25`, `bm25+commit`, `bm25+code` or `bm25+commit+code`.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    commit_depth: Option<usize>,
    #[arg(long)]
    code_depth: Option<usize>,
    /// Rerank this run file instead of the BM25 results.
    #[arg(long)]
    prerank: Option<PathBuf>,
    /// `lexical`, `constant:X`, `tcp:HOST:PORT` or `cmd:PROGRAM ARGS`.
    #[arg(long)]
    commit_scorer: Option<String>,
    #[arg(long)]
    code_scorer: Option<String>,
    /// Run a stage without a reachable scorer as a no-op.
    #[arg(long)]
    skip_unavailable: bool,
    /// Seconds to wait for an external scorer.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Args)]
struct QrelsArgs {
    #[command(flatten)]
    artifacts: ArtifactArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// `retrieved` divides AP by the relevant files retrieved, `standard` by all relevant files.
    #[arg(long, default_value = "retrieved")]
    map_convention: String,
    /// Depth for MAP and MRR.
    #[arg(long, default_value_t = 1000)]
    depth: usize,
    /// Print one row per query.
    #[arg(long)]
    per_query: bool,
    /// Also write per-query metrics as JSON lines.
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    qrels: PathBuf,
    /// Run file whose per-query rankings supply the distractors.
    #[arg(long, conflicts_with = "distractors")]
    distractor_run: Option<PathBuf>,
    /// Distractor paths, one per line, shared by all queries.
    #[arg(long)]
    distractors: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TripletArgs {
    #[command(flatten)]
    artifacts: ArtifactArgs,
    #[arg(long, value_enum)]
    kind: TripletKind,
    /// `file_intersection` or `diff_match`.
    #[arg(long, default_value = "file_intersection")]
    label_mode: String,
    #[arg(long, default_value_t = 10)]
    positives: usize,
    #[arg(long, default_value_t = 10)]
    negatives: usize,
    /// Extra negatives drawn from below the hard negatives.
    #[arg(long, default_value_t = 0)]
    easy_negatives: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 64)]
    max_batch: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Sump,
    Maxp,
    Avgp,
}

impl From<Aggregation> for AggregationStrategy {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::Sump => AggregationStrategy::Sump,
            Aggregation::Maxp => AggregationStrategy::Maxp,
            Aggregation::Avgp => AggregationStrategy::Avgp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TripletKind {
    Commit,
    Code,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        log::warn!("thread pool: {e}");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Index(a) => cmd_index(a),
        Cmd::Fid(a) => cmd_fid(a),
        Cmd::Search(a) => cmd_search(a),
        Cmd::Qrels(a) => cmd_qrels(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Triplets(a) => cmd_triplets(a),
        Cmd::ServeLexical(a) => {
            let stdin = io::stdin();
            let served = serve_protocol(&lexical_overlap_scorer(), a.max_batch, stdin.lock(), io::stdout().lock())?;
            log::info!("served {served} requests");
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<DataFormat>() || cause.is::<serde_json::Error>() {
            return 3;
        }
        if cause.is::<ScorerError>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            if e.kind() == io::ErrorKind::NotFound {
                return 2;
            }
        }
        let code = if let Some(e) = cause.downcast_ref::<StoreError>() {
            match e {
                StoreError::NotAGitRepository(_) | StoreError::UnknownCommit(_) => Some(2),
                StoreError::MalformedRecord { .. } | StoreError::CorruptHistory(_) => Some(3),
                StoreError::Io(io) if io.kind() == io::ErrorKind::NotFound => Some(2),
                _ => None,
            }
        } else if let Some(e) = cause.downcast_ref::<IndexError>() {
            match e {
                IndexError::Malformed { .. } => Some(3),
                IndexError::Tokenizer(_) => Some(2),
                IndexError::Io(_) => None,
            }
        } else if let Some(e) = cause.downcast_ref::<FidError>() {
            match e {
                FidError::Io(_) => None,
                _ => Some(3),
            }
        } else if let Some(e) = cause.downcast_ref::<EvalError>() {
            match e {
                EvalError::Io(_) => None,
                _ => Some(3),
            }
        } else if let Some(e) = cause.downcast_ref::<OracleError>() {
            match e {
                OracleError::DepthTooSmall { .. } => Some(2),
                OracleError::NotEnoughDistractors { .. } => Some(3),
            }
        } else if let Some(e) = cause.downcast_ref::<TripletError>() {
            match e {
                TripletError::Malformed { .. } => Some(3),
                TripletError::Pipeline(p) => Some(pipeline_code(p)),
                TripletError::Io(_) => None,
            }
        } else {
            cause.downcast_ref::<PipelineError>().map(pipeline_code)
        };
        if let Some(code) = code {
            return code;
        }
    }
    1
}

fn pipeline_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::InvalidConfig(_) => 2,
        PipelineError::MissingCommitFiles(_) => 3,
        PipelineError::ScorerUnavailable(_) | PipelineError::Scorer(_) => 4,
    }
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Usage(format!("{what} {} does not exist", path.display())).into())
    }
}

fn required(value: Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    value.ok_or_else(|| Usage(format!("--{flag} is required (flag or config file)")).into())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_store(path: &Path) -> anyhow::Result<Vec<CommitFileRecord>> {
    require_file(path, "store")?;
    read_store(path).with_context(|| format!("reading store {}", path.display()))
}

fn cmd_ingest(a: IngestArgs) -> anyhow::Result<()> {
    if !a.repo.is_dir() {
        bail!(Usage(format!("repository {} does not exist", a.repo.display())));
    }
    let opts = IngestOptions {
        include_merges: !a.no_merges,
        max_commits: a.max_commits,
        owner: a.owner,
        repo_name: a.repo_name,
    };
    let records = ingest_repository(&a.repo, &opts)?;
    let commits: BTreeSet<&str> = records.iter().map(|r| r.commit_id.as_str()).collect();
    let n = write_store(&records, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("ingested {} commits, {n} records -> {}", commits.len(), a.out.display());
    Ok(())
}

fn cmd_index(a: IndexArgs) -> anyhow::Result<()> {
    let records = load_store(&a.store)?;
    if let Some(v) = &a.vocab {
        require_file(v, "vocabulary")?;
    }
    let tok_cfg = TokenizerConfig {
        mode: if a.vocab.is_some() {
            TokenizerMode::ExternalVocab
        } else {
            TokenizerMode::CodeAwareDefault
        },
        lowercase: !a.no_lowercase,
        vocab_path: a.vocab,
    };
    let tokenizer = Tokenizer::new(&tok_cfg).map_err(|e| Usage(e.to_string()))?;
    let index = InvertedIndex::build(&records, tokenizer, Bm25Params { k1: a.k1, b: a.b });
    let mut w = create(&a.out)?;
    index.write_to(&mut w)?;
    w.flush()?;
    eprintln!(
        "indexed {} commits, {} terms, avg length {:.1} -> {}",
        index.num_docs(),
        index.num_terms(),
        index.avg_doc_len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_fid(a: FidArgs) -> anyhow::Result<()> {
    let records = load_store(&a.store)?;
    let fids = build_fid_map(&records)?;
    let mut w = create(&a.out)?;
    fids.write_to(&mut w)?;
    w.flush()?;
    let renamed: usize = fids.path_histogram().iter().filter(|(k, _)| **k > 1).map(|(_, v)| v).sum();
    eprintln!("{} file ids, {renamed} with renames -> {}", fids.len(), a.out.display());
    Ok(())
}

fn read_queries(path: &Path) -> anyhow::Result<Vec<Query>> {
    require_file(path, "queries")?;
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line)
            .map_err(|e| DataFormat(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if !seen.insert(q.query_id.clone()) {
            bail!(DataFormat(format!("{} line {}: duplicate query id {}", path.display(), i + 1, q.query_id)));
        }
        out.push(q);
    }
    Ok(out)
}

/// Everything a query runs against, loaded once per command.
struct Loaded {
    catalog: CommitCatalog,
    index: InvertedIndex,
    fids: FidCache,
    snapshot: RepoSnapshot,
    contents: Box<dyn ContentSource>,
    queries: Vec<Query>,
    pipeline: PipelineConfig,
    cfg: RunConfig,
}

impl Loaded {
    fn context(&self) -> SearchContext<'_> {
        SearchContext::new(
            &self.index,
            &self.catalog,
            self.fids.live_view(&self.snapshot),
            self.contents.as_ref(),
        )
    }
}

fn load(a: ArtifactArgs, need_queries: bool) -> anyhow::Result<Loaded> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut pipeline = cfg.pipeline_config()?;
    macro_rules! take {
        ($($f:ident),*) => {$( if a.$f.is_some() { cfg.$f = a.$f; } )*};
    }
    take!(store, index, fids, repo, snapshot, queries, out);
    if let Some(k) = a.bm25_k {
        pipeline.bm25_k = k;
    }
    if let Some(agg) = a.aggregation {
        pipeline.aggregation = agg.into();
    }
    if let Some(p) = a.patch_budget {
        pipeline.patch_token_budget = p;
    }

    let store = required(cfg.store.clone(), "store")?;
    let records = load_store(&store)?;
    let catalog = CommitCatalog::from_records(&records);
    let mut index = match &cfg.index {
        Some(p) => {
            require_file(p, "index")?;
            InvertedIndex::read_from(BufReader::new(File::open(p)?))
                .with_context(|| format!("reading index {}", p.display()))?
        }
        None => InvertedIndex::build(&records, Tokenizer::default(), Bm25Params::default()),
    };
    if a.k1.is_some() || a.b.is_some() {
        let mut params = index.params();
        params.k1 = a.k1.unwrap_or(params.k1);
        params.b = a.b.unwrap_or(params.b);
        index.set_params(params);
    }
    let fids = match &cfg.fids {
        Some(p) => {
            require_file(p, "fid cache")?;
            FidCache::read_from(BufReader::new(File::open(p)?))
                .with_context(|| format!("reading fid cache {}", p.display()))?
        }
        None => build_fid_map(&records)?,
    };
    let (snapshot, contents): (RepoSnapshot, Box<dyn ContentSource>) = match &cfg.repo {
        Some(repo) => {
            let snap = snapshot(repo, cfg.snapshot.as_deref())?;
            let contents = GitContents::open(repo, &snap)?;
            (snap, Box::new(contents))
        }
        None => {
            if cfg.snapshot.is_some() {
                bail!(Usage("--snapshot needs --repo".into()));
            }
            let live = live_files(&records);
            let snap = RepoSnapshot {
                head_commit_id: records.last().map(|r| r.commit_id.clone()).unwrap_or_default(),
                live_paths: live.keys().cloned().collect(),
            };
            let contents: std::collections::HashMap<String, String> =
                live.into_iter().filter_map(|(p, c)| Some((p, c?))).collect();
            (snap, Box::new(contents))
        }
    };
    let mut queries = match &cfg.queries {
        Some(p) => read_queries(p)?,
        None if need_queries => bail!(Usage("--queries is required (flag or config file)".into())),
        None => Vec::new(),
    };
    if a.no_mask {
        for q in &mut queries {
            q.timestamp = i64::MAX;
        }
    }
    log::info!(
        "{} records, {} commits indexed, {} live files, {} queries",
        records.len(),
        index.num_docs(),
        snapshot.live_paths.len(),
        queries.len()
    );
    Ok(Loaded {
        catalog,
        index,
        fids,
        snapshot,
        contents,
        queries,
        pipeline,
        cfg,
    })
}

fn make_scorer(spec: &str, timeout: Duration) -> Result<Box<dyn Scorer>, ScorerError> {
    if spec == "lexical" {
        return Ok(Box::new(lexical_overlap_scorer()));
    }
    if let Some(v) = spec.strip_prefix("constant:") {
        return match v.parse::<f64>() {
            Ok(s) if (0.0..=1.0).contains(&s) => Ok(Box::new(ConstantScorer(s))),
            _ => Err(ScorerError::Unavailable(format!("constant score `{v}` is not in [0, 1]"))),
        };
    }
    let endpoint: Endpoint = spec.parse().map_err(ScorerError::Unavailable)?;
    Ok(Box::new(ExternalScorer::connect(&endpoint, timeout)?))
}

fn open_scorer(
    spec: Option<&str>,
    enabled: bool,
    stage: &str,
    config: &PipelineConfig,
    timeout: Duration,
) -> anyhow::Result<Option<Box<dyn Scorer>>> {
    let Some(spec) = spec.filter(|_| enabled) else {
        return Ok(None);
    };
    match make_scorer(spec, timeout) {
        Ok(s) => {
            log::info!("{stage} scorer: {}", s.descriptor());
            Ok(Some(s))
        }
        Err(e) if config.skip_unavailable => {
            log::warn!("{stage} scorer {spec}: {e}; stage skipped");
            Ok(None)
        }
        Err(e) => Err(anyhow::Error::new(e).context(format!("{stage} scorer {spec}"))),
    }
}

fn cmd_search(a: SearchArgs) -> anyhow::Result<()> {
    let mut l = load(a.artifacts, true)?;
    if let Some(s) = &a.stages {
        l.pipeline.stages = s.parse::<StageSet>().map_err(Usage)?;
    }
    if let Some(d) = a.commit_depth {
        l.pipeline.commit_rerank_depth = d;
    }
    if let Some(d) = a.code_depth {
        l.pipeline.code_rerank_depth = d;
    }
    if a.skip_unavailable {
        l.pipeline.skip_unavailable = true;
    }
    l.pipeline.validate()?;
    let out = required(l.cfg.out.clone(), "out")?;
    let tag = a.tag.or(l.cfg.tag.clone()).unwrap_or_else(|| l.pipeline.stages.to_string());
    let timeout = Duration::from_secs(a.timeout);
    let commit_spec = a.commit_scorer.or(l.cfg.commit_scorer.clone());
    let code_spec = a.code_scorer.or(l.cfg.code_scorer.clone());
    let commit_scorer = open_scorer(commit_spec.as_deref(), l.pipeline.stages.commit, "commit", &l.pipeline, timeout)?;
    let code_scorer = open_scorer(code_spec.as_deref(), l.pipeline.stages.code, "code", &l.pipeline, timeout)?;
    let prerank = match a.prerank.or(l.cfg.prerank.clone()) {
        Some(p) => {
            require_file(&p, "prerank run")?;
            Some(read_run(BufReader::new(File::open(&p)?)).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };

    let ctx = l.context();
    let results: Vec<Vec<ScoredFile>> = l
        .queries
        .par_iter()
        .map(|q| {
            let initial = match &prerank {
                Some(run) => {
                    let ranking = run.get(&q.query_id).map(Vec::as_slice).unwrap_or_default();
                    candidates_from_ranking(q, ranking, &ctx)
                }
                None => search_files(q, &ctx, &l.pipeline)?,
            };
            rerank_stages(q, initial, &ctx, &l.pipeline, commit_scorer.as_deref(), code_scorer.as_deref())
        })
        .collect::<Result<_, _>>()?;

    let mut w = create(&out)?;
    let mut lines = 0;
    for (q, files) in l.queries.iter().zip(&results) {
        let ranking: Vec<(&str, f64)> = files.iter().map(|f| (f.path.as_str(), f.score)).collect();
        write_run_query(&mut w, &q.query_id, &ranking, &tag)?;
        lines += ranking.len();
    }
    w.flush()?;
    eprintln!("{} queries, {lines} results ({tag}) -> {}", l.queries.len(), out.display());
    Ok(())
}

fn cmd_qrels(a: QrelsArgs) -> anyhow::Result<()> {
    let l = load(a.artifacts, true)?;
    let out = required(l.cfg.out.clone(), "out")?;
    let live = l.fids.live_view(&l.snapshot);
    let mut qrels = Qrels::new();
    let mut skipped = 0;
    for q in &l.queries {
        let Some(info) = q.source_commit_id.as_deref().and_then(|c| l.catalog.commit(c)) else {
            skipped += 1;
            continue;
        };
        let files: BTreeSet<String> = info
            .files
            .iter()
            .filter_map(|p| live.resolve(p))
            .map(str::to_string)
            .collect();
        if files.is_empty() {
            skipped += 1;
        } else {
            qrels.insert(q.query_id.clone(), files);
        }
    }
    let mut w = create(&out)?;
    write_qrels(&mut w, &qrels)?;
    w.flush()?;
    eprintln!("{} queries judged, {skipped} without live files -> {}", qrels.len(), out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    require_file(&a.run, "run")?;
    require_file(&a.qrels, "qrels")?;
    let run = read_run(BufReader::new(File::open(&a.run)?)).with_context(|| format!("reading {}", a.run.display()))?;
    let qrels =
        read_qrels(BufReader::new(File::open(&a.qrels)?)).with_context(|| format!("reading {}", a.qrels.display()))?;
    let cutoffs = Cutoffs {
        depth: a.depth,
        map_convention: a.map_convention.parse::<MapConvention>().map_err(Usage)?,
        ..Cutoffs::default()
    };
    let report = evaluate_run(&run, &qrels, &cutoffs);
    let label = a.run.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    print!("{}", report.to_table(&label, a.per_query));
    if let Some(p) = &a.jsonl {
        let mut w = create(p)?;
        report.write_jsonl(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn read_path_list(path: &Path) -> anyhow::Result<Vec<String>> {
    require_file(path, "distractor list")?;
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line.trim_end_matches('\r').to_string());
        }
    }
    Ok(out)
}

fn cmd_oracle(a: OracleArgs) -> anyhow::Result<()> {
    require_file(&a.qrels, "qrels")?;
    let qrels =
        read_qrels(BufReader::new(File::open(&a.qrels)?)).with_context(|| format!("reading {}", a.qrels.display()))?;
    let shared = match &a.distractors {
        Some(p) => Some(read_path_list(p)?),
        None => None,
    };
    let per_query = match &a.distractor_run {
        Some(p) => {
            require_file(p, "distractor run")?;
            Some(read_run(BufReader::new(File::open(p)?)).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    if shared.is_none() && per_query.is_none() {
        bail!(Usage("one of --distractors or --distractor-run is required".into()));
    }

    let mut w = create(&a.out)?;
    for (qid, relevant) in &qrels {
        let relevant: Vec<&str> = relevant.iter().map(String::as_str).collect();
        let pool: Vec<&str> = match (&shared, &per_query) {
            (Some(list), _) => list.iter().map(String::as_str).collect(),
            (None, Some(run)) => run
                .get(qid)
                .map(|r| r.iter().map(|(p, _)| p.as_str()).collect())
                .unwrap_or_default(),
            (None, None) => unreachable!(),
        };
        let ranking = make_oracle_prerank(&relevant, &pool, a.depth, seed_for(a.seed, qid))
            .with_context(|| format!("query {qid}"))?;
        let scored: Vec<(&str, f64)> = ranking
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), (a.depth - i) as f64))
            .collect();
        write_run_query(&mut w, qid, &scored, "oracle")?;
    }
    w.flush()?;
    eprintln!("{} oracle rankings at depth {} -> {}", qrels.len(), a.depth, a.out.display());
    Ok(())
}

fn cmd_triplets(a: TripletArgs) -> anyhow::Result<()> {
    let l = load(a.artifacts, true)?;
    l.pipeline.validate()?;
    let out = required(l.cfg.out.clone(), "out")?;
    let limits = TripletLimits {
        positives: a.positives,
        negatives: a.negatives,
        label_mode: a.label_mode.parse::<LabelMode>().map_err(Usage)?,
        easy_negatives: a.easy_negatives,
        seed: a.seed.or(l.cfg.seed).unwrap_or(0),
    };
    let truth = TruthSet::from_catalog(&l.queries, &l.catalog);
    let ctx = l.context();
    let per_query: Vec<_> = l
        .queries
        .par_iter()
        .map(|q| {
            let one = std::slice::from_ref(q);
            match a.kind {
                TripletKind::Commit => Ok(make_commit_triplets(one, &ctx, &truth, &l.pipeline, &limits)),
                TripletKind::Code => make_code_triplets(one, &ctx, &truth, &l.pipeline, &limits),
            }
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut w = create(&out)?;
    let n = write_triplets(per_query.iter().flatten(), &mut w)?;
    let positives = per_query.iter().flatten().filter(|t| t.label == 1).count();
    eprintln!(
        "{n} triplets ({positives} positive) for {} of {} queries -> {}",
        truth.len(),
        l.queries.len(),
        out.display()
    );
    Ok(())
}
