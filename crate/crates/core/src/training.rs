//! (query, passage, label) triplets for training the two rerankers.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bm25_index::ScoredCommit;
use crate::catalog::CommitCatalog;
use crate::eval::seed_for;
use crate::pipeline::{search_files, PipelineConfig, PipelineError, Query, SearchContext};
use crate::rerank::{split_linewise, CodePatch};

#[derive(Debug, thiserror::Error)]
pub enum TripletError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageKind {
    CommitMessage,
    CodePatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub commit_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// 1-based inclusive line span of a code patch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub query_id: String,
    pub query_text: String,
    pub passage_text: String,
    pub label: u8,
    pub kind: PassageKind,
    pub provenance: Provenance,
}

/// Files edited by each training query's source commit, with their diffs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruthSet {
    entries: HashMap<String, Truth>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Truth {
    pub files: Vec<String>,
    pub diffs: HashMap<String, String>,
}

impl TruthSet {
    /// Truth for every query whose `source_commit_id` is in the catalog.
    pub fn from_catalog(queries: &[Query], catalog: &CommitCatalog) -> Self {
        let mut entries = HashMap::new();
        for q in queries {
            let Some(info) = q.source_commit_id.as_deref().and_then(|c| catalog.commit(c)) else {
                log::warn!("query {}: no source commit in the store", q.query_id);
                continue;
            };
            if info.files.is_empty() {
                continue;
            }
            let diffs = info
                .files
                .iter()
                .filter_map(|f| Some((f.clone(), catalog.diff(&info.commit_id, f)?.to_string())))
                .collect();
            entries.insert(
                q.query_id.clone(),
                Truth {
                    files: info.files.clone(),
                    diffs,
                },
            );
        }
        TruthSet { entries }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, truth: Truth) {
        self.entries.insert(query_id.into(), truth);
    }

    pub fn get(&self, query_id: &str) -> Option<&Truth> {
        self.entries.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    FileIntersection,
    DiffMatch,
}

impl FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "file_intersection" | "files" => Ok(LabelMode::FileIntersection),
            "diff_match" | "diff" => Ok(LabelMode::DiffMatch),
            other => Err(format!("unknown label mode `{other}`")),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::FileIntersection => "file_intersection",
            LabelMode::DiffMatch => "diff_match",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletLimits {
    pub positives: usize,
    pub negatives: usize,
    pub label_mode: LabelMode,
    /// Extra negatives sampled from the ranks below the first negatives.
    pub easy_negatives: usize,
    pub seed: u64,
}

impl Default for TripletLimits {
    fn default() -> Self {
        TripletLimits {
            positives: 10,
            negatives: 10,
            label_mode: LabelMode::FileIntersection,
            easy_negatives: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangedLine {
    pub text: String,
    pub added: bool,
    /// Position on the new side; removed lines take the line they precede.
    pub new_line: usize,
}

fn hunk_header(line: &str) -> Option<(usize, usize, usize)> {
    let rest = line.strip_prefix("@@ -")?;
    let (ranges, _) = rest.split_once(" @@")?;
    let (old, new) = ranges.split_once(" +")?;
    let count = |r: &str| -> Option<(usize, usize)> {
        match r.split_once(',') {
            Some((s, n)) => Some((s.parse().ok()?, n.parse().ok()?)),
            None => Some((r.parse().ok()?, 1)),
        }
    };
    let (_, old_len) = count(old)?;
    let (new_start, new_len) = count(new)?;
    Some((old_len, new_start, new_len))
}

/// Added and removed lines of a unified diff, read hunk by hunk so that file
/// headers never count.
pub fn changed_lines(diff: &str) -> Vec<ChangedLine> {
    let mut out = Vec::new();
    let mut old_left = 0usize;
    let mut new_left = 0usize;
    let mut new_pos = 0usize;
    let mut saw_hunk = false;
    for line in diff.lines() {
        if old_left == 0 && new_left == 0 {
            if let Some((o, start, n)) = hunk_header(line) {
                saw_hunk = true;
                old_left = o;
                new_left = n;
                new_pos = start.max(1);
            }
            continue;
        }
        if let Some(text) = line.strip_prefix('+') {
            out.push(ChangedLine {
                text: text.to_string(),
                added: true,
                new_line: new_pos,
            });
            new_pos += 1;
            new_left = new_left.saturating_sub(1);
        } else if let Some(text) = line.strip_prefix('-') {
            out.push(ChangedLine {
                text: text.to_string(),
                added: false,
                new_line: new_pos.max(1),
            });
            old_left = old_left.saturating_sub(1);
        } else if line.starts_with('\\') {
            // "\ No newline at end of file"
        } else {
            new_pos += 1;
            old_left = old_left.saturating_sub(1);
            new_left = new_left.saturating_sub(1);
        }
    }
    if !saw_hunk && diff.lines().any(|l| l.starts_with('+') || l.starts_with('-')) {
        log::debug!("diff without hunk headers treated as empty");
    }
    out
}

/// Empty or made only of brackets, semicolons and commas.
pub fn is_trivial_line(line: &str) -> bool {
    line.chars()
        .all(|c| c.is_whitespace() || matches!(c, '{' | '}' | '(' | ')' | '[' | ']' | ';' | ','))
}

fn normalized_changes(diff: &str) -> BTreeSet<String> {
    changed_lines(diff)
        .into_iter()
        .map(|c| c.text.trim().to_string())
        .filter(|t| !is_trivial_line(t))
        .collect()
}

/// Number of distinct non-trivial changed lines the two diffs share.
pub fn diff_line_intersection(d1: &str, d2: &str) -> usize {
    normalized_changes(d1).intersection(&normalized_changes(d2)).count()
}

fn matches_truth(truth: &Truth, diff: &str) -> bool {
    truth
        .files
        .iter()
        .filter_map(|f| truth.diffs.get(f))
        .any(|d| diff_line_intersection(d, diff) > 0)
}

fn commit_is_positive(truth: &Truth, commit_id: &str, catalog: &CommitCatalog, mode: LabelMode) -> bool {
    let files = catalog.commit(commit_id).map(|c| c.files.as_slice()).unwrap_or(&[]);
    match mode {
        LabelMode::FileIntersection => files.iter().any(|f| truth.files.contains(f)),
        LabelMode::DiffMatch => files
            .iter()
            .filter_map(|f| catalog.diff(commit_id, f))
            .any(|d| matches_truth(truth, d)),
    }
}

fn triplet(query: &Query, passage: &str, label: u8, kind: PassageKind, provenance: Provenance) -> Triplet {
    Triplet {
        query_id: query.query_id.clone(),
        query_text: query.text.clone(),
        passage_text: passage.to_string(),
        label,
        kind,
        provenance,
    }
}

/// Commit-message triplets for one query, walking the masked commit ranking
/// in order.
pub fn commit_triplets_for(
    query: &Query,
    ranked: &[ScoredCommit],
    catalog: &CommitCatalog,
    truth: &Truth,
    limits: &TripletLimits,
) -> Vec<Triplet> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut spare = Vec::new();
    for hit in ranked {
        if hit.commit_date >= query.timestamp {
            continue;
        }
        let Some(message) = catalog.commit(&hit.commit_id).map(|c| c.message.as_str()) else {
            continue;
        };
        if message.trim().is_empty() {
            continue;
        }
        let positive = commit_is_positive(truth, &hit.commit_id, catalog, limits.label_mode);
        let make = |label| {
            triplet(
                query,
                message,
                label,
                PassageKind::CommitMessage,
                Provenance {
                    commit_id: hit.commit_id.clone(),
                    path: None,
                    span: None,
                },
            )
        };
        if positive {
            if positives.len() < limits.positives {
                positives.push(make(1));
            }
        } else if negatives.len() < limits.negatives {
            negatives.push(make(0));
        } else if limits.easy_negatives > 0 {
            spare.push(make(0));
        } else if positives.len() >= limits.positives {
            break;
        }
    }
    if positives.is_empty() {
        log::info!("query {}: no positive commits retrieved", query.query_id);
    }
    if limits.easy_negatives > 0 && !spare.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(limits.seed, &query.query_id));
        let n = limits.easy_negatives.min(spare.len());
        let mut picked = sample(&mut rng, spare.len(), n).into_vec();
        picked.sort_unstable();
        negatives.extend(picked.into_iter().map(|i| spare[i].clone()));
    }
    positives.extend(negatives);
    positives
}

/// Commit-message triplets for every query with a truth entry.
pub fn make_commit_triplets(
    queries: &[Query],
    ctx: &SearchContext<'_>,
    truth: &TruthSet,
    config: &PipelineConfig,
    limits: &TripletLimits,
) -> Vec<Triplet> {
    queries
        .iter()
        .filter_map(|q| {
            let t = truth.get(&q.query_id)?;
            let ranked = ctx.index.search(&q.text, config.bm25_k, Some(q.timestamp));
            Some(commit_triplets_for(q, &ranked, ctx.catalog, t, limits))
        })
        .flatten()
        .collect()
}

/// Patches of a positive file to use as positive passages: those containing
/// a changed line shared with the truth, else those overlapping the
/// candidate diff's new-side hunk lines.
pub fn positive_patches<'p>(patches: &'p [CodePatch], truth: &Truth, candidate_diff: &str) -> Vec<&'p CodePatch> {
    let candidate = normalized_changes(candidate_diff);
    let shared: HashSet<String> = truth
        .diffs
        .values()
        .flat_map(|d| normalized_changes(d))
        .filter(|l| candidate.contains(l))
        .collect();
    let by_content: Vec<&CodePatch> = patches
        .iter()
        .filter(|p| p.text.lines().any(|l| shared.contains(l.trim())))
        .collect();
    if !by_content.is_empty() {
        return by_content;
    }
    let lines: Vec<usize> = changed_lines(candidate_diff).iter().map(|c| c.new_line).collect();
    patches
        .iter()
        .filter(|p| lines.iter().any(|&l| p.overlaps(l, l)))
        .collect()
}

/// Code-patch triplets for one query over file-aggregated, current-state
/// candidates. Each file is judged by the diff of its max-scoring commit.
pub fn code_triplets_for(
    query: &Query,
    ctx: &SearchContext<'_>,
    truth: &Truth,
    config: &PipelineConfig,
    limits: &TripletLimits,
) -> Result<Vec<Triplet>, PipelineError> {
    let candidates = search_files(query, ctx, config)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for file in &candidates {
        if positives.len() >= limits.positives && negatives.len() >= limits.negatives {
            break;
        }
        let Some(top) = file.top_contribution() else {
            continue;
        };
        let diff = ctx.catalog.diff(&top.commit_id, &top.path).unwrap_or("");
        let Some(content) = ctx.contents.content(&file.path) else {
            log::warn!("no content for {}", file.path);
            continue;
        };
        let patches = split_linewise(&file.path, &content, config.patch_token_budget, &ctx.patch_tokenizer);
        let make = |p: &CodePatch, label| {
            triplet(
                query,
                &p.text,
                label,
                PassageKind::CodePatch,
                Provenance {
                    commit_id: top.commit_id.clone(),
                    path: Some(file.path.clone()),
                    span: Some((p.start_line, p.end_line)),
                },
            )
        };
        if matches_truth(truth, diff) {
            for p in positive_patches(&patches, truth, diff) {
                if positives.len() >= limits.positives {
                    break;
                }
                if !p.text.trim().is_empty() {
                    positives.push(make(p, 1));
                }
            }
        } else if negatives.len() < limits.negatives {
            if let Some(p) = patches.iter().find(|p| !p.text.trim().is_empty()) {
                negatives.push(make(p, 0));
            }
        }
    }
    positives.extend(negatives);
    Ok(positives)
}

pub fn make_code_triplets(
    queries: &[Query],
    ctx: &SearchContext<'_>,
    truth: &TruthSet,
    config: &PipelineConfig,
    limits: &TripletLimits,
) -> Result<Vec<Triplet>, PipelineError> {
    let mut out = Vec::new();
    for q in queries {
        if let Some(t) = truth.get(&q.query_id) {
            out.extend(code_triplets_for(q, ctx, t, config, limits)?);
        }
    }
    Ok(out)
}

pub fn write_triplets<'a, I, W>(triplets: I, w: &mut W) -> Result<usize, TripletError>
where
    I: IntoIterator<Item = &'a Triplet>,
    W: Write,
{
    let mut n = 0;
    for t in triplets {
        serde_json::to_writer(&mut *w, t).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn read_triplets<R: BufRead>(r: R) -> Result<Vec<Triplet>, TripletError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| TripletError::Malformed { line: i + 1, reason };
        let t: Triplet = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if t.label > 1 {
            return Err(malformed(format!("label {} is not 0 or 1", t.label)));
        }
        if t.passage_text.is_empty() {
            return Err(malformed("empty passage".into()));
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diff_of(old: &[&str], new: &[&str]) -> String {
        let mut d = format!("--- a/f\n+++ b/f\n@@ -1,{} +1,{} @@\n", old.len(), new.len());
        for l in old {
            d.push_str(&format!("-{l}\n"));
        }
        for l in new {
            d.push_str(&format!("+{l}\n"));
        }
        d
    }

    #[test]
    fn intersection_examples() {
        let adds = diff_of(&[], &["x = compute(y)"]);
        let removes = diff_of(&["  x = compute(y)  "], &[]);
        assert_eq!(diff_line_intersection(&adds, &removes), 1);

        let braces = diff_of(&["}", "", "  "], &["});", "[ ]"]);
        assert_eq!(diff_line_intersection(&braces, &braces), 0);

        let three = diff_of(&["a = 1"], &["b = 2", "call(c)"]);
        assert_eq!(diff_line_intersection(&three, &three), 3);
        assert_eq!(diff_line_intersection(&three, "not a diff\n+x\n"), 0);
    }

    #[test]
    fn header_lookalikes_inside_hunks_count() {
        let d = "--- a/f\n+++ b/f\n@@ -1,2 +1,1 @@\n--- removed dashes\n-gone\n+++ added plus\n";
        let lines: Vec<_> = changed_lines(d).into_iter().map(|c| (c.text, c.added)).collect();
        assert_eq!(
            lines,
            [("-- removed dashes".to_string(), false), ("gone".into(), false), ("++ added plus".into(), true)]
        );
    }

    #[test]
    fn new_side_positions() {
        let d = "@@ -3,3 +3,4 @@\n ctx\n-old\n+new1\n+new2\n ctx\n";
        let pos: Vec<_> = changed_lines(d).into_iter().map(|c| (c.added, c.new_line)).collect();
        assert_eq!(pos, [(false, 4), (true, 4), (true, 5)]);
    }

    #[test]
    fn label_mode_strings() {
        for m in [LabelMode::FileIntersection, LabelMode::DiffMatch] {
            assert_eq!(m.to_string().parse::<LabelMode>().unwrap(), m);
        }
    }

    #[test]
    fn triplet_round_trip_and_validation() {
        let t = Triplet {
            query_id: "q1".into(),
            query_text: "fix \"parser\"".into(),
            passage_text: "line\nnext".into(),
            label: 1,
            kind: PassageKind::CodePatch,
            provenance: Provenance {
                commit_id: "c".into(),
                path: Some("src/a.rs".into()),
                span: Some((1, 4)),
            },
        };
        let mut buf = Vec::new();
        assert_eq!(write_triplets([&t], &mut buf).unwrap(), 1);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"query_id\":\"q1\",\"query_text\""));
        assert!(text.contains("\"kind\":\"code_patch\""));
        assert_eq!(read_triplets(&buf[..]).unwrap(), [t]);

        let bad = text.replace("\"label\":1", "\"label\":2");
        assert!(matches!(read_triplets(bad.as_bytes()), Err(TripletError::Malformed { line: 1, .. })));
        assert!(read_triplets(&b"{\"query_id\":1}\n"[..]).is_err());
    }

    fn catalog_with(commits: &[(&str, &[&str])]) -> CommitCatalog {
        use crate::commit_store::{CommitFileRecord, FileStatus};
        let recs: Vec<CommitFileRecord> = commits
            .iter()
            .enumerate()
            .flat_map(|(i, (id, files))| {
                files.iter().map(move |f| CommitFileRecord {
                    owner: "o".into(),
                    repo_name: "r".into(),
                    commit_date: 10 + i as i64,
                    commit_id: id.to_string(),
                    commit_message: format!("message {id}"),
                    file_path: f.to_string(),
                    previous_commit_id: None,
                    previous_file_content: None,
                    cur_file_content: Some("x\n".into()),
                    diff: "@@ -0,0 +1 @@\n+x\n".into(),
                    status: FileStatus::Added,
                    is_merge: false,
                    file_extension: String::new(),
                    previous_file_path: None,
                    parent_count: 1,
                })
            })
            .collect();
        CommitCatalog::from_records(&recs)
    }

    #[test]
    fn commit_triplets_follow_rank_and_caps() {
        let ids: Vec<String> = (0..30).map(|i| format!("c{i:02}")).collect();
        let spec: Vec<(&str, &[&str])> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), if i % 3 == 0 { &["x"][..] } else { &["a"][..] }))
            .collect();
        let cat = catalog_with(&spec);
        let ranked: Vec<ScoredCommit> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredCommit {
                commit_id: id.clone(),
                score: 100.0 - i as f64,
                commit_date: 10 + i as i64,
            })
            .collect();
        let truth = Truth {
            files: vec!["a".into(), "b".into()],
            diffs: HashMap::new(),
        };
        let q = Query {
            query_id: "q".into(),
            text: "t".into(),
            timestamp: 1000,
            source_commit_id: None,
        };
        let out = commit_triplets_for(&q, &ranked, &cat, &truth, &TripletLimits::default());
        let pos: Vec<_> = out.iter().filter(|t| t.label == 1).map(|t| t.provenance.commit_id.as_str()).collect();
        let neg: Vec<_> = out.iter().filter(|t| t.label == 0).map(|t| t.provenance.commit_id.as_str()).collect();
        assert_eq!(pos, ["c01", "c02", "c04", "c05", "c07", "c08", "c10", "c11", "c13", "c14"]);
        assert_eq!(neg, ["c00", "c03", "c06", "c09", "c12", "c15", "c18", "c21", "c24", "c27"]);

        // mask at date 15 keeps commits c00..c04 only
        let masked = Query { timestamp: 15, ..q.clone() };
        let out = commit_triplets_for(&masked, &ranked, &cat, &truth, &TripletLimits::default());
        assert_eq!(out.len(), 5);

        let easy = TripletLimits {
            negatives: 2,
            easy_negatives: 3,
            seed: 7,
            ..Default::default()
        };
        let a = commit_triplets_for(&q, &ranked, &cat, &truth, &easy);
        let b = commit_triplets_for(&q, &ranked, &cat, &truth, &easy);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|t| t.label == 0).count(), 5);
    }

    fn refs(v: &[String]) -> Vec<&str> {
        v.iter().map(String::as_str).collect()
    }

    proptest! {
        #[test]
        fn intersection_symmetric(
            a in proptest::collection::vec("[a-c(){};]{0,4}", 0..8),
            b in proptest::collection::vec("[a-c(){};]{0,4}", 0..8),
        ) {
            let d1 = diff_of(&refs(&a), &[]);
            let d2 = diff_of(&[], &refs(&b));
            prop_assert_eq!(diff_line_intersection(&d1, &d2), diff_line_intersection(&d2, &d1));
            let shifted: Vec<String> = b.iter().map(|l| format!("z{l}")).collect();
            let d3 = diff_of(&refs(&shifted), &[]);
            prop_assert_eq!(diff_line_intersection(&d1, &d3), 0);
        }
    }
}
