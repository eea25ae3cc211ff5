//! Generated histories: small fixed fixtures, random rename/delete churn,
//! and a repository with planted query-to-file vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bm25_index::{Bm25Params, InvertedIndex, Tokenizer};
use crate::catalog::CommitCatalog;
use crate::commit_store::{extension_of, CommitFileRecord, FileStatus, RepoSnapshot};
use crate::eval::Qrels;
use crate::fid_map::{build_fid_map, FidCache};
use crate::pipeline::{Query, SearchContext};

pub const BASE_DATE: i64 = 1_700_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Change {
    /// Adds the path or replaces its content.
    Write { path: String, content: String },
    Delete { path: String },
    /// Moves `from` to `to`, optionally with new content.
    Rename {
        from: String,
        to: String,
        content: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCommit {
    pub message: String,
    pub date: i64,
    pub changes: Vec<Change>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    pub owner: String,
    pub repo_name: String,
    pub commits: Vec<SynthCommit>,
}

pub fn commit_id_for(index: usize) -> String {
    format!("{:040x}", (index as u128 + 1) * 0x9e37_79b9_7f4a_7c15)
}

/// Single-hunk diff over the differing middle of two texts.
pub fn unified_diff(old_path: &str, new_path: &str, old: &str, new: &str) -> String {
    let a: Vec<&str> = old.lines().collect();
    let b: Vec<&str> = new.lines().collect();
    let mut pre = 0;
    while pre < a.len() && pre < b.len() && a[pre] == b[pre] {
        pre += 1;
    }
    let mut suf = 0;
    while suf < a.len() - pre && suf < b.len() - pre && a[a.len() - 1 - suf] == b[b.len() - 1 - suf] {
        suf += 1;
    }
    let removed = &a[pre..a.len() - suf];
    let added = &b[pre..b.len() - suf];
    let mut out = format!("diff --git a/{old_path} b/{new_path}\n");
    if removed.is_empty() && added.is_empty() {
        return out;
    }
    let start = |n: usize| if n == 0 { pre } else { pre + 1 };
    out.push_str(&format!(
        "--- a/{old_path}\n+++ b/{new_path}\n@@ -{},{} +{},{} @@\n",
        start(removed.len()),
        removed.len(),
        start(added.len()),
        added.len()
    ));
    for l in removed {
        out.push_str(&format!("-{l}\n"));
    }
    for l in added {
        out.push_str(&format!("+{l}\n"));
    }
    out
}

impl History {
    pub fn new(repo_name: &str) -> Self {
        History {
            owner: "synth".into(),
            repo_name: repo_name.into(),
            commits: Vec::new(),
        }
    }

    pub fn commit(&mut self, message: &str, changes: Vec<Change>) -> &mut Self {
        let date = BASE_DATE + 3600 * self.commits.len() as i64;
        self.commits.push(SynthCommit {
            message: message.into(),
            date,
            changes,
        });
        self
    }

    /// Live path to content after the last commit.
    pub fn live_contents(&self) -> BTreeMap<String, String> {
        let mut live = BTreeMap::new();
        for c in &self.commits {
            for ch in &c.changes {
                match ch {
                    Change::Write { path, content } => {
                        live.insert(path.clone(), content.clone());
                    }
                    Change::Delete { path } => {
                        live.remove(path);
                    }
                    Change::Rename { from, to, content } => {
                        let old = live.remove(from).unwrap_or_default();
                        live.insert(to.clone(), content.clone().unwrap_or(old));
                    }
                }
            }
        }
        live
    }

    pub fn contents_map(&self) -> HashMap<String, String> {
        self.live_contents().into_iter().collect()
    }

    pub fn snapshot(&self) -> RepoSnapshot {
        RepoSnapshot {
            head_commit_id: self.commits.len().checked_sub(1).map(commit_id_for).unwrap_or_default(),
            live_paths: self.live_contents().into_keys().collect(),
        }
    }

    /// One record per changed file, in commit order.
    pub fn to_records(&self) -> Vec<CommitFileRecord> {
        let mut live: BTreeMap<String, String> = BTreeMap::new();
        let mut out = Vec::new();
        for (i, c) in self.commits.iter().enumerate() {
            let id = commit_id_for(i);
            let parent = i.checked_sub(1).map(commit_id_for);
            let mut push = |path: &str, prev_path: Option<&str>, status, old: Option<String>, new: Option<String>| {
                let diff = unified_diff(
                    prev_path.unwrap_or(path),
                    path,
                    old.as_deref().unwrap_or(""),
                    new.as_deref().unwrap_or(""),
                );
                out.push(CommitFileRecord {
                    owner: self.owner.clone(),
                    repo_name: self.repo_name.clone(),
                    commit_date: c.date,
                    commit_id: id.clone(),
                    commit_message: c.message.clone(),
                    file_path: path.to_string(),
                    previous_commit_id: if status == FileStatus::Added { None } else { parent.clone() },
                    previous_file_content: old,
                    cur_file_content: new,
                    diff,
                    status,
                    is_merge: false,
                    file_extension: extension_of(path),
                    previous_file_path: prev_path.map(str::to_string),
                    parent_count: u32::from(i > 0),
                });
            };
            for ch in &c.changes {
                match ch {
                    Change::Write { path, content } => {
                        let old = live.insert(path.clone(), content.clone());
                        let status = if old.is_some() { FileStatus::Modified } else { FileStatus::Added };
                        push(path, None, status, old, Some(content.clone()));
                    }
                    Change::Delete { path } => {
                        let old = live.remove(path);
                        push(path, None, FileStatus::Deleted, Some(old.unwrap_or_default()), None);
                    }
                    Change::Rename { from, to, content } => {
                        let old = live.remove(from).unwrap_or_default();
                        let new = content.clone().unwrap_or_else(|| old.clone());
                        live.insert(to.clone(), new.clone());
                        push(to, Some(from), FileStatus::Renamed, Some(old), Some(new));
                    }
                }
            }
        }
        out
    }

    /// Materializes the history as a git repository on branch `main`.
    pub fn write_git_repo(&self, dir: &Path) -> std::io::Result<()> {
        let git = |args: &[&str]| -> std::io::Result<()> {
            let status = Command::new("git")
                .arg("-C")
                .arg(dir)
                .args(args)
                .stdout(Stdio::null())
                .status()?;
            if status.success() {
                Ok(())
            } else {
                Err(std::io::Error::other(format!("git {args:?} failed")))
            }
        };
        std::fs::create_dir_all(dir)?;
        git(&["init", "-q"])?;
        git(&["symbolic-ref", "HEAD", "refs/heads/main"])?;
        let mut stream: Vec<u8> = Vec::new();
        for (i, c) in self.commits.iter().enumerate() {
            let who = format!("Synth Author <synth@example.com> {} +0000", c.date);
            write!(stream, "commit refs/heads/main\nmark :{}\nauthor {who}\ncommitter {who}\n", i + 1)?;
            write!(stream, "data {}\n{}\n", c.message.len(), c.message)?;
            if i > 0 {
                writeln!(stream, "from :{i}")?;
            }
            for ch in &c.changes {
                match ch {
                    Change::Write { path, content } => {
                        write!(stream, "M 100644 inline {path}\ndata {}\n{content}\n", content.len())?;
                    }
                    Change::Delete { path } => writeln!(stream, "D {path}")?,
                    Change::Rename { from, to, content } => {
                        writeln!(stream, "R {from} {to}")?;
                        if let Some(content) = content {
                            write!(stream, "M 100644 inline {to}\ndata {}\n{content}\n", content.len())?;
                        }
                    }
                }
            }
            stream.push(b'\n');
        }
        let mut child = Command::new("git")
            .arg("-C")
            .arg(dir)
            .args(["fast-import", "--quiet"])
            .stdin(Stdio::piped())
            .spawn()?;
        child.stdin.take().expect("piped").write_all(&stream)?;
        if !child.wait()?.success() {
            return Err(std::io::Error::other("git fast-import failed"));
        }
        Ok(())
    }
}

fn write(path: &str, content: &str) -> Change {
    Change::Write {
        path: path.into(),
        content: content.into(),
    }
}

fn rename(from: &str, to: &str) -> Change {
    Change::Rename {
        from: from.into(),
        to: to.into(),
        content: None,
    }
}

/// Ten commits with two renames, a short-lived file and a delete.
pub fn main_fixture() -> History {
    let mut h = History::new("fixture");
    h.commit("Add a notes file", vec![write("a.txt", "alpha notes\nsecond line\n")])
        .commit(
            "Add parser and readme",
            vec![
                write("src/parser.rs", "fn parse(input: &str) -> Ast {\n    todo()\n}\n"),
                write("README.md", "# Fixture\n"),
            ],
        )
        .commit(
            "Fix parser bug on empty input",
            vec![write(
                "src/parser.rs",
                "fn parse(input: &str) -> Ast {\n    if input.is_empty() {\n        return Ast::Empty;\n    }\n    todo()\n}\n",
            )],
        )
        .commit("Rename notes to b", vec![rename("a.txt", "b.txt")])
        .commit(
            "Add lexer and document it",
            vec![
                write("src/lexer.rs", "fn lex(input: &str) -> Vec<Token> {\n    Vec::new()\n}\n"),
                write("README.md", "# Fixture\n\nParser and lexer.\n"),
            ],
        )
        .commit("Add scratch file", vec![write("tmp.txt", "scratch\n")])
        .commit(
            "Remove scratch file and handle lexer whitespace",
            vec![
                Change::Delete { path: "tmp.txt".into() },
                write(
                    "src/lexer.rs",
                    "fn lex(input: &str) -> Vec<Token> {\n    input.split_whitespace().map(Token::from).collect()\n}\n",
                ),
            ],
        )
        .commit("Rename notes to c", vec![rename("b.txt", "c.txt")])
        .commit(
            "Add guide and data file",
            vec![write("docs/guide.md", "# Guide\n\nRun the parser.\n"), write("d.txt", "data\n")],
        )
        .commit(
            "Fix parser crash on unicode input",
            vec![write(
                "src/parser.rs",
                "fn parse(input: &str) -> Ast {\n    if input.is_empty() {\n        return Ast::Empty;\n    }\n    let input = input.chars().collect::<String>();\n    todo()\n}\n",
            )],
        )
        .clone()
}

/// `a.txt` renamed twice to `c.txt`, plus an unrelated `d.txt`.
pub fn rename_chain_fixture() -> History {
    let mut h = History::new("chain");
    h.commit("add a", vec![write("a.txt", "one\n")])
        .commit("a to b", vec![rename("a.txt", "b.txt")])
        .commit("b to c", vec![rename("b.txt", "c.txt")])
        .commit("add d", vec![write("d.txt", "four\n")])
        .clone()
}

/// Random adds, edits, deletes, renames and re-adds over a small name pool.
pub fn random_churn(seed: u64, commits: usize) -> History {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = (0..10).map(|i| format!("f{i}.txt")).collect();
    let mut live: BTreeSet<String> = BTreeSet::new();
    let mut h = History::new("churn");
    for i in 0..commits {
        let mut changes = Vec::new();
        let mut touched: BTreeSet<String> = BTreeSet::new();
        for _ in 0..rng.gen_range(1..=3) {
            let dead: Vec<&String> = pool.iter().filter(|p| !live.contains(*p) && !touched.contains(*p)).collect();
            let alive: Vec<String> = live.iter().filter(|p| !touched.contains(*p)).cloned().collect();
            let op = rng.gen_range(0..4);
            let content = format!("v{i} {}\n", rng.gen::<u32>());
            match (op, alive.choose(&mut rng), dead.choose(&mut rng)) {
                (0, Some(p), _) => {
                    changes.push(write(p, &content));
                    touched.insert(p.clone());
                }
                (1, Some(p), _) => {
                    changes.push(Change::Delete { path: p.clone() });
                    live.remove(p);
                    touched.insert(p.clone());
                }
                (2, Some(from), Some(to)) => {
                    let to = (*to).clone();
                    changes.push(Change::Rename {
                        from: from.clone(),
                        to: to.clone(),
                        content: rng.gen_bool(0.3).then_some(content),
                    });
                    live.remove(from);
                    live.insert(to.clone());
                    touched.insert(from.clone());
                    touched.insert(to);
                }
                (_, _, Some(p)) => {
                    let p = (*p).clone();
                    changes.push(write(&p, &content));
                    live.insert(p.clone());
                    touched.insert(p);
                }
                _ => {}
            }
        }
        if !changes.is_empty() {
            h.commit(&format!("churn {i}"), changes);
        }
    }
    h
}

/// Everything a query needs, built in memory from a history.
pub struct Artifacts {
    pub records: Vec<CommitFileRecord>,
    pub catalog: CommitCatalog,
    pub index: InvertedIndex,
    pub fids: FidCache,
    pub snapshot: RepoSnapshot,
    pub contents: HashMap<String, String>,
}

impl Artifacts {
    pub fn build(history: &History) -> Self {
        let records = history.to_records();
        Artifacts {
            catalog: CommitCatalog::from_records(&records),
            index: InvertedIndex::build(&records, Tokenizer::default(), Bm25Params::default()),
            fids: build_fid_map(&records).expect("generated histories are ordered"),
            snapshot: history.snapshot(),
            contents: history.contents_map(),
            records,
        }
    }

    pub fn context(&self) -> SearchContext<'_> {
        SearchContext::new(
            &self.index,
            &self.catalog,
            self.fids.live_view(&self.snapshot),
            &self.contents,
        )
    }
}

/// A history whose test commits each edit one file, with queries written in
/// that file's private vocabulary.
#[derive(Debug, Clone)]
pub struct PlantedRepo {
    pub history: History,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    (0..3)
        .flat_map(|_| [C[rng.gen_range(0..C.len())], V[rng.gen_range(0..V.len())]])
        .map(char::from)
        .collect()
}

fn module_source(words: &[String], generation: usize) -> String {
    let mut s = String::new();
    for (i, w) in words.iter().enumerate() {
        let next = &words[(i + 1) % words.len()];
        s.push_str(&format!("let {w} = compute({next}, value);\n"));
        s.push_str(&format!("return {w} + data{};\n", generation));
    }
    s
}

pub const PLANTED_FILES: usize = 40;
const WORDS_PER_FILE: usize = 8;

/// 200 commits: 40 adds, then noise commits interleaved with one test commit
/// in every four. Noise messages mix vocabulary of files they do not touch.
pub fn planted_repo(seed: u64) -> PlantedRepo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let vocab: Vec<Vec<String>> = (0..PLANTED_FILES)
        .map(|_| {
            (0..WORDS_PER_FILE)
                .map(|_| loop {
                    let w = pseudo_word(&mut rng);
                    if used.insert(w.clone()) {
                        break w;
                    }
                })
                .collect()
        })
        .collect();
    let paths: Vec<String> = (0..PLANTED_FILES).map(|i| format!("src/module{i:02}.rs")).collect();
    let mut generation = vec![0usize; PLANTED_FILES];
    let mut h = History::new("planted");
    for f in 0..PLANTED_FILES {
        let msg = format!("Add module {} {}", vocab[f][0], vocab[f][1]);
        h.commit(&msg, vec![write(&paths[f], &module_source(&vocab[f], 0))]);
    }
    let mut queries = Vec::new();
    let mut qrels = Qrels::new();
    for step in 0..160 {
        if step % 4 == 3 {
            let f = rng.gen_range(0..PLANTED_FILES);
            generation[f] += 1;
            let picks: Vec<&String> = vocab[f].choose_multiple(&mut rng, 3).collect();
            let text = format!("fix crash in {} {} {}", picks[0], picks[1], picks[2]);
            h.commit(&format!("Fix {} handling", picks[0]), vec![write(&paths[f], &module_source(&vocab[f], generation[f]))]);
            let idx = h.commits.len() - 1;
            let qid = format!("q{:03}", queries.len());
            queries.push(Query {
                query_id: qid.clone(),
                text,
                timestamp: h.commits[idx].date,
                source_commit_id: Some(commit_id_for(idx)),
            });
            qrels.insert(qid, BTreeSet::from([paths[f].clone()]));
        } else {
            let n = rng.gen_range(2..=4);
            let touched: Vec<usize> = rand::seq::index::sample(&mut rng, PLANTED_FILES, n).into_vec();
            let mentioned: Vec<String> = (0..2)
                .map(|_| {
                    let f = rng.gen_range(0..PLANTED_FILES);
                    vocab[f].choose(&mut rng).expect("non-empty").clone()
                })
                .collect();
            let msg = format!("Refactor {} and {} paths", mentioned[0], mentioned[1]);
            let changes = touched
                .iter()
                .map(|&f| {
                    generation[f] += 1;
                    write(&paths[f], &module_source(&vocab[f], generation[f]))
                })
                .collect();
            h.commit(&msg, changes);
        }
    }
    PlantedRepo {
        history: h,
        queries,
        qrels,
    }
}
