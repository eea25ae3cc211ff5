//! Thin wrapper over the `git` command-line tool.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::record::{extension_of, is_commit_id, CommitFileRecord, FileStatus};
use super::StoreError;

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub include_merges: bool,
    /// Keep only the most recent `n` commits (after merge filtering).
    pub max_commits: Option<usize>,
    pub owner: Option<String>,
    pub repo_name: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            include_merges: true,
            max_commits: None,
            owner: None,
            repo_name: None,
        }
    }
}

/// The set of files tracked at one commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoSnapshot {
    pub head_commit_id: String,
    pub live_paths: BTreeSet<String>,
}

impl RepoSnapshot {
    pub fn contains(&self, path: &str) -> bool {
        self.live_paths.contains(path)
    }
}

pub(crate) struct Git {
    dir: PathBuf,
}

impl Git {
    pub(crate) fn open(dir: &Path) -> Result<Self, StoreError> {
        if !dir.is_dir() {
            return Err(StoreError::NotAGitRepository(dir.to_path_buf()));
        }
        let git = Git {
            dir: dir.to_path_buf(),
        };
        match git.run(&["rev-parse", "--git-dir"]) {
            Ok(_) => Ok(git),
            Err(StoreError::GitInvocationFailed { status: Some(_), .. }) => {
                Err(StoreError::NotAGitRepository(dir.to_path_buf()))
            }
            Err(e) => Err(e),
        }
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new("git");
        cmd.arg("-C")
            .arg(&self.dir)
            .args(["-c", "core.quotepath=false", "-c", "diff.noprefix=false"])
            .env("GIT_TERMINAL_PROMPT", "0")
            .env("LC_ALL", "C");
        cmd
    }

    pub(crate) fn run(&self, args: &[&str]) -> Result<Vec<u8>, StoreError> {
        let out = self
            .command()
            .args(args)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| StoreError::GitInvocationFailed {
                command: args.join(" "),
                status: None,
                stderr: e.to_string(),
            })?;
        if !out.status.success() {
            return Err(StoreError::GitInvocationFailed {
                command: args.join(" "),
                status: out.status.code(),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }

    /// Resolves a revision to a commit id; `None` when it names no commit.
    pub(crate) fn resolve_commit(&self, rev: &str) -> Result<Option<String>, StoreError> {
        let spec = format!("{rev}^{{commit}}");
        match self.run(&["rev-parse", "--verify", "-q", &spec]) {
            Ok(out) => Ok(Some(String::from_utf8_lossy(&out).trim().to_string())),
            Err(StoreError::GitInvocationFailed { status: Some(_), .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn origin(&self) -> Option<(String, String)> {
        let url = self.run(&["config", "--get", "remote.origin.url"]).ok()?;
        let url = String::from_utf8_lossy(&url).trim().to_string();
        let mut parts = url
            .trim_end_matches('/')
            .trim_end_matches(".git")
            .rsplit(['/', ':']);
        let repo = parts.next()?.to_string();
        let owner = parts.next()?.to_string();
        (!repo.is_empty() && !owner.is_empty()).then_some((owner, repo))
    }
}

struct CommitMeta {
    id: String,
    parents: Vec<String>,
    date: i64,
    message: String,
}

fn list_commits(git: &Git, head: &str) -> Result<Vec<CommitMeta>, StoreError> {
    let out = git.run(&[
        "log",
        "--topo-order",
        "--reverse",
        "-z",
        "--format=%H%x1f%P%x1f%ct%x1f%B",
        head,
    ])?;
    let text = String::from_utf8_lossy(&out);
    let mut commits = Vec::new();
    for entry in text.split('\0') {
        let entry = entry.trim_start_matches('\n');
        if entry.is_empty() {
            continue;
        }
        let mut fields = entry.splitn(4, '\x1f');
        let (Some(id), Some(parents), Some(date), Some(message)) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(StoreError::CorruptHistory(format!(
                "unparseable log entry: {:?}",
                entry.chars().take(80).collect::<String>()
            )));
        };
        if !is_commit_id(id) {
            return Err(StoreError::CorruptHistory(format!("bad commit id {id:?}")));
        }
        let date = date
            .parse::<i64>()
            .map_err(|_| StoreError::CorruptHistory(format!("bad date for {id}: {date:?}")))?;
        commits.push(CommitMeta {
            id: id.to_string(),
            parents: parents.split_whitespace().map(str::to_string).collect(),
            date,
            message: message.trim_end().to_string(),
        });
    }
    // stable: equal timestamps keep topological (parents first) order
    commits.sort_by_key(|c| c.date);
    Ok(commits)
}

struct RawEntry {
    status: FileStatus,
    old_blob: Option<String>,
    new_blob: Option<String>,
    old_path: Option<String>,
    path: String,
}

const NULL_OID: &str = "0000000000000000000000000000000000000000";
const GITLINK_MODE: &str = "160000";

fn parse_raw(out: &[u8]) -> Result<Vec<RawEntry>, StoreError> {
    let text = String::from_utf8_lossy(out);
    let mut tokens = text.split('\0').filter(|t| !t.is_empty());
    let mut entries = Vec::new();
    while let Some(meta) = tokens.next() {
        let meta = meta.trim_start_matches('\n');
        let corrupt = || StoreError::CorruptHistory(format!("unparseable raw diff entry {meta:?}"));
        let fields: Vec<&str> = meta.trim_start_matches(':').split(' ').collect();
        let [old_mode, new_mode, old_oid, new_oid, status] = fields[..] else {
            return Err(corrupt());
        };
        let first = tokens.next().ok_or_else(corrupt)?.to_string();
        let code = status.chars().next().ok_or_else(corrupt)?;
        let (status, old_path, path) = match code {
            'A' | 'C' => (FileStatus::Added, None, first),
            'M' | 'T' => (FileStatus::Modified, None, first),
            'D' => (FileStatus::Deleted, None, first),
            'R' => {
                let second = tokens.next().ok_or_else(corrupt)?.to_string();
                (FileStatus::Renamed, Some(first), second)
            }
            _ => return Err(corrupt()),
        };
        if code == 'C' {
            // copies only appear with -C; the copy source is untouched
            tokens.next();
        }
        if old_mode == GITLINK_MODE || new_mode == GITLINK_MODE {
            log::debug!("skipping submodule entry {path}");
            continue;
        }
        let blob = |oid: &str| (oid != NULL_OID).then(|| oid.to_string());
        entries.push(RawEntry {
            status,
            old_blob: blob(old_oid),
            new_blob: blob(new_oid),
            old_path,
            path,
        });
    }
    Ok(entries)
}

/// Splits `git diff-tree -p` output into per-file chunks.
fn split_patch(out: &[u8]) -> Vec<String> {
    let text = String::from_utf8_lossy(out);
    let mut chunks: Vec<String> = Vec::new();
    for line in text.split_inclusive('\n') {
        if line.starts_with("diff --git ") || chunks.is_empty() {
            chunks.push(String::new());
        }
        chunks.last_mut().unwrap().push_str(line);
    }
    chunks.retain(|c| c.starts_with("diff --git "));
    chunks
}

/// Long-running `git cat-file --batch` process.
pub(crate) struct BlobReader {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl BlobReader {
    pub(crate) fn spawn(git: &Git) -> Result<Self, StoreError> {
        let mut child = git
            .command()
            .args(["cat-file", "--batch"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| StoreError::GitInvocationFailed {
                command: "cat-file --batch".into(),
                status: None,
                stderr: e.to_string(),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(BlobReader {
            child,
            stdin,
            stdout,
        })
    }

    /// Returns the object's bytes, or `None` if git reports it missing.
    pub(crate) fn read(&mut self, object: &str) -> Result<Option<Vec<u8>>, StoreError> {
        if object.contains('\n') {
            return Ok(None);
        }
        writeln!(self.stdin, "{object}")?;
        self.stdin.flush()?;
        let mut header = String::new();
        self.stdout.read_line(&mut header)?;
        let header = header.trim_end();
        if header.ends_with(" missing") || header.ends_with(" ambiguous") {
            return Ok(None);
        }
        let size = header
            .rsplit(' ')
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| StoreError::CorruptHistory(format!("bad cat-file header {header:?}")))?;
        let kind = header.split(' ').nth(1).unwrap_or("");
        let mut buf = vec![0u8; size + 1];
        self.stdout.read_exact(&mut buf)?;
        buf.pop();
        Ok((kind == "blob").then_some(buf))
    }
}

impl Drop for BlobReader {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Decoded text, or `None` for binary content.
fn as_text(bytes: Vec<u8>) -> Option<String> {
    if bytes.contains(&0) {
        return None;
    }
    String::from_utf8(bytes).ok()
}

/// Reads the history reachable from HEAD into (commit, file) records,
/// oldest commit first.
pub fn ingest_repository(
    git_dir: &Path,
    options: &IngestOptions,
) -> Result<Vec<CommitFileRecord>, StoreError> {
    let git = Git::open(git_dir)?;
    let Some(head) = git.resolve_commit("HEAD")? else {
        return Ok(Vec::new());
    };
    let (owner, repo_name) = match (&options.owner, &options.repo_name) {
        (Some(o), Some(r)) => (o.clone(), r.clone()),
        (o, r) => {
            let origin = git.origin();
            let dir_name = git_dir
                .canonicalize()
                .ok()
                .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .unwrap_or_default()
                .trim_end_matches(".git")
                .to_string();
            (
                o.clone()
                    .or_else(|| origin.as_ref().map(|x| x.0.clone()))
                    .unwrap_or_else(|| "local".to_string()),
                r.clone()
                    .or_else(|| origin.as_ref().map(|x| x.1.clone()))
                    .unwrap_or(dir_name),
            )
        }
    };

    let mut commits = list_commits(&git, &head)?;
    if !options.include_merges {
        commits.retain(|c| c.parents.len() < 2);
    }
    if let Some(n) = options.max_commits {
        let skip = commits.len().saturating_sub(n);
        commits.drain(..skip);
    }

    let mut blobs = BlobReader::spawn(&git)?;
    let mut records = Vec::new();
    for commit in &commits {
        let parent = commit.parents.first();
        let mut tree_args = vec!["diff-tree", "-r", "-M", "-z", "--no-commit-id", "--no-abbrev"];
        match parent {
            Some(p) => tree_args.extend([p.as_str(), commit.id.as_str()]),
            None => tree_args.extend(["--root", commit.id.as_str()]),
        }
        let mut raw_args = tree_args.clone();
        raw_args.push("--raw");
        let entries = parse_raw(&git.run(&raw_args)?)?;
        if entries.is_empty() {
            continue;
        }
        let mut patch_args: Vec<&str> = tree_args
            .iter()
            .copied()
            .filter(|a| *a != "-z")
            .collect();
        patch_args.extend(["-p", "--no-color", "--no-ext-diff", "--ignore-submodules"]);
        let mut chunks = split_patch(&git.run(&patch_args)?);
        if chunks.len() != entries.len() {
            chunks = per_file_patches(&git, &tree_args, &entries)?;
        }

        for (entry, diff) in entries.into_iter().zip(chunks) {
            let old_text = match (&entry.old_blob, entry.status) {
                (_, FileStatus::Added) | (None, _) => None,
                (Some(oid), _) => Some(read_blob(&mut blobs, oid)?),
            };
            let new_text = match (&entry.new_blob, entry.status) {
                (_, FileStatus::Deleted) | (None, _) => None,
                (Some(oid), _) => Some(read_blob(&mut blobs, oid)?),
            };
            let binary = matches!(old_text, Some(None))
                || matches!(new_text, Some(None))
                || diff.lines().any(|l| l.starts_with("Binary files"));
            let mut diff = diff;
            let (prev_content, cur_content) = if binary {
                if !diff.lines().any(|l| l.starts_with("Binary files")) {
                    let from = entry.old_path.as_deref().unwrap_or(&entry.path);
                    diff = format!("Binary files a/{from} and b/{} differ\n", entry.path);
                }
                (None, None)
            } else {
                (old_text.flatten(), new_text.flatten())
            };
            let is_added = entry.status == FileStatus::Added;
            records.push(CommitFileRecord {
                owner: owner.clone(),
                repo_name: repo_name.clone(),
                commit_date: commit.date,
                commit_id: commit.id.clone(),
                commit_message: commit.message.clone(),
                file_extension: extension_of(&entry.path),
                file_path: entry.path,
                previous_commit_id: if is_added { None } else { parent.cloned() },
                previous_file_content: prev_content,
                cur_file_content: cur_content,
                diff,
                status: entry.status,
                is_merge: commit.parents.len() >= 2,
                previous_file_path: entry.old_path,
                parent_count: commit.parents.len() as u32,
            });
            let rec = records.last().unwrap();
            if let Err(v) = rec.validate() {
                return Err(StoreError::CorruptHistory(format!(
                    "{} {}: {v}",
                    rec.commit_id, rec.file_path
                )));
            }
        }
    }
    Ok(records)
}

fn read_blob(blobs: &mut BlobReader, oid: &str) -> Result<Option<String>, StoreError> {
    let bytes = blobs
        .read(oid)?
        .ok_or_else(|| StoreError::CorruptHistory(format!("missing blob {oid}")))?;
    Ok(as_text(bytes))
}

fn per_file_patches(
    git: &Git,
    tree_args: &[&str],
    entries: &[RawEntry],
) -> Result<Vec<String>, StoreError> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let mut args: Vec<&str> = tree_args.iter().copied().filter(|a| *a != "-z").collect();
        args.extend(["-p", "--no-color", "--no-ext-diff", "--"]);
        if let Some(old) = &e.old_path {
            args.push(old);
        }
        args.push(&e.path);
        out.push(split_patch(&git.run(&args)?).concat());
    }
    Ok(out)
}

/// Lists the files tracked at `at_commit` (HEAD by default).
pub fn snapshot(git_dir: &Path, at_commit: Option<&str>) -> Result<RepoSnapshot, StoreError> {
    let git = Git::open(git_dir)?;
    let rev = at_commit.unwrap_or("HEAD");
    let id = git
        .resolve_commit(rev)?
        .ok_or_else(|| StoreError::UnknownCommit(rev.to_string()))?;
    let out = git.run(&["ls-tree", "-r", "-z", &id])?;
    let text = String::from_utf8_lossy(&out);
    let live_paths = text
        .split('\0')
        .filter_map(|entry| {
            let (meta, path) = entry.split_once('\t')?;
            (meta.split(' ').nth(1) == Some("blob")).then(|| path.to_string())
        })
        .collect();
    Ok(RepoSnapshot {
        head_commit_id: id,
        live_paths,
    })
}

/// Source of current file text for the code reranking stage.
pub trait ContentSource: Send + Sync {
    /// `None` when the file cannot be read or is not text.
    fn content(&self, path: &str) -> Option<String>;
}

impl ContentSource for HashMap<String, String> {
    fn content(&self, path: &str) -> Option<String> {
        self.get(path).cloned()
    }
}

/// Reads file text at a snapshot's commit through one cat-file process.
pub struct GitContents {
    commit: String,
    reader: Mutex<BlobReader>,
    cache: Mutex<HashMap<String, Option<String>>>,
}

impl GitContents {
    pub fn open(git_dir: &Path, snapshot: &RepoSnapshot) -> Result<Self, StoreError> {
        let git = Git::open(git_dir)?;
        Ok(GitContents {
            commit: snapshot.head_commit_id.clone(),
            reader: Mutex::new(BlobReader::spawn(&git)?),
            cache: Mutex::new(HashMap::new()),
        })
    }
}

impl ContentSource for GitContents {
    fn content(&self, path: &str) -> Option<String> {
        if let Some(hit) = self.cache.lock().unwrap().get(path) {
            return hit.clone();
        }
        let object = format!("{}:{}", self.commit, path);
        let text = match self.reader.lock().unwrap().read(&object) {
            Ok(bytes) => bytes.and_then(as_text),
            Err(e) => {
                log::warn!("reading {path} at {}: {e}", self.commit);
                None
            }
        };
        self.cache
            .lock()
            .unwrap()
            .insert(path.to_string(), text.clone());
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_entries_parse() {
        let z = ":000000 100644 0000000000000000000000000000000000000000 1111111111111111111111111111111111111111 A\0a.txt\0:100644 100644 2222222222222222222222222222222222222222 2222222222222222222222222222222222222222 R100\0old name.txt\0new name.txt\0:100644 160000 3333333333333333333333333333333333333333 4444444444444444444444444444444444444444 M\0sub\0";
        let e = parse_raw(z.as_bytes()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].status, FileStatus::Added);
        assert!(e[0].old_blob.is_none());
        assert_eq!(e[1].status, FileStatus::Renamed);
        assert_eq!(e[1].old_path.as_deref(), Some("old name.txt"));
        assert_eq!(e[1].path, "new name.txt");
    }

    #[test]
    fn patch_split_by_header() {
        let p = "diff --git a/x b/x\n--- a/x\n+++ b/x\n@@ -1 +1 @@\n-a\n+b\ndiff --git a/y b/y\nsimilarity index 100%\n";
        let chunks = split_patch(p.as_bytes());
        assert_eq!(chunks.len(), 2);
        assert!(chunks[0].ends_with("+b\n"));
        assert_eq!(chunks.concat(), p);
    }

    #[test]
    fn binary_detection() {
        assert_eq!(as_text(b"hello\n".to_vec()).as_deref(), Some("hello\n"));
        assert_eq!(as_text(vec![0x89, b'P', 0, 1]), None);
        assert_eq!(as_text(vec![0xff, 0xfe]), None);
    }

    #[test]
    fn not_a_repo() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest_repository(dir.path(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, StoreError::NotAGitRepository(_)), "{err:?}");
        let err = snapshot(&dir.path().join("nope"), None).unwrap_err();
        assert!(matches!(err, StoreError::NotAGitRepository(_)));
    }
}
