//! Per-commit lookups derived from a record store.

use std::collections::{BTreeMap, HashMap};

use crate::commit_store::{CommitFileRecord, FileStatus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitInfo {
    pub commit_id: String,
    pub commit_date: i64,
    pub message: String,
    /// Paths touched by the commit, in record order.
    pub files: Vec<String>,
}

/// Maps a commit id to the file paths it touched.
pub trait CommitFiles {
    fn files_of(&self, commit_id: &str) -> Option<&[String]>;
}

impl CommitFiles for HashMap<String, Vec<String>> {
    fn files_of(&self, commit_id: &str) -> Option<&[String]> {
        self.get(commit_id).map(Vec::as_slice)
    }
}

impl CommitFiles for HashMap<&str, Vec<String>> {
    fn files_of(&self, commit_id: &str) -> Option<&[String]> {
        self.get(commit_id).map(Vec::as_slice)
    }
}

pub trait CommitMessages {
    fn message_of(&self, commit_id: &str) -> Option<&str>;
}

impl CommitMessages for HashMap<String, String> {
    fn message_of(&self, commit_id: &str) -> Option<&str> {
        self.get(commit_id).map(String::as_str)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommitCatalog {
    order: Vec<String>,
    commits: HashMap<String, CommitInfo>,
    diffs: HashMap<(String, String), String>,
}

impl CommitCatalog {
    pub fn from_records<'a, I>(records: I) -> Self
    where
        I: IntoIterator<Item = &'a CommitFileRecord>,
    {
        let mut cat = CommitCatalog::default();
        for r in records {
            let info = cat.commits.entry(r.commit_id.clone()).or_insert_with(|| {
                cat.order.push(r.commit_id.clone());
                CommitInfo {
                    commit_id: r.commit_id.clone(),
                    commit_date: r.commit_date,
                    message: r.commit_message.clone(),
                    files: Vec::new(),
                }
            });
            if !info.files.contains(&r.file_path) {
                info.files.push(r.file_path.clone());
            }
            cat.diffs
                .entry((r.commit_id.clone(), r.file_path.clone()))
                .or_insert_with(|| r.diff.clone());
        }
        cat
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn commit(&self, commit_id: &str) -> Option<&CommitInfo> {
        self.commits.get(commit_id)
    }

    /// Commits in store order (chronological for ingested stores).
    pub fn commits(&self) -> impl Iterator<Item = &CommitInfo> {
        self.order.iter().map(|id| &self.commits[id])
    }

    pub fn diff(&self, commit_id: &str, path: &str) -> Option<&str> {
        self.diffs
            .get(&(commit_id.to_string(), path.to_string()))
            .map(String::as_str)
    }
}

/// Files alive after replaying `records`, with their last known text
/// (`None` for binary files).
pub fn live_files<'a, I>(records: I) -> BTreeMap<String, Option<String>>
where
    I: IntoIterator<Item = &'a CommitFileRecord>,
{
    let mut live = BTreeMap::new();
    for r in records {
        if let Some(prev) = &r.previous_file_path {
            live.remove(prev);
        }
        match r.status {
            FileStatus::Deleted => {
                live.remove(&r.file_path);
            }
            _ => {
                live.insert(r.file_path.clone(), r.cur_file_content.clone());
            }
        }
    }
    live
}

impl CommitFiles for CommitCatalog {
    fn files_of(&self, commit_id: &str) -> Option<&[String]> {
        self.commits.get(commit_id).map(|c| c.files.as_slice())
    }
}

impl CommitMessages for CommitCatalog {
    fn message_of(&self, commit_id: &str) -> Option<&str> {
        self.commits.get(commit_id).map(|c| c.message.as_str())
    }
}
