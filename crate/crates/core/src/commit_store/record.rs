use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Change kind of one file in one commit, using GitHub API wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileStatus {
    Modified,
    Added,
    Deleted,
    Renamed,
}

impl FileStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FileStatus::Modified => "modified",
            FileStatus::Added => "added",
            FileStatus::Deleted => "deleted",
            FileStatus::Renamed => "renamed",
        }
    }
}

impl fmt::Display for FileStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FileStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modified" => Ok(FileStatus::Modified),
            "added" => Ok(FileStatus::Added),
            "deleted" => Ok(FileStatus::Deleted),
            "renamed" => Ok(FileStatus::Renamed),
            other => Err(format!("unknown file status `{other}`")),
        }
    }
}

/// Marker git prints instead of a textual patch for binary blobs.
pub const BINARY_DIFF_MARKER: &str = "Binary files";

/// One (commit, file) event of a repository's history.
///
/// Field declaration order is the canonical serialization order of the store
/// format, so do not reorder fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitFileRecord {
    pub owner: String,
    pub repo_name: String,
    pub commit_date: i64,
    pub commit_id: String,
    pub commit_message: String,
    pub file_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_commit_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_file_content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cur_file_content: Option<String>,
    pub diff: String,
    pub status: FileStatus,
    pub is_merge: bool,
    pub file_extension: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_file_path: Option<String>,
    /// Raw number of parents of `commit_id`; `is_merge` is `parent_count >= 2`.
    pub parent_count: u32,
}

/// A violated record invariant: the offending field and a reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantViolation {
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

pub fn is_commit_id(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Lowercased extension without the dot, empty when the path has none.
pub fn extension_of(path: &str) -> String {
    std::path::Path::new(path)
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default()
}

impl CommitFileRecord {
    pub fn is_binary(&self) -> bool {
        self.diff
            .lines()
            .any(|l| l.starts_with(BINARY_DIFF_MARKER) && l.ends_with("differ"))
    }

    /// Checks the status/field coupling rules. Binary files keep their record
    /// but carry no contents.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        let fail = |field, reason: &str| {
            Err(InvariantViolation {
                field,
                reason: reason.to_string(),
            })
        };
        if !is_commit_id(&self.commit_id) {
            return fail("commit_id", "expected 40 lowercase hex digits");
        }
        if self.commit_date <= 0 {
            return fail("commit_date", "must be positive");
        }
        if self.file_path.is_empty() {
            return fail("file_path", "must not be empty");
        }
        if self.is_merge != (self.parent_count >= 2) {
            return fail("is_merge", "inconsistent with parent_count");
        }
        let added = self.status == FileStatus::Added;
        match &self.previous_commit_id {
            Some(_) if added => {
                return fail("previous_commit_id", "must be absent for added files")
            }
            Some(id) if !is_commit_id(id) => {
                return fail("previous_commit_id", "expected 40 lowercase hex digits");
            }
            None if !added => return fail("previous_commit_id", "required unless added"),
            _ => {}
        }
        let binary = self.is_binary();
        match (&self.previous_file_content, added) {
            (Some(_), true) => {
                return fail("previous_file_content", "must be absent for added files")
            }
            (None, false) if !binary => {
                return fail("previous_file_content", "required unless added")
            }
            (Some(_), false) if binary => {
                return fail("previous_file_content", "binary files carry no contents")
            }
            _ => {}
        }
        let deleted = self.status == FileStatus::Deleted;
        match (&self.cur_file_content, deleted) {
            (Some(_), true) => return fail("cur_file_content", "must be absent for deleted files"),
            (None, false) if !binary => {
                return fail("cur_file_content", "required unless deleted")
            }
            (Some(_), false) if binary => {
                return fail("cur_file_content", "binary files carry no contents")
            }
            _ => {}
        }
        let renamed = self.status == FileStatus::Renamed;
        if self.previous_file_path.is_some() != renamed {
            return fail("previous_file_path", "present iff status is renamed");
        }
        if self.file_extension != extension_of(&self.file_path) {
            return fail("file_extension", "does not match file_path");
        }
        Ok(())
    }
}
