//! Repository history as a replayable stream of (commit, file) records.

mod git;
mod io;
mod record;

use std::path::PathBuf;

pub use git::{ingest_repository, snapshot, ContentSource, GitContents, IngestOptions, RepoSnapshot};
pub use io::{read_store, write_records, write_store, StoreReader};
pub use record::{extension_of, is_commit_id, CommitFileRecord, FileStatus, InvariantViolation};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("not a git repository: {0}")]
    NotAGitRepository(PathBuf),
    #[error("git {command} failed (status {status:?}): {stderr}")]
    GitInvocationFailed {
        command: String,
        status: Option<i32>,
        stderr: String,
    },
    #[error("corrupt history: {0}")]
    CorruptHistory(String),
    #[error("unknown commit: {0}")]
    UnknownCommit(String),
    #[error("malformed record at line {line}, field `{field}`: {reason}")]
    MalformedRecord {
        line: usize,
        field: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
