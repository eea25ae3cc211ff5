//! File identities that survive renames.
//!
//! Replaying the chronological record stream groups every path a file has
//! ever had under one [`FileId`]. Retrieved historical paths are then mapped
//! to the path that identity has in a given snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::commit_store::{CommitFileRecord, FileStatus, RepoSnapshot};

pub const FID_CACHE_HEADER: &str = "commitsearch-fid-cache v1";

#[derive(Debug, thiserror::Error)]
pub enum FidError {
    #[error("records out of chronological order at record {index}: {date} after {previous}")]
    OutOfOrderRecords {
        index: usize,
        date: i64,
        previous: i64,
    },
    #[error("malformed fid cache at line {line}: {reason}")]
    MalformedCache { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub path: String,
    pub first_seen: i64,
    pub last_modified: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileId {
    pub fid: usize,
    /// Every path this file has had, in order of first appearance.
    pub paths: Vec<PathEntry>,
}

impl FileId {
    pub fn has_path(&self, path: &str) -> bool {
        self.paths.iter().any(|p| p.path == path)
    }
}

/// Bidirectional FID ↔ path mapping.
///
/// A path name can belong to several identities over time (a deleted file
/// whose name is later reused); `by_path` points at the most recent owner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FidCache {
    by_path: HashMap<String, usize>,
    by_fid: Vec<FileId>,
}

#[derive(Default)]
struct Identity {
    paths: Vec<PathEntry>,
    alive: BTreeSet<String>,
    merged_into: Option<usize>,
}

impl Identity {
    fn touch(&mut self, path: &str, date: i64) {
        match self.paths.iter_mut().find(|p| p.path == path) {
            Some(p) => p.last_modified = p.last_modified.max(date),
            None => self.paths.push(PathEntry {
                path: path.to_string(),
                first_seen: date,
                last_modified: date,
            }),
        }
    }
}

#[derive(Default)]
struct Replay {
    ids: Vec<Identity>,
    owner: HashMap<String, usize>,
    alive_owner: HashMap<String, usize>,
}

impl Replay {
    fn root(&self, mut fid: usize) -> usize {
        while let Some(next) = self.ids[fid].merged_into {
            fid = next;
        }
        fid
    }

    fn alive(&self, path: &str) -> Option<usize> {
        self.alive_owner.get(path).map(|&f| self.root(f))
    }

    fn create(&mut self, path: &str, date: i64) -> usize {
        let fid = self.ids.len();
        let mut id = Identity::default();
        id.touch(path, date);
        id.alive.insert(path.to_string());
        self.ids.push(id);
        self.owner.insert(path.to_string(), fid);
        self.alive_owner.insert(path.to_string(), fid);
        fid
    }

    fn add_or_modify(&mut self, path: &str, date: i64) {
        match self.alive(path) {
            Some(fid) => self.ids[fid].touch(path, date),
            None => {
                self.create(path, date);
            }
        }
    }

    fn kill(&mut self, path: &str) -> Option<usize> {
        let fid = self.alive(path)?;
        self.alive_owner.remove(path);
        self.ids[fid].alive.remove(path);
        Some(fid)
    }

    /// Folds identity `from` into `into`.
    fn union(&mut self, into: usize, from: usize) {
        let moved = std::mem::take(&mut self.ids[from]);
        for entry in moved.paths {
            let target = &mut self.ids[into];
            match target.paths.iter_mut().find(|p| p.path == entry.path) {
                Some(p) => {
                    p.first_seen = p.first_seen.min(entry.first_seen);
                    p.last_modified = p.last_modified.max(entry.last_modified);
                }
                None => target.paths.push(entry),
            }
        }
        for path in moved.alive {
            self.ids[into].alive.insert(path.clone());
            self.alive_owner.insert(path, into);
        }
        for fid in self.owner.values_mut() {
            if *fid == from {
                *fid = into;
            }
        }
        self.ids[from].merged_into = Some(into);
        self.ids[into].paths.sort_by_key(|p| p.first_seen);
    }

    fn apply_commit(&mut self, records: &[&CommitFileRecord]) {
        // Rename sources and deletions refer to the parent state, so they
        // are released before any destination is claimed.
        let mut moves = Vec::new();
        for r in records {
            match r.status {
                FileStatus::Renamed => {
                    let prev = r.previous_file_path.as_deref().unwrap_or_default();
                    let src = self.kill(prev);
                    if src.is_none() {
                        log::warn!(
                            "rename from unknown path {prev} -> {} in {}; treating as add",
                            r.file_path,
                            r.commit_id
                        );
                    }
                    moves.push((src, r));
                }
                FileStatus::Deleted => {
                    if self.kill(&r.file_path).is_none() {
                        log::debug!("delete of untracked path {} in {}", r.file_path, r.commit_id);
                    }
                }
                _ => {}
            }
        }
        for (src, r) in moves {
            let date = r.commit_date;
            let Some(src) = src.map(|f| self.root(f)) else {
                self.add_or_modify(&r.file_path, date);
                continue;
            };
            if let Some(existing) = self.alive(&r.file_path) {
                if existing != src {
                    self.union(src, existing);
                }
            }
            let src = self.root(src);
            self.ids[src].touch(&r.file_path, date);
            self.ids[src].alive.insert(r.file_path.clone());
            self.owner.insert(r.file_path.clone(), src);
            self.alive_owner.insert(r.file_path.clone(), src);
        }
        for r in records {
            match r.status {
                FileStatus::Added => {
                    self.add_or_modify(&r.file_path, r.commit_date);
                }
                FileStatus::Modified => {
                    if self.alive(&r.file_path).is_none() {
                        log::debug!(
                            "modification of untracked path {} in {}",
                            r.file_path,
                            r.commit_id
                        );
                    }
                    self.add_or_modify(&r.file_path, r.commit_date);
                }
                _ => {}
            }
        }
    }

    fn finish(self) -> FidCache {
        let mut dense = vec![usize::MAX; self.ids.len()];
        let mut by_fid = Vec::new();
        for (old, id) in self.ids.iter().enumerate() {
            if id.merged_into.is_none() && !id.paths.is_empty() {
                dense[old] = by_fid.len();
                by_fid.push(FileId {
                    fid: by_fid.len(),
                    paths: id.paths.clone(),
                });
            }
        }
        let by_path = self
            .owner
            .iter()
            .map(|(path, &fid)| (path.clone(), dense[self.root(fid)]))
            .collect();
        FidCache { by_path, by_fid }
    }
}

/// Replays a chronological record stream into file identities.
pub fn build_fid_map<'a, I>(records: I) -> Result<FidCache, FidError>
where
    I: IntoIterator<Item = &'a CommitFileRecord>,
{
    let mut replay = Replay::default();
    let mut group: Vec<&CommitFileRecord> = Vec::new();
    let mut last_date = i64::MIN;
    for (index, r) in records.into_iter().enumerate() {
        if r.commit_date < last_date {
            return Err(FidError::OutOfOrderRecords {
                index,
                date: r.commit_date,
                previous: last_date,
            });
        }
        last_date = r.commit_date;
        if group.first().is_some_and(|g| g.commit_id != r.commit_id) {
            replay.apply_commit(&group);
            group.clear();
        }
        group.push(r);
    }
    if !group.is_empty() {
        replay.apply_commit(&group);
    }
    Ok(replay.finish())
}

impl FidCache {
    pub fn len(&self) -> usize {
        self.by_fid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_fid.is_empty()
    }

    pub fn fid_of(&self, path: &str) -> Option<usize> {
        self.by_path.get(path).copied()
    }

    pub fn file(&self, fid: usize) -> Option<&FileId> {
        self.by_fid.get(fid)
    }

    pub fn files(&self) -> &[FileId] {
        &self.by_fid
    }

    /// Paths currently owned by `fid`; a reused name belongs to its newest
    /// identity only.
    pub fn owned_paths(&self, fid: usize) -> impl Iterator<Item = &str> + '_ {
        self.by_fid
            .get(fid)
            .into_iter()
            .flat_map(|f| f.paths.iter())
            .filter(move |p| self.by_path.get(&p.path) == Some(&fid))
            .map(|p| p.path.as_str())
    }

    /// The path `fid` has in `snapshot`. With several candidates the most
    /// recently modified wins, then the lexicographically smallest.
    pub fn live_path_of(&self, fid: usize, snapshot: &RepoSnapshot) -> Option<&str> {
        let file = self.by_fid.get(fid)?;
        file.paths
            .iter()
            .filter(|p| snapshot.contains(&p.path) && self.by_path.get(&p.path) == Some(&fid))
            .min_by(|a, b| {
                b.last_modified
                    .cmp(&a.last_modified)
                    .then_with(|| a.path.cmp(&b.path))
            })
            .map(|p| p.path.as_str())
    }

    pub fn resolve_live(&self, path: &str, snapshot: &RepoSnapshot) -> Option<&str> {
        self.live_path_of(self.fid_of(path)?, snapshot)
    }

    /// Precomputes live paths for every identity under one snapshot.
    pub fn live_view(&self, snapshot: &RepoSnapshot) -> LiveView<'_> {
        let live = (0..self.by_fid.len())
            .map(|fid| self.live_path_of(fid, snapshot))
            .collect();
        LiveView { cache: self, live }
    }

    /// Number of paths per identity → number of identities.
    pub fn path_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for f in &self.by_fid {
            *hist.entry(f.paths.len()).or_insert(0) += 1;
        }
        hist
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FidError> {
        writeln!(w, "{FID_CACHE_HEADER}")?;
        for f in &self.by_fid {
            let paths: Vec<CachedPath<'_>> = f
                .paths
                .iter()
                .map(|p| CachedPath {
                    path: &p.path,
                    first_seen: p.first_seen,
                    last_modified: p.last_modified,
                    owned: self.by_path.get(&p.path) == Some(&f.fid),
                })
                .collect();
            serde_json::to_writer(&mut w, &CachedFid { fid: f.fid, paths })
                .map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<FidCache, FidError> {
        let mut lines = r.lines();
        let malformed = |line, reason: String| FidError::MalformedCache { line, reason };
        match lines.next() {
            Some(Ok(h)) if h == FID_CACHE_HEADER => {}
            Some(Ok(h)) => return Err(malformed(1, format!("unexpected header {h:?}"))),
            Some(Err(e)) => return Err(e.into()),
            None => return Err(malformed(1, "missing header".into())),
        }
        let mut cache = FidCache::default();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            let f: OwnedCachedFid =
                serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
            if f.fid != cache.by_fid.len() {
                return Err(malformed(line_no, format!("fid {} out of sequence", f.fid)));
            }
            if f.paths.is_empty() {
                return Err(malformed(line_no, "identity without paths".into()));
            }
            let mut paths = Vec::with_capacity(f.paths.len());
            for p in f.paths {
                if p.owned && cache.by_path.insert(p.path.clone(), f.fid).is_some() {
                    return Err(malformed(line_no, format!("path {} owned twice", p.path)));
                }
                paths.push(PathEntry {
                    path: p.path,
                    first_seen: p.first_seen,
                    last_modified: p.last_modified,
                });
            }
            cache.by_fid.push(FileId { fid: f.fid, paths });
        }
        Ok(cache)
    }
}

#[derive(Serialize)]
struct CachedPath<'a> {
    path: &'a str,
    first_seen: i64,
    last_modified: i64,
    owned: bool,
}

#[derive(Serialize)]
struct CachedFid<'a> {
    fid: usize,
    paths: Vec<CachedPath<'a>>,
}

#[derive(Deserialize)]
struct OwnedCachedPath {
    path: String,
    first_seen: i64,
    last_modified: i64,
    owned: bool,
}

#[derive(Deserialize)]
struct OwnedCachedFid {
    fid: usize,
    paths: Vec<OwnedCachedPath>,
}

/// Live paths of every identity under one snapshot.
pub struct LiveView<'a> {
    cache: &'a FidCache,
    live: Vec<Option<&'a str>>,
}

impl<'a> LiveView<'a> {
    pub fn resolve(&self, path: &str) -> Option<&'a str> {
        self.cache.fid_of(path).and_then(|fid| self.live[fid])
    }

    pub fn live_path_of(&self, fid: usize) -> Option<&'a str> {
        self.live.get(fid).copied().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commit_store::extension_of;

    pub(crate) fn rec(
        commit: u32,
        date: i64,
        status: FileStatus,
        path: &str,
        prev: Option<&str>,
    ) -> CommitFileRecord {
        let id = format!("{commit:040x}");
        let added = status == FileStatus::Added;
        CommitFileRecord {
            owner: "o".into(),
            repo_name: "r".into(),
            commit_date: date,
            commit_id: id,
            commit_message: String::new(),
            file_path: path.into(),
            previous_commit_id: (!added).then(|| "f".repeat(40)),
            previous_file_content: (!added).then(String::new),
            cur_file_content: (status != FileStatus::Deleted).then(String::new),
            diff: String::new(),
            status,
            is_merge: false,
            file_extension: extension_of(path),
            previous_file_path: prev.map(str::to_string),
            parent_count: 1,
        }
    }

    fn snap(paths: &[&str]) -> RepoSnapshot {
        RepoSnapshot {
            head_commit_id: "h".into(),
            live_paths: paths.iter().map(|s| s.to_string()).collect(),
        }
    }

    use FileStatus::*;

    #[test]
    fn rename_keeps_identity() {
        let recs = [
            rec(1, 1, Added, "a.txt", None),
            rec(2, 2, Renamed, "b.txt", Some("a.txt")),
        ];
        let cache = build_fid_map(&recs).unwrap();
        assert_eq!(cache.len(), 1);
        let paths: Vec<_> = cache.files()[0].paths.iter().map(|p| p.path.as_str()).collect();
        assert_eq!(paths, ["a.txt", "b.txt"]);
        let s = snap(&["b.txt"]);
        assert_eq!(cache.resolve_live("a.txt", &s), Some("b.txt"));
        assert_eq!(cache.resolve_live("b.txt", &s), Some("b.txt"));
    }

    #[test]
    fn readded_name_is_a_new_identity() {
        let recs = [
            rec(1, 1, Added, "a.txt", None),
            rec(2, 2, Deleted, "a.txt", None),
            rec(3, 3, Added, "a.txt", None),
        ];
        let cache = build_fid_map(&recs).unwrap();
        assert_eq!(cache.len(), 2);
        assert!(cache.files().iter().all(|f| f.has_path("a.txt")));
        assert_eq!(cache.fid_of("a.txt"), Some(1));
        assert_eq!(cache.live_path_of(0, &snap(&["a.txt"])), None);
        assert_eq!(cache.live_path_of(1, &snap(&["a.txt"])), Some("a.txt"));
    }

    #[test]
    fn deleted_file_resolves_to_nothing() {
        let recs = [rec(1, 1, Added, "x", None), rec(2, 2, Deleted, "x", None)];
        let cache = build_fid_map(&recs).unwrap();
        assert_eq!(cache.resolve_live("x", &snap(&["y"])), None);
        assert_eq!(cache.resolve_live("unknown", &snap(&["y"])), None);
    }

    #[test]
    fn collision_picks_recent_then_lexicographic() {
        // a rename onto a live path merges both identities
        let recs = [
            rec(1, 1, Added, "x/init.txt", None),
            rec(1, 1, Added, "z/init.txt", None),
            rec(2, 2, Added, "y/init.txt", None),
            rec(3, 3, Renamed, "y/init.txt", Some("z/init.txt")),
        ];
        let cache = build_fid_map(&recs).unwrap();
        let s = snap(&["x/init.txt", "y/init.txt"]);
        // y/init.txt last touched at 3
        let fid = cache.fid_of("y/init.txt").unwrap();
        assert_eq!(cache.live_path_of(fid, &s), Some("y/init.txt"));

        let mut c2 = FidCache::default();
        c2.by_fid.push(FileId {
            fid: 0,
            paths: vec![
                PathEntry { path: "y/init.txt".into(), first_seen: 1, last_modified: 5 },
                PathEntry { path: "x/init.txt".into(), first_seen: 2, last_modified: 5 },
            ],
        });
        c2.by_path.insert("y/init.txt".into(), 0);
        c2.by_path.insert("x/init.txt".into(), 0);
        assert_eq!(c2.resolve_live("y/init.txt", &s), Some("x/init.txt"));
    }

    #[test]
    fn rename_from_unknown_is_an_add() {
        let recs = [rec(1, 1, Renamed, "new.txt", Some("ghost.txt"))];
        let cache = build_fid_map(&recs).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.files()[0].paths.len(), 1);
        assert_eq!(cache.resolve_live("new.txt", &snap(&["new.txt"])), Some("new.txt"));
    }

    #[test]
    fn rename_and_readd_in_one_commit() {
        let recs = [
            rec(1, 1, Added, "a.txt", None),
            rec(2, 2, Added, "a.txt", None),
            rec(2, 2, Renamed, "b.txt", Some("a.txt")),
        ];
        let cache = build_fid_map(&recs).unwrap();
        assert_eq!(cache.len(), 2);
        let s = snap(&["a.txt", "b.txt"]);
        assert_eq!(cache.resolve_live("b.txt", &s), Some("b.txt"));
        assert_eq!(cache.resolve_live("a.txt", &s), Some("a.txt"));
    }

    #[test]
    fn out_of_order_rejected() {
        let recs = [rec(1, 5, Added, "a", None), rec(2, 4, Added, "b", None)];
        assert!(matches!(
            build_fid_map(&recs),
            Err(FidError::OutOfOrderRecords { index: 1, .. })
        ));
    }

    #[test]
    fn histogram() {
        assert!(FidCache::default().path_histogram().is_empty());
        let recs = [rec(1, 1, Added, "a", None), rec(2, 2, Added, "b", None)];
        let h = build_fid_map(&recs).unwrap().path_histogram();
        assert_eq!(h, BTreeMap::from([(1, 2)]));
    }

    #[test]
    fn cache_file_round_trip() {
        let recs = [
            rec(1, 1, Added, "a", None),
            rec(2, 2, Deleted, "a", None),
            rec(3, 3, Added, "a", None),
            rec(4, 4, Renamed, "b", Some("a")),
        ];
        let cache = build_fid_map(&recs).unwrap();
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        let back = FidCache::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, cache);
        let mut again = Vec::new();
        build_fid_map(&recs).unwrap().write_to(&mut again).unwrap();
        assert_eq!(buf, again);

        assert!(matches!(
            FidCache::read_from("nope\n".as_bytes()),
            Err(FidError::MalformedCache { line: 1, .. })
        ));
    }
}
