use std::collections::BTreeMap;

use commitsearch::bm25_index::{Bm25Params, InvertedIndex, Tokenizer};
use commitsearch::catalog::CommitCatalog;
use commitsearch::commit_store::{
    ingest_repository, read_store, snapshot, write_store, ContentSource, FileStatus, GitContents,
    IngestOptions,
};
use commitsearch::fid_map::build_fid_map;
use commitsearch::pipeline::{run_pipeline, search_files, PipelineConfig, Query, SearchContext, StageSet};
use commitsearch::rerank::{lexical_overlap_scorer, ConstantScorer};
use commitsearch::synth::{main_fixture, rename_chain_fixture, BASE_DATE};

fn ingest_fixture() -> (tempfile::TempDir, Vec<commitsearch::commit_store::CommitFileRecord>) {
    let dir = tempfile::tempdir().unwrap();
    main_fixture().write_git_repo(dir.path()).unwrap();
    let records = ingest_repository(dir.path(), &IngestOptions::default()).unwrap();
    (dir, records)
}

#[test]
fn fixture_manifest() {
    let (dir, records) = ingest_fixture();
    assert_eq!(records.len(), 14);
    let commits: Vec<&str> = records
        .iter()
        .map(|r| r.commit_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    assert_eq!(commits.len(), 10);
    assert!(records.windows(2).all(|w| w[0].commit_date <= w[1].commit_date));
    assert_eq!(records[0].commit_date, BASE_DATE);

    let mut statuses: BTreeMap<FileStatus, usize> = BTreeMap::new();
    for r in &records {
        *statuses.entry(r.status).or_default() += 1;
        r.validate().unwrap();
    }
    assert_eq!(statuses[&FileStatus::Added], 7);
    assert_eq!(statuses[&FileStatus::Modified], 4);
    assert_eq!(statuses[&FileStatus::Renamed], 2);
    assert_eq!(statuses[&FileStatus::Deleted], 1);

    let renames: Vec<(&str, &str)> = records
        .iter()
        .filter(|r| r.status == FileStatus::Renamed)
        .map(|r| (r.previous_file_path.as_deref().unwrap(), r.file_path.as_str()))
        .collect();
    assert_eq!(renames, [("a.txt", "b.txt"), ("b.txt", "c.txt")]);

    let snap = snapshot(dir.path(), None).unwrap();
    let live: Vec<&str> = snap.live_paths.iter().map(String::as_str).collect();
    assert_eq!(live, ["README.md", "c.txt", "d.txt", "docs/guide.md", "src/lexer.rs", "src/parser.rs"]);

    let replayed = commitsearch::catalog::live_files(&records);
    assert!(replayed.keys().eq(snap.live_paths.iter()));
    assert_eq!(replayed["c.txt"].as_deref(), Some("alpha notes\nsecond line\n"));

    let fids = build_fid_map(&records).unwrap();
    assert_eq!(fids.path_histogram(), BTreeMap::from([(1, 6), (3, 1)]));
    assert_eq!(fids.resolve_live("a.txt", &snap), Some("c.txt"));
    assert_eq!(fids.resolve_live("tmp.txt", &snap), None);
}

#[test]
fn ingest_matches_in_memory_records() {
    let (_dir, records) = ingest_fixture();
    let expected = main_fixture().to_records();
    let key = |r: &commitsearch::commit_store::CommitFileRecord| {
        (r.commit_date, r.file_path.clone(), r.status, r.cur_file_content.clone(), r.previous_file_path.clone())
    };
    let mut a: Vec<_> = records.iter().map(key).collect();
    let mut b: Vec<_> = expected.iter().map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn store_round_trip_is_byte_stable() {
    let (dir, records) = ingest_fixture();
    let p1 = dir.path().join("one.jsonl");
    let p2 = dir.path().join("two.jsonl");
    write_store(&records, &p1).unwrap();
    write_store(&read_store(&p1).unwrap(), &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn chain_fixture_through_git() {
    let dir = tempfile::tempdir().unwrap();
    rename_chain_fixture().write_git_repo(dir.path()).unwrap();
    let records = ingest_repository(dir.path(), &IngestOptions::default()).unwrap();
    let fids = build_fid_map(&records).unwrap();
    assert_eq!(fids.path_histogram(), BTreeMap::from([(1, 1), (3, 1)]));
}

#[test]
fn search_composition_on_fixture() {
    let (dir, records) = ingest_fixture();
    let snap = snapshot(dir.path(), None).unwrap();
    let fids = build_fid_map(&records).unwrap();
    let catalog = CommitCatalog::from_records(&records);
    let index = InvertedIndex::build(&records, Tokenizer::default(), Bm25Params::default());
    let contents = GitContents::open(dir.path(), &snap).unwrap();
    assert!(contents.content("src/parser.rs").unwrap().contains("fn parse"));
    let ctx = SearchContext::new(&index, &catalog, fids.live_view(&snap), &contents);
    let last = records.last().unwrap();

    // the fixing commit itself is masked; earlier parser commits remain
    let q = Query {
        query_id: "q".into(),
        text: "parser bug".into(),
        timestamp: last.commit_date,
        source_commit_id: Some(last.commit_id.clone()),
    };
    let cfg = PipelineConfig::default();
    let files = search_files(&q, &ctx, &cfg).unwrap();
    let order: Vec<&str> = files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(order, ["src/parser.rs", "README.md"]);
    assert!(order.iter().all(|p| snap.contains(p)));
    assert!(files[0].contributing.iter().all(|c| catalog.commit(&c.commit_id).unwrap().commit_date < q.timestamp));

    // history under old names lands on the live path
    let q = Query {
        query_id: "n".into(),
        text: "notes".into(),
        timestamp: last.commit_date + 1,
        source_commit_id: None,
    };
    let files = search_files(&q, &ctx, &cfg).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].path, "c.txt");
    assert_eq!(files[0].contributing.len(), 3);

    let masked = Query {
        timestamp: records[0].commit_date,
        ..q.clone()
    };
    assert!(search_files(&masked, &ctx, &cfg).unwrap().is_empty());

    let full = PipelineConfig {
        stages: StageSet::FULL,
        ..Default::default()
    };
    let q = Query {
        query_id: "l".into(),
        text: "lexer whitespace parser".into(),
        timestamp: last.commit_date + 1,
        source_commit_id: None,
    };
    let base = search_files(&q, &ctx, &cfg).unwrap();
    let same = run_pipeline(&q, &ctx, &full, Some(&ConstantScorer(0.0)), Some(&ConstantScorer(0.0))).unwrap();
    assert_eq!(
        base.iter().map(|f| &f.path).collect::<Vec<_>>(),
        same.iter().map(|f| &f.path).collect::<Vec<_>>()
    );
    let lexical = lexical_overlap_scorer();
    let reranked = run_pipeline(&q, &ctx, &full, Some(&lexical), Some(&lexical)).unwrap();
    let mut a: Vec<_> = base.iter().map(|f| f.path.clone()).collect();
    let mut b: Vec<_> = reranked.iter().map(|f| f.path.clone()).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}
