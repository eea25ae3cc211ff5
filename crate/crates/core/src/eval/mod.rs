//! Ranking metrics, run and qrels files, and evaluation reports.

mod metrics;
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use metrics::{average_precision, precision_at_k, recall_at_k, reciprocal_rank, MapConvention};
pub use oracle::{make_oracle_prerank, seed_for, OracleError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("run line {line}: {reason}")]
    MalformedRun { line: usize, reason: String },
    #[error("qrels line {line}: {reason}")]
    MalformedQrels { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Query id to relevant live paths.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

/// Query id to ranked `(path, score)` pairs, best first.
pub type Run = BTreeMap<String, Vec<(String, f64)>>;

// Run and qrels columns are whitespace separated; paths are escaped so that
// names containing spaces survive.
fn escape(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    for c in path.chars() {
        match c {
            '%' => out.push_str("%25"),
            c if c.is_whitespace() => {
                let mut buf = [0u8; 4];
                for b in c.encode_utf8(&mut buf).bytes() {
                    let _ = write!(out, "%{b:02X}");
                }
            }
            c => out.push(c),
        }
    }
    out
}

fn unescape(field: &str) -> Option<String> {
    if !field.contains('%') {
        return Some(field.to_string());
    }
    let bytes = field.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = field.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// Appends one query's ranking as `qid Q0 path rank score tag` lines.
pub fn write_run_query<W: Write, S: AsRef<str>>(
    w: &mut W,
    query_id: &str,
    ranking: &[(S, f64)],
    tag: &str,
) -> std::io::Result<()> {
    for (i, (path, score)) in ranking.iter().enumerate() {
        writeln!(
            w,
            "{} Q0 {} {} {:.6} {}",
            escape(query_id),
            escape(path.as_ref()),
            i + 1,
            score,
            escape(tag)
        )?;
    }
    Ok(())
}

pub fn write_run<W: Write>(w: &mut W, run: &Run, tag: &str) -> std::io::Result<()> {
    for (qid, ranking) in run {
        write_run_query(w, qid, ranking, tag)?;
    }
    w.flush()
}

/// Reads a run file; each query's entries are ordered by their rank column.
pub fn read_run<R: BufRead>(r: R) -> Result<Run, EvalError> {
    let mut ranked: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let bad = |reason: &str| EvalError::MalformedRun {
            line: i + 1,
            reason: reason.to_string(),
        };
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(bad(&format!("expected 6 columns, found {}", cols.len())));
        }
        let qid = unescape(cols[0]).ok_or_else(|| bad("bad escape in query id"))?;
        let path = unescape(cols[2]).ok_or_else(|| bad("bad escape in path"))?;
        let rank: usize = cols[3].parse().map_err(|_| bad("rank is not a positive integer"))?;
        let score: f64 = cols[4].parse().map_err(|_| bad("score is not a number"))?;
        if rank == 0 || !score.is_finite() {
            return Err(bad("rank must be >= 1 and score finite"));
        }
        let entries = ranked.entry(qid).or_default();
        if entries.iter().any(|(r, p, _)| *r == rank || *p == path) {
            return Err(bad("duplicate rank or path within query"));
        }
        entries.push((rank, path, score));
    }
    Ok(ranked
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by_key(|e| e.0);
            (q, v.into_iter().map(|(_, p, s)| (p, s)).collect())
        })
        .collect())
}

pub fn write_qrels<W: Write>(w: &mut W, qrels: &Qrels) -> std::io::Result<()> {
    for (qid, paths) in qrels {
        for p in paths {
            writeln!(w, "{} 0 {} 1", escape(qid), escape(p))?;
        }
    }
    w.flush()
}

/// Reads `qid 0 path relevance` lines; zero-relevance lines are ignored.
pub fn read_qrels<R: BufRead>(r: R) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let bad = |reason: &str| EvalError::MalformedQrels {
            line: i + 1,
            reason: reason.to_string(),
        };
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(bad(&format!("expected 4 columns, found {}", cols.len())));
        }
        let grade: i64 = cols[3].parse().map_err(|_| bad("relevance is not an integer"))?;
        let qid = unescape(cols[0]).ok_or_else(|| bad("bad escape in query id"))?;
        let path = unescape(cols[2]).ok_or_else(|| bad("bad escape in path"))?;
        let set = qrels.entry(qid).or_default();
        if grade > 0 {
            set.insert(path);
        }
    }
    qrels.retain(|_, v| !v.is_empty());
    Ok(qrels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub precision: Vec<usize>,
    pub recall: Vec<usize>,
    /// Depth for average precision and reciprocal rank.
    pub depth: usize,
    pub map_convention: MapConvention,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Cutoffs {
            precision: vec![1, 5, 10, 20],
            recall: vec![1, 10, 20, 100, 500, 1000],
            depth: 1000,
            map_convention: MapConvention::Retrieved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map: f64,
    pub mrr: f64,
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
}

impl Metrics {
    fn zero(cutoffs: &Cutoffs) -> Self {
        Metrics {
            map: 0.0,
            mrr: 0.0,
            precision: cutoffs.precision.iter().map(|&k| (k, 0.0)).collect(),
            recall: cutoffs.recall.iter().map(|&k| (k, 0.0)).collect(),
        }
    }
}

pub fn query_metrics<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, cutoffs: &Cutoffs) -> Metrics {
    let top = &ranking[..ranking.len().min(cutoffs.depth)];
    Metrics {
        map: average_precision(top, relevant, cutoffs.depth, cutoffs.map_convention),
        mrr: reciprocal_rank(top, relevant),
        precision: cutoffs
            .precision
            .iter()
            .map(|&k| (k, precision_at_k(ranking, relevant, k)))
            .collect(),
        recall: cutoffs
            .recall
            .iter()
            .map(|&k| (k, recall_at_k(ranking, relevant, k)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query_id: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    pub mean: Metrics,
    pub per_query: Vec<QueryReport>,
}

/// Macro-averaged metrics over every query in `qrels`. Queries absent from
/// the run score zero; run queries without qrels are ignored.
pub fn evaluate_run(run: &Run, qrels: &Qrels, cutoffs: &Cutoffs) -> EvalReport {
    for qid in run.keys().filter(|q| !qrels.contains_key(*q)) {
        log::warn!("run query {qid} has no qrels; ignored");
    }
    let per_query: Vec<QueryReport> = qrels
        .iter()
        .map(|(qid, relevant)| {
            let metrics = match run.get(qid) {
                Some(ranking) => {
                    let paths: Vec<&str> = ranking.iter().map(|(p, _)| p.as_str()).collect();
                    query_metrics(&paths, relevant, cutoffs)
                }
                None => {
                    log::warn!("query {qid} missing from run; scored 0");
                    Metrics::zero(cutoffs)
                }
            };
            QueryReport {
                query_id: qid.clone(),
                metrics,
            }
        })
        .collect();
    let n = per_query.len();
    let mut mean = Metrics::zero(cutoffs);
    if n > 0 {
        for q in &per_query {
            mean.map += q.metrics.map;
            mean.mrr += q.metrics.mrr;
            for (k, v) in &q.metrics.precision {
                *mean.precision.get_mut(k).expect("same cutoffs") += v;
            }
            for (k, v) in &q.metrics.recall {
                *mean.recall.get_mut(k).expect("same cutoffs") += v;
            }
        }
        let n = n as f64;
        mean.map /= n;
        mean.mrr /= n;
        mean.precision.values_mut().for_each(|v| *v /= n);
        mean.recall.values_mut().for_each(|v| *v /= n);
    }
    EvalReport {
        queries: n,
        mean,
        per_query,
    }
}

impl EvalReport {
    fn columns(&self) -> Vec<String> {
        let mut cols = vec!["MAP".to_string(), "MRR".to_string()];
        cols.extend(self.mean.precision.keys().map(|k| format!("P@{k}")));
        cols.extend(self.mean.recall.keys().map(|k| format!("R@{k}")));
        cols
    }

    fn values(m: &Metrics) -> Vec<f64> {
        let mut v = vec![m.map, m.mrr];
        v.extend(m.precision.values());
        v.extend(m.recall.values());
        v
    }

    /// Aligned table, one row per label.
    pub fn to_table(&self, label: &str, per_query: bool) -> String {
        let cols = self.columns();
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        if per_query {
            rows.extend(self.per_query.iter().map(|q| (q.query_id.clone(), Self::values(&q.metrics))));
        }
        rows.push((format!("{label} (n={})", self.queries), Self::values(&self.mean)));
        let first = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
        let widths: Vec<usize> = cols.iter().map(|c| c.len().max(6)).collect();
        let mut out = format!("{:<first$}", "query");
        for (c, w) in cols.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        for (name, vals) in rows {
            let _ = write!(out, "{name:<first$}");
            for (v, w) in vals.iter().zip(&widths) {
                let _ = write!(out, "  {v:>w$.4}");
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per query, then one for the mean.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for q in &self.per_query {
            serde_json::to_writer(&mut *w, q)?;
            w.write_all(b"\n")?;
        }
        let mean = QueryReport {
            query_id: "all".into(),
            metrics: self.mean.clone(),
        };
        serde_json::to_writer(&mut *w, &mean)?;
        w.write_all(b"\n")?;
        w.flush()
    }
}
