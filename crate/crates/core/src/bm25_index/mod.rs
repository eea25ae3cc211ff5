//! BM25 over commit messages, one document per commit.

mod tokenize;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::commit_store::CommitFileRecord;
pub use tokenize::{Tokenizer, TokenizerConfig, TokenizerError, TokenizerMode};

pub const INDEX_MAGIC: &str = "commitsearch-bm25";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitDocument {
    pub commit_id: String,
    pub commit_date: i64,
    pub token_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCommit {
    pub commit_id: String,
    pub score: f64,
    pub commit_date: i64,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("malformed index at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Non-negative smoothed inverse document frequency.
pub fn idf(num_docs: usize, doc_freq: usize) -> f64 {
    let n = num_docs as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    docs: Vec<CommitDocument>,
    avg_doc_len: f64,
    params: Bm25Params,
    tokenizer: Tokenizer,
}

impl InvertedIndex {
    /// Indexes `(commit_id, commit_date, message)` triples; repeated commit
    /// ids keep their first occurrence.
    pub fn from_documents<'a, I>(docs: I, tokenizer: Tokenizer, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = (&'a str, i64, &'a str)>,
    {
        let mut seen = HashSet::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut table = Vec::new();
        for (commit_id, commit_date, text) in docs {
            if !seen.insert(commit_id.to_string()) {
                continue;
            }
            let ordinal = table.len() as u32;
            let tokens = tokenizer.tokenize(text);
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push((ordinal, count));
            }
            table.push(CommitDocument {
                commit_id: commit_id.to_string(),
                commit_date,
                token_count: tokens.len() as u32,
            });
        }
        let avg_doc_len = mean_len(&table);
        InvertedIndex {
            postings,
            docs: table,
            avg_doc_len,
            params,
            tokenizer,
        }
    }

    /// One document per distinct commit of the record stream.
    pub fn build<'a, I>(records: I, tokenizer: Tokenizer, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = &'a CommitFileRecord>,
    {
        Self::from_documents(
            records
                .into_iter()
                .map(|r| (r.commit_id.as_str(), r.commit_date, r.commit_message.as_str())),
            tokenizer,
            params,
        )
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn set_params(&mut self, params: Bm25Params) {
        self.params = params;
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn documents(&self) -> &[CommitDocument] {
        &self.docs
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Top-`k` commits for `query`. Commits dated at or after `mask_after`
    /// are dropped before truncation. Ties go to the newer commit, then the
    /// smaller commit id.
    pub fn search(&self, query: &str, k: usize, mask_after: Option<i64>) -> Vec<ScoredCommit> {
        if k == 0 || self.docs.is_empty() {
            return Vec::new();
        }
        let mut terms = Vec::new();
        let mut seen = HashSet::new();
        for t in self.tokenizer.tokenize(query) {
            if seen.insert(t.clone()) {
                terms.push(t);
            }
        }

        let Bm25Params { k1, b } = self.params;
        let n = self.docs.len();
        let mut acc = vec![0.0f64; n];
        let mut hit = vec![false; n];
        let mut touched = Vec::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let w = idf(n, list.len());
            for &(ord, tf) in list {
                let doc = &self.docs[ord as usize];
                if mask_after.is_some_and(|m| doc.commit_date >= m) {
                    continue;
                }
                let tf = tf as f64;
                let norm = if self.avg_doc_len > 0.0 {
                    doc.token_count as f64 / self.avg_doc_len
                } else {
                    1.0
                };
                acc[ord as usize] += w * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * norm));
                if !hit[ord as usize] {
                    hit[ord as usize] = true;
                    touched.push(ord as usize);
                }
            }
        }

        let mut results: Vec<ScoredCommit> = touched
            .into_iter()
            .map(|i| ScoredCommit {
                commit_id: self.docs[i].commit_id.clone(),
                score: acc[i],
                commit_date: self.docs[i].commit_date,
            })
            .collect();
        let order = |a: &ScoredCommit, b: &ScoredCommit| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| b.commit_date.cmp(&a.commit_date))
                .then_with(|| a.commit_id.cmp(&b.commit_id))
        };
        if results.len() > k {
            results.select_nth_unstable_by(k - 1, order);
            results.truncate(k);
        }
        results.sort_by(order);
        results
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        let header = IndexHeader {
            magic: INDEX_MAGIC.to_string(),
            version: INDEX_VERSION,
            params: self.params,
            tokenizer: self.tokenizer.config().clone(),
            docs: self.docs.len(),
            terms: self.postings.len(),
        };
        write_line(&mut w, &header)?;
        for d in &self.docs {
            write_line(&mut w, d)?;
        }
        for entry in &self.postings {
            write_line(&mut w, &entry)?;
        }
        Ok(())
    }

    /// Loads an index written by [`InvertedIndex::write_to`]. An external
    /// vocabulary is re-read from its recorded path.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, IndexError> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), IndexError> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(IndexError::Malformed {
                    line: 0,
                    reason: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let bad = |line: usize, reason: String| IndexError::Malformed { line, reason };

        let (ln, text) = next("header")?;
        let header: IndexHeader = serde_json::from_str(&text).map_err(|e| bad(ln, e.to_string()))?;
        if header.magic != INDEX_MAGIC || header.version != INDEX_VERSION {
            return Err(bad(ln, format!("not a v{INDEX_VERSION} {INDEX_MAGIC} index")));
        }
        let tokenizer = Tokenizer::new(&header.tokenizer)?;
        let mut docs = Vec::with_capacity(header.docs);
        for _ in 0..header.docs {
            let (ln, text) = next("document")?;
            docs.push(serde_json::from_str::<CommitDocument>(&text).map_err(|e| bad(ln, e.to_string()))?);
        }
        let mut postings = BTreeMap::new();
        for _ in 0..header.terms {
            let (ln, text) = next("postings")?;
            let (term, list): (String, Vec<(u32, u32)>) =
                serde_json::from_str(&text).map_err(|e| bad(ln, e.to_string()))?;
            if list.iter().any(|&(d, _)| d as usize >= docs.len())
                || list.windows(2).any(|w| w[0].0 >= w[1].0)
            {
                return Err(bad(ln, format!("invalid postings for {term:?}")));
            }
            postings.insert(term, list);
        }
        let avg_doc_len = mean_len(&docs);
        Ok(InvertedIndex {
            postings,
            docs,
            avg_doc_len,
            params: header.params,
            tokenizer,
        })
    }
}

fn mean_len(docs: &[CommitDocument]) -> f64 {
    if docs.is_empty() {
        0.0
    } else {
        docs.iter().map(|d| d.token_count as f64).sum::<f64>() / docs.len() as f64
    }
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    magic: String,
    version: u32,
    params: Bm25Params,
    tokenizer: TokenizerConfig,
    docs: usize,
    terms: usize,
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), IndexError> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}
