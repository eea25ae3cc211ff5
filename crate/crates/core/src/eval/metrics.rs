use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

/// Denominator used by average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapConvention {
    /// Relevant files retrieved within the cutoff.
    #[default]
    Retrieved,
    /// All relevant files.
    Standard,
}

impl std::str::FromStr for MapConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieved" => Ok(MapConvention::Retrieved),
            "standard" => Ok(MapConvention::Standard),
            other => Err(format!("unknown MAP convention `{other}` (retrieved, standard)")),
        }
    }
}

// Repeated entries only count at their first position.
fn relevant_positions<'a, S: AsRef<str>>(
    ranking: &'a [S],
    relevant: &'a BTreeSet<String>,
) -> impl Iterator<Item = usize> + 'a {
    let mut seen: HashSet<&'a str> = HashSet::new();
    ranking.iter().enumerate().filter_map(move |(i, p)| {
        let p: &'a str = p.as_ref();
        (relevant.contains(p) && seen.insert(p)).then_some(i)
    })
}

fn hits<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> usize {
    relevant_positions(ranking, relevant).take_while(|&i| i < k).count()
}

/// Relevant hits in the top `k`, divided by `k` even when fewer were retrieved.
pub fn precision_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits(ranking, relevant, k) as f64 / k as f64
}

pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits(ranking, relevant, k) as f64 / relevant.len() as f64
}

pub fn reciprocal_rank<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> f64 {
    relevant_positions(ranking, relevant)
        .next()
        .map_or(0.0, |j| 1.0 / (j + 1) as f64)
}

/// Mean of precision at each relevant position within the top `k`. Zero when
/// nothing relevant was retrieved.
pub fn average_precision<S: AsRef<str>>(
    ranking: &[S],
    relevant: &BTreeSet<String>,
    k: usize,
    convention: MapConvention,
) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for i in relevant_positions(ranking, relevant).take_while(|&i| i < k) {
        found += 1;
        sum += found as f64 / (i + 1) as f64;
    }
    let denom = match convention {
        MapConvention::Retrieved => found,
        MapConvention::Standard => relevant.len(),
    };
    if found == 0 || denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}
