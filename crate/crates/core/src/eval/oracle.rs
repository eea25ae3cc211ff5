use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("depth {depth} cannot hold {relevant} relevant files")]
    DepthTooSmall { depth: usize, relevant: usize },
    #[error("need {needed} distractors, have {available}")]
    NotEnoughDistractors { needed: usize, available: usize },
}

/// Stable per-key seed derived from a run seed.
pub fn seed_for(seed: u64, key: &str) -> u64 {
    let h = key
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    seed ^ h
}

/// A ranking of exactly `depth` paths with every relevant path at a uniformly
/// random distinct position and distractors, in the given order, elsewhere.
/// Distractors that are themselves relevant are skipped.
pub fn make_oracle_prerank<S: AsRef<str>>(
    relevant: &[S],
    distractors: &[S],
    depth: usize,
    seed: u64,
) -> Result<Vec<String>, OracleError> {
    if relevant.len() > depth {
        return Err(OracleError::DepthTooSmall {
            depth,
            relevant: relevant.len(),
        });
    }
    let needed = depth - relevant.len();
    let mut pool = distractors
        .iter()
        .map(AsRef::as_ref)
        .filter(|d| !relevant.iter().any(|r| r.as_ref() == *d));
    let fill: Vec<&str> = pool.by_ref().take(needed).collect();
    if fill.len() < needed {
        return Err(OracleError::NotEnoughDistractors {
            needed,
            available: fill.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = sample(&mut rng, depth, relevant.len()).into_vec();
    let mut slots: Vec<Option<String>> = vec![None; depth];
    for (r, pos) in relevant.iter().zip(positions) {
        slots[pos] = Some(r.as_ref().to_string());
    }
    let mut fill = fill.into_iter();
    Ok(slots
        .into_iter()
        .map(|s| s.unwrap_or_else(|| fill.next().expect("counted above").to_string()))
        .collect())
}
