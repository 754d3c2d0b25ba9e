//! TIPI perceived-personality scoring.

use serde::{Deserialize, Serialize};

use super::{ElicitationError, TraitDimension};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipiRating {
    pub identity: String,
    pub dimension: TraitDimension,
    pub positive_item_scores: Vec<u8>,
    pub negative_item_scores: Vec<u8>,
    pub final_score: f64,
}

/// Average of `(positive + (8 - negative)) / 2` over runs.
pub fn score_tipi(
    identity: &str,
    dimension: TraitDimension,
    runs: &[(u8, u8)],
) -> Result<TipiRating, ElicitationError> {
    if runs.is_empty() {
        return Err(ElicitationError::NoRuns(identity.to_string()));
    }
    for &(p, n) in runs {
        for s in [p, n] {
            if !(1..=7).contains(&s) {
                return Err(ElicitationError::ScoreOutOfRange(s));
            }
        }
    }
    let total: f64 = runs
        .iter()
        .map(|&(p, n)| (f64::from(p) + f64::from(8 - n)) / 2.0)
        .sum();
    Ok(TipiRating {
        identity: identity.to_string(),
        dimension,
        positive_item_scores: runs.iter().map(|r| r.0).collect(),
        negative_item_scores: runs.iter().map(|r| r.1).collect(),
        final_score: total / runs.len() as f64,
    })
}

/// First integer in 1..=7 appearing in the reply.
pub fn parse_tipi_answer(reply: &str) -> Option<u8> {
    reply
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .find_map(|s| s.parse::<u8>().ok().filter(|v| (1..=7).contains(v)))
}
