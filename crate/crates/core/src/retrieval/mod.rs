//! Nearest-neighbor lookup of labeled table images by binary local
//! features.

mod orb;
mod pattern;
mod store;

pub use orb::{extract_features, Descriptor, FeatureSet, Keypoint, OrbParams};
pub use store::{NeighborInput, NeighborRecord, NeighborStore, StoreMeta, STORE_FORMAT_VERSION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::TableImage;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("only {found} keypoints found, at least {required} needed")]
    Featureless { found: usize, required: usize },
    #[error("the neighbor store is empty")]
    EmptyStore,
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("store format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MatchRule {
    /// Pairs that are each other's nearest neighbor. Symmetric.
    MutualNearest,
    /// Nearest neighbor from the first set whose distance is below `ratio`
    /// times the second-nearest. Not symmetric.
    Ratio { ratio: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// A pair matches only when its Hamming distance is below this.
    pub max_distance: u32,
    pub rule: MatchRule,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_distance: 64,
            rule: MatchRule::MutualNearest,
        }
    }
}

/// Index and distance of the closest and the distance of the second closest
/// descriptor in `set`. The lowest index wins ties.
fn nearest(d: &Descriptor, set: &[Descriptor]) -> (usize, u32, u32) {
    let (mut best, mut best_d, mut second) = (0, u32::MAX, u32::MAX);
    for (j, e) in set.iter().enumerate() {
        let dist = d.hamming(e);
        if dist < best_d {
            second = best_d;
            best = j;
            best_d = dist;
        } else if dist < second {
            second = dist;
        }
    }
    (best, best_d, second)
}

/// Descriptors of `from` whose nearest descriptor in `to` has no closer
/// partner back in `from`. Ties count as mutual, so duplicated descriptors
/// still match their copies.
fn mutual_count(from: &[Descriptor], to: &[Descriptor], max_distance: u32) -> usize {
    let back: Vec<u32> = to.iter().map(|d| nearest(d, from).1).collect();
    from.iter()
        .filter(|d| {
            let (j, dist, _) = nearest(d, to);
            dist < max_distance && back[j] == dist
        })
        .count()
}

/// Number of matched descriptor pairs divided by the smaller set size; 0
/// when either set is empty.
pub fn similarity(a: &FeatureSet, b: &FeatureSet, params: &MatchParams) -> f64 {
    let (da, db) = (&a.descriptors, &b.descriptors);
    if da.is_empty() || db.is_empty() {
        return 0.0;
    }
    let matches = match params.rule {
        MatchRule::MutualNearest => {
            mutual_count(da, db, params.max_distance).min(mutual_count(db, da, params.max_distance))
        }
        MatchRule::Ratio { ratio } => da
            .iter()
            .filter(|d| {
                let (_, d1, d2) = nearest(d, db);
                d1 < params.max_distance && (d2 == u32::MAX || (d1 as f32) < ratio * d2 as f32)
            })
            .count(),
    };
    (matches as f64 / da.len().min(db.len()) as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<'a> {
    pub record: &'a NeighborRecord,
    pub score: f64,
}

impl NeighborStore {
    /// Top `k` records by similarity to `query`, best first. Equal scores
    /// are ordered by ascending id.
    pub fn retrieve(&self, query: &FeatureSet, k: usize) -> Result<Vec<Neighbor<'_>>, RetrievalError> {
        if self.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let params = self.meta.matching;
        let mut scored: Vec<Neighbor<'_>> = self
            .records()
            .par_iter()
            .map(|r| Neighbor {
                record: r,
                score: similarity(query, &r.features, &params),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.record.id.cmp(&b.record.id)));
        scored.truncate(k.max(1));
        Ok(scored)
    }

    pub fn retrieve_image(&self, img: &TableImage, k: usize) -> Result<Vec<Neighbor<'_>>, RetrievalError> {
        if self.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let query = extract_features(&img.to_gray(), &self.meta.orb)?;
        self.retrieve(&query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(words: &[[u64; 4]]) -> FeatureSet {
        FeatureSet {
            keypoints: words
                .iter()
                .map(|_| Keypoint {
                    x: 0.0,
                    y: 0.0,
                    angle: 0.0,
                    response: 0.0,
                    octave: 0,
                })
                .collect(),
            descriptors: words.iter().map(|w| Descriptor(*w)).collect(),
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let f = set(&[[1, 2, 3, 4], [u64::MAX, 0, 0, 0], [0, u64::MAX, 7, 0]]);
        assert_eq!(similarity(&f, &f, &MatchParams::default()), 1.0);
    }

    #[test]
    fn distant_sets_score_zero() {
        let a = set(&[[0, 0, 0, 0]]);
        let b = set(&[[u64::MAX, 0, 0, 0]]);
        assert_eq!(similarity(&a, &b, &MatchParams::default()), 0.0);
        assert_eq!(similarity(&a, &FeatureSet::default(), &MatchParams::default()), 0.0);
    }

    #[test]
    fn mutual_matching_requires_both_directions() {
        // both entries of `a` prefer b[0], which prefers a[0]
        let a = set(&[[0, 0, 0, 0], [1, 0, 0, 0]]);
        let b = set(&[[0, 0, 0, 0], [0xFFFF_FFFF, 0, 0, 0]]);
        let p = MatchParams::default();
        assert_eq!(similarity(&a, &b, &p), 0.5);
        assert_eq!(similarity(&b, &a, &p), 0.5);
    }

    #[test]
    fn duplicated_descriptors_still_match_their_copy() {
        let f = set(&[[5, 0, 0, 0], [5, 0, 0, 0], [9, 9, 9, 9]]);
        assert_eq!(similarity(&f, &f, &MatchParams::default()), 1.0);
        // three copies on one side, one on the other: a single pair
        let a = set(&[[5, 0, 0, 0], [5, 0, 0, 0], [5, 0, 0, 0]]);
        let b = set(&[[5, 0, 0, 0], [u64::MAX, u64::MAX, 0, 0]]);
        let p = MatchParams::default();
        assert_eq!(similarity(&a, &b, &p), 0.5);
        assert_eq!(similarity(&b, &a, &p), 0.5);
    }
}
