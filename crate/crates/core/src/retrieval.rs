//! Ranked retrieval lists shared by descriptor search and ground-truth rankings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::ImageId;
use crate::pose_approx::GlobalDescriptor;

/// Longest retrieval list considered anywhere in the benchmark.
pub const MAX_K: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub db: ImageId,
    pub score: f64,
}

/// Per-query ordered database images, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub per_query: BTreeMap<ImageId, Vec<RankedEntry>>,
}

impl Ranking {
    pub fn get(&self, query: ImageId) -> &[RankedEntry] {
        self.per_query.get(&query).map_or(&[], Vec::as_slice)
    }

    /// Top-`k` database ids for a query (fewer if the list is shorter).
    pub fn top_k(&self, query: ImageId, k: usize) -> Vec<ImageId> {
        self.get(query).iter().take(k).map(|e| e.db).collect()
    }

    pub fn truncate(&mut self, k: usize) {
        for list in self.per_query.values_mut() {
            list.truncate(k);
        }
    }
}

/// Sorts candidates by score (descending when `higher_is_better`), ties broken
/// by ascending database id, and keeps the first `limit`.
pub fn sort_candidates(mut candidates: Vec<RankedEntry>, higher_is_better: bool, limit: usize) -> Vec<RankedEntry> {
    candidates.sort_by(|a, b| {
        let by_score = if higher_is_better { b.score.total_cmp(&a.score) } else { a.score.total_cmp(&b.score) };
        by_score.then(a.db.cmp(&b.db))
    });
    candidates.truncate(limit);
    candidates
}

/// Ranks database images by cosine similarity of global descriptors.
pub fn rank_by_descriptor(
    queries: &BTreeMap<ImageId, GlobalDescriptor>,
    database: &BTreeMap<ImageId, GlobalDescriptor>,
    limit: usize,
) -> Ranking {
    let per_query = queries
        .iter()
        .map(|(&q, dq)| {
            let candidates = database.iter().map(|(&db, d)| RankedEntry { db, score: dq.cosine(d) }).collect();
            (q, sort_candidates(candidates, true, limit))
        })
        .collect();
    Ranking { per_query }
}
