use std::collections::{BTreeMap, BTreeSet};

use locbench::geometry::{Pose, PoseError};
use locbench::map_localize::{Failure, LocalizationResult};
use locbench::metrics::{localized_percentage, precision_at_k, recall_at_k, AccuracyThresholds};
use locbench::retrieval::{RankedEntry, Ranking};
use locbench::ImageId;
use proptest::prelude::*;

/// Ranked lists over `n_db` database images plus relevance sets, per query.
fn instance() -> impl Strategy<Value = (Ranking, BTreeMap<ImageId, BTreeSet<ImageId>>)> {
    (2usize..20, 1usize..8).prop_flat_map(|(n_db, n_q)| {
        let list = Just((0..n_db as u32).collect::<Vec<_>>()).prop_shuffle();
        let rel = prop::collection::btree_set(0..n_db as u32, 0..n_db);
        prop::collection::vec((list, rel), n_q).prop_map(|per_query| {
            let mut ranking = Ranking::default();
            let mut relevant = BTreeMap::new();
            for (q, (order, rel)) in per_query.into_iter().enumerate() {
                let q = ImageId(1000 + q as u32);
                let entries = order.iter().enumerate().map(|(i, &d)| RankedEntry { db: ImageId(d), score: i as f64 }).collect();
                ranking.per_query.insert(q, entries);
                relevant.insert(q, rel.into_iter().map(ImageId).collect());
            }
            (ranking, relevant)
        })
    })
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k((ranking, relevant) in instance()) {
        if relevant.values().all(|r| r.is_empty()) {
            return Ok(());
        }
        let mut last = 0.0;
        for k in 1..=20 {
            let r = recall_at_k(&ranking, &relevant, k).unwrap();
            prop_assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn hit_count_is_monotone_in_k((ranking, relevant) in instance()) {
        for (q, rel) in &relevant {
            let ranked = ranking.top_k(*q, usize::MAX);
            let mut last = 0.0;
            for k in 1..=20 {
                let hits = precision_at_k(&ranked, rel, k).unwrap() * k as f64;
                prop_assert!(hits >= last - 1e-12);
                last = hits;
            }
        }
    }

    #[test]
    fn localized_percentage_grows_with_thresholds(errors in prop::collection::vec(prop::option::of((0.0f64..10.0, 0.0f64..30.0)), 1..50)) {
        let results: Vec<LocalizationResult> = errors
            .iter()
            .enumerate()
            .map(|(i, e)| match e {
                Some((m, d)) => {
                    let mut r = LocalizationResult::success(ImageId(i as u32), Pose::identity(), 20);
                    r.error = Some(PoseError { c_error: *m, r_error: *d });
                    r
                }
                None => LocalizationResult::failed(ImageId(i as u32), Failure::NoConsensus),
            })
            .collect();
        let mut last = 0.0;
        for &(m, d) in AccuracyThresholds::default().pairs() {
            let p = localized_percentage(&results, m, d).unwrap();
            prop_assert!(p >= last);
            last = p;
        }
    }
}
