//! Localization accuracy bins and retrieval metrics (P@k, R@k, mAP).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ImageId;
use crate::map_localize::LocalizationResult;
use crate::retrieval::Ranking;

/// Ordered (meters, degrees) accuracy bins, finest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyThresholds(Vec<(f64, f64)>);

impl Default for AccuracyThresholds {
    fn default() -> Self {
        Self(vec![(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)])
    }
}

impl AccuracyThresholds {
    /// Rejects lists that are empty or not strictly increasing in both components.
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("no accuracy thresholds".into()));
        }
        if pairs.iter().any(|&(m, d)| !(m > 0.0 && d > 0.0)) {
            return Err(Error::InvalidInput("accuracy thresholds must be positive".into()));
        }
        if pairs.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(Error::InvalidInput("accuracy thresholds must increase strictly".into()));
        }
        Ok(Self(pairs))
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.0
    }
}

/// Percentage of queries with `c_error < meters` and `r_error < degrees`.
/// Failed queries and queries without a reference error count as not localized.
pub fn localized_percentage(results: &[LocalizationResult], meters: f64, degrees: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let hits = results
        .iter()
        .filter(|r| r.is_success() && r.error.is_some_and(|e| e.within(meters, degrees)))
        .count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

fn hits_in_top_k(ranked: &[ImageId], relevant: &BTreeSet<ImageId>, k: usize) -> usize {
    ranked.iter().take(k).filter(|id| relevant.contains(id)).count()
}

/// Fraction of the top `k` entries that are relevant. Short lists keep the
/// denominator `k`.
pub fn precision_at_k(ranked: &[ImageId], relevant: &BTreeSet<ImageId>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    Ok(hits_in_top_k(ranked, relevant, k) as f64 / k as f64)
}

/// Mean P@k over queries that have at least one relevant image.
pub fn mean_precision_at_k(
    ranking: &Ranking,
    relevant: &BTreeMap<ImageId, BTreeSet<ImageId>>,
    k: usize,
) -> Result<f64> {
    let eligible: Vec<_> = relevant.iter().filter(|(_, r)| !r.is_empty()).collect();
    if eligible.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut total = 0.0;
    for (&q, rel) in &eligible {
        total += precision_at_k(&ranking.top_k(q, k), rel, k)?;
    }
    Ok(total / eligible.len() as f64)
}

/// Fraction of queries with at least one relevant image in the top `k`.
/// Queries whose relevant set is empty are left out of the denominator.
pub fn recall_at_k(
    ranking: &Ranking,
    relevant: &BTreeMap<ImageId, BTreeSet<ImageId>>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut eligible = 0usize;
    let mut hit = 0usize;
    for (&q, rel) in relevant {
        if rel.is_empty() {
            continue;
        }
        eligible += 1;
        if hits_in_top_k(&ranking.top_k(q, k), rel, k) > 0 {
            hit += 1;
        }
    }
    if eligible == 0 {
        return Err(Error::EmptyQuerySet);
    }
    Ok(hit as f64 / eligible as f64)
}

/// Average precision of one ranked list: mean of P@rank over the relevant
/// hits, divided by the total number of relevant images.
pub fn average_precision(ranked: &[ImageId], relevant: &BTreeSet<ImageId>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

/// Mean AP over queries; queries with no relevant image are skipped with a warning.
pub fn mean_average_precision(ranking: &Ranking, relevant: &BTreeMap<ImageId, BTreeSet<ImageId>>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for (&q, rel) in relevant {
        let ranked: Vec<ImageId> = ranking.get(q).iter().map(|e| e.db).collect();
        match average_precision(&ranked, rel) {
            Some(ap) => {
                total += ap;
                n += 1;
            }
            None => {
                log::debug!("query {q} has no relevant database image");
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::info!("{skipped} queries without a relevant database image skipped in mAP");
    }
    if n == 0 {
        return Err(Error::EmptyQuerySet);
    }
    Ok(total / n as f64)
}

/// One metric as a function of k, for one ranking source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: String,
    pub feature: String,
    pub values: BTreeMap<usize, f64>,
}

impl MetricSeries {
    pub fn new(metric: impl Into<String>, feature: impl Into<String>) -> Self {
        Self { metric: metric.into(), feature: feature.into(), values: BTreeMap::new() }
    }

    pub fn insert(&mut self, k: usize, value: f64) {
        self.values.insert(k, value);
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.values.get(&k).copied()
    }
}
