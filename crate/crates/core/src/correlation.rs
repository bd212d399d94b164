//! Pearson and Spearman correlation between retrieval metrics and
//! localization performance, per query and per dataset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ImageId;

/// Relative variance below which a series counts as constant.
const ZERO_VARIANCE: f64 = 1e-24;

/// Pearson correlation; `None` when either variable has zero variance.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<Option<f64>> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!("correlation needs 2 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in correlation input".into()));
    }
    let n = pairs.len() as f64;
    let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        let (da, db) = (a - mean_a, b - mean_b);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let scale_a = pairs.iter().map(|p| p.0 * p.0).sum::<f64>().max(f64::MIN_POSITIVE);
    let scale_b = pairs.iter().map(|p| p.1 * p.1).sum::<f64>().max(f64::MIN_POSITIVE);
    if saa <= ZERO_VARIANCE * scale_a || sbb <= ZERO_VARIANCE * scale_b {
        return Ok(None);
    }
    Ok(Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson on average ranks.
pub fn spearman(pairs: &[(f64, f64)]) -> Result<Option<f64>> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!("correlation needs 2 pairs, got {}", pairs.len())));
    }
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ranked: Vec<(f64, f64)> = average_ranks(&a).into_iter().zip(average_ranks(&b)).collect();
    pearson(&ranked)
}

/// Summary of a coefficient distribution for violin plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    /// Quantiles at 5, 25, 50, 75 and 95 percent (linear interpolation).
    pub quantiles: [f64; 5],
    /// 20 equal bins over `[-1, 1]`; the last bin is closed.
    pub histogram: Vec<usize>,
}

pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
pub const HISTOGRAM_BINS: usize = 20;

pub fn summarize(values: &[f64]) -> Option<Distribution> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let mut histogram = vec![0; HISTOGRAM_BINS];
    for &v in values {
        let bin = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor().clamp(0.0, (HISTOGRAM_BINS - 1) as f64);
        histogram[bin as usize] += 1;
    }
    Some(Distribution { count: values.len(), quantiles: QUANTILE_LEVELS.map(quantile), histogram })
}

/// Per-query Pearson coefficients across k for one feature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerQueryCorrelation {
    pub coefficients: BTreeMap<ImageId, f64>,
    /// Queries with zero variance or fewer than two usable k values.
    pub undefined: Vec<ImageId>,
    pub distribution: Option<Distribution>,
}

/// Per query, Pearson over `k_grid` between metric A and metric B.
///
/// `b` may lack some k (a failed localization has no pose error); those k are
/// left out for that query.
pub fn correlate_per_query(
    a: &BTreeMap<ImageId, BTreeMap<usize, f64>>,
    b: &BTreeMap<ImageId, BTreeMap<usize, f64>>,
    k_grid: &[usize],
) -> Result<PerQueryCorrelation> {
    let mut out = PerQueryCorrelation::default();
    for (&q, series_a) in a {
        let series_b = b.get(&q);
        let pairs: Vec<(f64, f64)> = k_grid
            .iter()
            .filter_map(|k| Some((*series_a.get(k)?, *series_b?.get(k)?)))
            .collect();
        let coeff = if pairs.len() < 2 { None } else { pearson(&pairs)? };
        match coeff {
            Some(c) => {
                out.coefficients.insert(q, c);
            }
            None => out.undefined.push(q),
        }
    }
    let values: Vec<f64> = out.coefficients.values().copied().collect();
    out.distribution = summarize(&values);
    Ok(out)
}

/// Dataset-level coefficients: Pearson across k for each feature and
/// Spearman across features for each k.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerDatasetCorrelation {
    pub pearson_per_feature: BTreeMap<String, Option<f64>>,
    pub spearman_per_k: BTreeMap<usize, Option<f64>>,
}

pub fn correlate_per_dataset(
    a: &BTreeMap<String, BTreeMap<usize, f64>>,
    b: &BTreeMap<String, BTreeMap<usize, f64>>,
    k_grid: &[usize],
) -> Result<PerDatasetCorrelation> {
    let mut out = PerDatasetCorrelation::default();
    for (feature, series_a) in a {
        let Some(series_b) = b.get(feature) else { continue };
        let pairs: Vec<(f64, f64)> = k_grid
            .iter()
            .filter_map(|k| Some((*series_a.get(k)?, *series_b.get(k)?)))
            .collect();
        let coeff = if pairs.len() < 2 { None } else { pearson(&pairs)? };
        out.pearson_per_feature.insert(feature.clone(), coeff);
    }
    for &k in k_grid {
        let pairs: Vec<(f64, f64)> = a
            .iter()
            .filter_map(|(f, sa)| Some((*sa.get(&k)?, *b.get(f)?.get(&k)?)))
            .collect();
        let coeff = if pairs.len() < 2 { None } else { spearman(&pairs)? };
        out.spearman_per_k.insert(k, coeff);
    }
    Ok(out)
}

/// One scatter point: metric A against metric B for a feature at some k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub feature: String,
    pub k: usize,
    pub a: f64,
    pub b: f64,
}

pub fn scatter_series(
    a: &BTreeMap<String, BTreeMap<usize, f64>>,
    b: &BTreeMap<String, BTreeMap<usize, f64>>,
) -> Vec<ScatterPoint> {
    let mut points = Vec::new();
    for (feature, sa) in a {
        let Some(sb) = b.get(feature) else { continue };
        for (&k, &va) in sa {
            if let Some(&vb) = sb.get(&k) {
                points.push(ScatterPoint { feature: feature.clone(), k, a: va, b: vb });
            }
        }
    }
    points
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric_a: String,
    pub metric_b: String,
    pub per_query: BTreeMap<String, PerQueryCorrelation>,
    pub per_dataset: PerDatasetCorrelation,
    pub scatter: Vec<ScatterPoint>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zip(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
        a.iter().copied().zip(b.iter().copied()).collect()
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 5.0, 7.0];
        let lin: Vec<f64> = a.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&zip(&a, &lin)).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&zip(&a, &neg)).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&zip(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0])).unwrap(), None);
        assert!(pearson(&[(1.0, 2.0)]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let a = [-2.0, 0.5, 1.0, 3.0];
        let cubed: Vec<f64> = a.iter().map(|x: &f64| x.powi(3)).collect();
        assert_eq!(spearman(&zip(&a, &cubed)).unwrap(), Some(1.0));
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(spearman(&zip(&a, &rev)).unwrap(), Some(-1.0));
        let tied = spearman(&zip(&[1.0, 1.0, 2.0], &[5.0, 5.0, 9.0])).unwrap().unwrap();
        assert!((tied - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn per_query_reports_undefined() {
        let k = [1, 2, 3];
        let a = BTreeMap::from([
            (ImageId(0), BTreeMap::from([(1, 0.1), (2, 0.2), (3, 0.4)])),
            (ImageId(1), BTreeMap::from([(1, 0.5), (2, 0.5), (3, 0.5)])),
        ]);
        let b = BTreeMap::from([
            (ImageId(0), BTreeMap::from([(1, 1.0), (2, 2.0), (3, 4.0)])),
            (ImageId(1), BTreeMap::from([(1, 1.0), (2, 2.0), (3, 3.0)])),
        ]);
        let out = correlate_per_query(&a, &b, &k).unwrap();
        assert!((out.coefficients[&ImageId(0)] - 1.0).abs() < 1e-12);
        assert_eq!(out.undefined, vec![ImageId(1)]);
        assert_eq!(out.distribution.unwrap().histogram[HISTOGRAM_BINS - 1], 1);
    }

    #[test]
    fn per_dataset_inverted_features() {
        let k = [1, 5];
        let feats = ["a", "b", "c", "d"];
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        for (i, f) in feats.iter().enumerate() {
            a.insert(f.to_string(), BTreeMap::from([(1, i as f64), (5, i as f64 + 1.0)]));
            b.insert(f.to_string(), BTreeMap::from([(1, -(i as f64)), (5, 10.0 * i as f64)]));
        }
        let out = correlate_per_dataset(&a, &b, &k).unwrap();
        assert_eq!(out.spearman_per_k[&1], Some(-1.0));
        assert_eq!(out.spearman_per_k[&5], Some(1.0));
        assert_eq!(out.pearson_per_feature["a"], None);
    }

    #[test]
    fn quantiles_interpolate() {
        let d = summarize(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.quantiles[2], 0.0);
        assert!((d.quantiles[0] + 0.9).abs() < 1e-12);
        assert_eq!(d.histogram.iter().sum::<usize>(), 3);
    }
}
