//! Ground-truth relevance between query and database images.
//!
//! Three scores are supported:
//!
//! * relative camera pose (`rcp`): `c_diff / tau_c + R_diff / tau_R`, a cost;
//! * frustum overlap: radius of the largest sphere inscribed in the
//!   intersection of the two viewing frusta, a gain;
//! * co-observation: number of 3D points both images observe in a joint map, a gain.
//!
//! Rankings built from these scores are used in place of descriptor retrieval
//! to obtain upper bounds for each localization paradigm.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_frustum, position_error, rotation_error, Frustum, HalfSpace, Pose};
use crate::ids::ImageId;
use crate::lp::chebyshev_center;
use crate::map_localize::{MapImage, SceneMap};
use crate::retrieval::{sort_candidates, RankedEntry, Ranking, MAX_K};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcpConfig {
    /// Distance normalizer, meters.
    pub tau_c: f64,
    /// Angle normalizer, degrees.
    pub tau_r: f64,
}

impl Default for RcpConfig {
    fn default() -> Self {
        Self { tau_c: 25.0, tau_r: 45.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtMethod {
    Rcp,
    Frustum,
    Coobs,
}

impl GtMethod {
    pub const ALL: [GtMethod; 3] = [GtMethod::Rcp, GtMethod::Frustum, GtMethod::Coobs];

    pub fn higher_is_better(self) -> bool {
        !matches!(self, GtMethod::Rcp)
    }
}

impl fmt::Display for GtMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GtMethod::Rcp => "rcp",
            GtMethod::Frustum => "frustum",
            GtMethod::Coobs => "coobs",
        })
    }
}

impl FromStr for GtMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rcp" | "distance" => Ok(GtMethod::Rcp),
            "frustum" => Ok(GtMethod::Frustum),
            "coobs" | "co-observation" => Ok(GtMethod::Coobs),
            other => Err(Error::InvalidInput(format!("unknown ground-truth method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtConfig {
    pub rcp: RcpConfig,
    /// Binary relevance for rcp: within this distance (m) ...
    pub relevant_max_distance: f64,
    /// ... and this angle (deg).
    pub relevant_max_angle: f64,
    pub frustum_near: f64,
    pub frustum_far: f64,
    /// Ranking length.
    pub top: usize,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self {
            rcp: RcpConfig::default(),
            relevant_max_distance: 25.0,
            relevant_max_angle: 45.0,
            frustum_near: 0.0,
            frustum_far: 25.0,
            top: MAX_K,
        }
    }
}

pub fn rcp_score(q: &Pose, t: &Pose, cfg: &RcpConfig) -> f64 {
    position_error(q, t) / cfg.tau_c + rotation_error(q, t) / cfg.tau_r
}

/// Radius in meters of the largest sphere inside both frusta, 0 when they do
/// not overlap with a non-empty interior.
pub fn frustum_overlap_score(a: &Frustum, b: &Frustum) -> Result<f64> {
    // Centre the problem between both cameras and fix the constraint order so
    // the score is symmetric to the last bit.
    let origin = (a.apex() + b.apex()) / 2.0;
    let mut hs: Vec<HalfSpace> =
        a.half_spaces().iter().chain(b.half_spaces()).map(|h| h.translated(&origin)).collect();
    hs.sort_by(|x, y| {
        x.normal
            .x
            .total_cmp(&y.normal.x)
            .then(x.normal.y.total_cmp(&y.normal.y))
            .then(x.normal.z.total_cmp(&y.normal.z))
            .then(x.offset.total_cmp(&y.offset))
    });
    Ok(chebyshev_center(&hs)?.map_or(0.0, |ball| ball.radius))
}

/// Number of 3D points observed by both images.
pub fn coobservation_score(q: ImageId, t: ImageId, map: &SceneMap) -> Result<usize> {
    let a = map.points_seen_by(q)?;
    let b = map.points_seen_by(t)?;
    Ok(a.intersection(&b).count())
}

/// Ground-truth ranking together with the binary relevance it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRanking {
    pub method: GtMethod,
    /// Top-`cfg.top` list per query; zero-score entries are excluded for the gain scores.
    pub ranking: Ranking,
    /// All relevant database images per query (not truncated).
    pub relevant: BTreeMap<ImageId, BTreeSet<ImageId>>,
}

struct Scorer<'a> {
    method: GtMethod,
    cfg: &'a GtConfig,
    map: Option<&'a SceneMap>,
    frusta: BTreeMap<ImageId, Frustum>,
}

impl Scorer<'_> {
    /// Score and binary relevance of one pair.
    fn score(&self, q: ImageId, qi: &MapImage, t: ImageId, ti: &MapImage) -> Result<(f64, bool)> {
        match self.method {
            GtMethod::Rcp => {
                let s = rcp_score(&qi.pose, &ti.pose, &self.cfg.rcp);
                let rel = position_error(&qi.pose, &ti.pose) <= self.cfg.relevant_max_distance
                    && rotation_error(&qi.pose, &ti.pose) <= self.cfg.relevant_max_angle;
                Ok((s, rel))
            }
            GtMethod::Frustum => {
                let s = frustum_overlap_score(&self.frusta[&q], &self.frusta[&t])?;
                Ok((s, s > 0.0))
            }
            GtMethod::Coobs => {
                let map = self.map.ok_or_else(|| Error::InvalidInput("co-observation needs a map".into()))?;
                let s = coobservation_score(q, t, map)? as f64;
                Ok((s, s >= 1.0))
            }
        }
    }
}

/// Ranks every database image for every query by the chosen ground-truth score.
///
/// `map` must be a joint map containing both query and database images when
/// `method` is [`GtMethod::Coobs`].
pub fn build_gt_ranking(
    method: GtMethod,
    queries: &BTreeMap<ImageId, MapImage>,
    database: &BTreeMap<ImageId, MapImage>,
    map: Option<&SceneMap>,
    cfg: &GtConfig,
) -> Result<GroundTruthRanking> {
    if method == GtMethod::Coobs && map.is_none() {
        return Err(Error::InvalidInput("co-observation ranking needs a joint map".into()));
    }
    let mut frusta = BTreeMap::new();
    if method == GtMethod::Frustum {
        for (&id, img) in queries.iter().chain(database) {
            frusta.insert(id, build_frustum(&img.pose, &img.intrinsics, cfg.frustum_near, cfg.frustum_far)?);
        }
    }
    let scorer = Scorer { method, cfg, map, frusta };
    let per_query: Vec<(ImageId, Vec<RankedEntry>, BTreeSet<ImageId>)> = queries
        .par_iter()
        .map(|(&q, qi)| -> Result<_> {
            let mut candidates = Vec::new();
            let mut relevant = BTreeSet::new();
            for (&t, ti) in database {
                let (score, rel) = scorer.score(q, qi, t, ti)?;
                if rel {
                    relevant.insert(t);
                }
                if method == GtMethod::Rcp || score > 0.0 {
                    candidates.push(RankedEntry { db: t, score });
                }
            }
            Ok((q, sort_candidates(candidates, method.higher_is_better(), cfg.top), relevant))
        })
        .collect::<Result<_>>()?;

    let mut ranking = Ranking::default();
    let mut relevant = BTreeMap::new();
    for (q, list, rel) in per_query {
        ranking.per_query.insert(q, list);
        relevant.insert(q, rel);
    }
    Ok(GroundTruthRanking { method, ranking, relevant })
}

/// Which ranked entries count as relevant for [`gt_statistics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RelevanceThreshold {
    /// The method's own binary rule.
    MethodDefault,
    /// Score at least this value (gain scores).
    MinScore(f64),
    /// Score at most this value (cost scores).
    MaxScore(f64),
}

/// Average number of relevant entries per query in the (top-50) lists, and
/// percentage of queries without any relevant entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtStatistics {
    pub avg_k: f64,
    pub missing_pct: f64,
}

pub fn gt_statistics(gt: &GroundTruthRanking, threshold: RelevanceThreshold) -> Result<GtStatistics> {
    if gt.ranking.per_query.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut total = 0usize;
    let mut missing = 0usize;
    for (q, list) in &gt.ranking.per_query {
        let count = list
            .iter()
            .take(MAX_K)
            .filter(|e| match threshold {
                RelevanceThreshold::MethodDefault => gt.relevant.get(q).is_some_and(|s| s.contains(&e.db)),
                RelevanceThreshold::MinScore(v) => e.score >= v,
                RelevanceThreshold::MaxScore(v) => e.score <= v,
            })
            .count();
        total += count;
        if count == 0 {
            missing += 1;
        }
    }
    let n = gt.ranking.per_query.len() as f64;
    Ok(GtStatistics { avg_k: total as f64 / n, missing_pct: 100.0 * missing as f64 / n })
}
