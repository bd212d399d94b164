//! Accurate pose estimation from retrieved images, against either a pre-built
//! global map or a local map triangulated on the fly from the retrieved images.

mod p3p;
pub mod pnp;
mod scene;
pub mod triangulation;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pnp::{estimate_pose_pnp, refine_pose, Correspondence, PnpSolution, RansacConfig};
pub use scene::{MapImage, Observation, SceneMap, DEFAULT_MAP_TOLERANCE_PX};
pub use triangulation::{triangulate, Degenerate, TriangulationConfig};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Frustum, Pose, PoseError};
use crate::gt_ranking::frustum_overlap_score;
use crate::ids::{ImageId, PointId};

/// Why a query could not be localized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "kebab-case")]
pub enum Failure {
    #[error("insufficient matches")]
    InsufficientMatches,
    #[error("no consensus")]
    NoConsensus,
    #[error("too few tracks")]
    TooFewTracks,
    #[error("registration failed")]
    RegistrationFailed,
    #[error("degenerate rotation interpolation")]
    DegenerateInterpolation,
    #[error("nothing retrieved")]
    NothingRetrieved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub query: ImageId,
    pub estimate: Result<Pose, Failure>,
    pub num_inliers: usize,
    pub error: Option<PoseError>,
}

impl LocalizationResult {
    pub fn failed(query: ImageId, failure: Failure) -> Self {
        Self { query, estimate: Err(failure), num_inliers: 0, error: None }
    }

    pub fn success(query: ImageId, pose: Pose, num_inliers: usize) -> Self {
        Self { query, estimate: Ok(pose), num_inliers, error: None }
    }

    /// Fills in the error against a reference pose (no-op for failures).
    pub fn with_reference(mut self, reference: &Pose) -> Self {
        if let Ok(pose) = &self.estimate {
            self.error = Some(PoseError::between(pose, reference));
        }
        self
    }

    pub fn is_success(&self) -> bool {
        self.estimate.is_ok()
    }
}

/// One 2D-2D correspondence between two images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub image_a: ImageId,
    pub pixel_a: Vector2<f64>,
    pub image_b: ImageId,
    pub pixel_b: Vector2<f64>,
}

impl Match {
    pub fn swapped(&self) -> Self {
        Self { image_a: self.image_b, pixel_a: self.pixel_b, image_b: self.image_a, pixel_b: self.pixel_a }
    }
}

/// Source of 2D-2D matches for an image pair, oriented so that `image_a == a`.
pub trait MatchProvider: Sync {
    fn matches(&self, a: ImageId, b: ImageId) -> Vec<Match>;
}

/// Precomputed matches, looked up in either orientation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchTable {
    pairs: BTreeMap<(ImageId, ImageId), Vec<Match>>,
}

impl MatchTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, m: Match) {
        self.pairs.entry((m.image_a, m.image_b)).or_default().push(m);
    }

    pub fn len(&self) -> usize {
        self.pairs.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Match> {
        self.pairs.values().flatten()
    }
}

impl FromIterator<Match> for MatchTable {
    fn from_iter<T: IntoIterator<Item = Match>>(iter: T) -> Self {
        let mut table = MatchTable::new();
        for m in iter {
            table.insert(m);
        }
        table
    }
}

impl MatchProvider for MatchTable {
    fn matches(&self, a: ImageId, b: ImageId) -> Vec<Match> {
        let mut out: Vec<Match> = self.pairs.get(&(a, b)).cloned().unwrap_or_default();
        if a != b {
            if let Some(rev) = self.pairs.get(&(b, a)) {
                out.extend(rev.iter().map(Match::swapped));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    pub ransac: RansacConfig,
    /// Radius for associating a matched pixel with a map observation.
    pub association_radius_px: f64,
    pub min_triangulation_angle_deg: f64,
    pub map_tolerance_px: f64,
    /// Database-database matches farther than this from their epipolar
    /// lines are discarded before track building.
    pub epipolar_px: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            association_radius_px: 1.0,
            min_triangulation_angle_deg: 1.0,
            map_tolerance_px: DEFAULT_MAP_TOLERANCE_PX,
            epipolar_px: DEFAULT_MAP_TOLERANCE_PX,
        }
    }
}

impl LocalizeConfig {
    fn triangulation(&self) -> TriangulationConfig {
        TriangulationConfig { min_angle_deg: self.min_triangulation_angle_deg, max_residual_px: self.map_tolerance_px }
    }
}

/// Pair selection policy for map construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairSelection {
    /// All pairs whose frustum-overlap radius is at least this many meters.
    Threshold(f64),
    /// Each image's `n` most overlapping partners.
    TopN(usize),
}

impl Default for PairSelection {
    fn default() -> Self {
        PairSelection::Threshold(10.0)
    }
}

/// Image pairs to match for map construction, as `(smaller id, larger id)`.
pub fn select_map_pairs(frusta: &BTreeMap<ImageId, Frustum>, mode: PairSelection) -> Result<Vec<(ImageId, ImageId)>> {
    let ids: Vec<ImageId> = frusta.keys().copied().collect();
    let mut overlap: BTreeMap<(ImageId, ImageId), f64> = BTreeMap::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            overlap.insert((*a, *b), frustum_overlap_score(&frusta[a], &frusta[b])?);
        }
    }
    let selected: BTreeSet<(ImageId, ImageId)> = match mode {
        PairSelection::Threshold(r_min) => {
            overlap.iter().filter(|(_, &r)| r > 0.0 && r >= r_min).map(|(&p, _)| p).collect()
        }
        PairSelection::TopN(n) => {
            let mut out = BTreeSet::new();
            for a in &ids {
                let mut partners: Vec<(ImageId, f64)> = ids
                    .iter()
                    .filter(|b| *b != a)
                    .map(|b| {
                        let key = if a < b { (*a, *b) } else { (*b, *a) };
                        (*b, overlap[&key])
                    })
                    .filter(|(_, r)| *r > 0.0)
                    .collect();
                partners.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
                for (b, _) in partners.into_iter().take(n) {
                    out.insert(if *a < b { (*a, b) } else { (b, *a) });
                }
            }
            out
        }
    };
    Ok(selected.into_iter().collect())
}

fn pixel_key(p: &Vector2<f64>) -> (u64, u64) {
    (p.x.to_bits(), p.y.to_bits())
}

/// Lifts query-database matches to 2D-3D through the database observations.
fn lift_matches(
    query: ImageId,
    retrieved: &[ImageId],
    map: &SceneMap,
    matches: &dyn MatchProvider,
    radius: f64,
) -> Result<Vec<Correspondence>> {
    let mut seen: BTreeSet<((u64, u64), PointId)> = BTreeSet::new();
    let mut out = Vec::new();
    for &db in retrieved {
        map.image(db)?;
        for m in matches.matches(query, db) {
            if let Some(obs) = map.nearest_observation(db, &m.pixel_b, radius) {
                if seen.insert((pixel_key(&m.pixel_a), obs.point)) {
                    out.push(Correspondence { pixel: m.pixel_a, point: map.points()[&obs.point] });
                }
            }
        }
    }
    Ok(out)
}

/// Registers a query against a global map through its top-k retrieved images.
pub fn localize_global(
    query: ImageId,
    query_intrinsics: &CameraIntrinsics,
    retrieved: &[ImageId],
    map: &SceneMap,
    matches: &dyn MatchProvider,
    cfg: &LocalizeConfig,
) -> Result<LocalizationResult> {
    if retrieved.is_empty() {
        return Ok(LocalizationResult::failed(query, Failure::NothingRetrieved));
    }
    let corr = lift_matches(query, retrieved, map, matches, cfg.association_radius_px)?;
    Ok(match estimate_pose_pnp(&corr, query_intrinsics, &cfg.ransac) {
        Ok(sol) => LocalizationResult::success(query, sol.pose, sol.inliers.len()),
        Err(f) => LocalizationResult::failed(query, f),
    })
}

/// Epipolar constraint between two posed images.
struct EpipolarCheck {
    essential: Matrix3<f64>,
    a: CameraIntrinsics,
    b: CameraIntrinsics,
}

impl EpipolarCheck {
    fn new(a: &MapImage, b: &MapImage) -> Self {
        let rb = b.pose.rotation_matrix();
        let rel = rb * a.pose.rotation_matrix().transpose();
        let t = rb * (a.pose.center() - b.pose.center());
        Self { essential: t.cross_matrix() * rel, a: a.intrinsics, b: b.intrinsics }
    }

    /// Distance in pixels of a match from its epipolar lines, the larger of
    /// the two directions; infinite without a baseline.
    fn distance(&self, pa: &Vector2<f64>, pb: &Vector2<f64>) -> f64 {
        let na = self.a.unproject(pa);
        let nb = self.b.unproject(pb);
        let (xa, xb) = (Vector3::new(na.x, na.y, 1.0), Vector3::new(nb.x, nb.y, 1.0));
        let line_b = self.essential * xa;
        let line_a = self.essential.transpose() * xb;
        let residual = xb.dot(&line_b).abs();
        let db = residual / line_b.xy().norm() * self.b.fx.max(self.b.fy);
        let da = residual / line_a.xy().norm() * self.a.fx.max(self.a.fy);
        let d = da.max(db);
        if d.is_nan() {
            f64::INFINITY
        } else {
            d
        }
    }
}

/// Per-image keypoints merged within a snapping radius.
struct KeypointRegistry {
    radius: f64,
    pixels: Vec<(ImageId, Vector2<f64>)>,
    grid: HashMap<(ImageId, i64, i64), Vec<usize>>,
}

impl KeypointRegistry {
    fn new(radius: f64) -> Self {
        Self { radius: radius.max(1e-9), pixels: Vec::new(), grid: HashMap::new() }
    }

    fn cell(&self, p: &Vector2<f64>) -> (i64, i64) {
        ((p.x / self.radius).floor() as i64, (p.y / self.radius).floor() as i64)
    }

    fn register(&mut self, image: ImageId, pixel: Vector2<f64>) -> usize {
        let (cx, cy) = self.cell(&pixel);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &i in self.grid.get(&(image, cx + dx, cy + dy)).into_iter().flatten() {
                    let d = (self.pixels[i].1 - pixel).norm();
                    if d <= self.radius && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                        best = Some((d, i));
                    }
                }
            }
        }
        if let Some((_, i)) = best {
            return i;
        }
        let id = self.pixels.len();
        self.pixels.push((image, pixel));
        self.grid.entry((image, cx, cy)).or_default().push(id);
        id
    }
}

/// Union-find whose components never hold two keypoints of one image.
struct TrackForest {
    parent: Vec<usize>,
    images: Vec<BTreeSet<ImageId>>,
}

impl TrackForest {
    fn new() -> Self {
        Self { parent: Vec::new(), images: Vec::new() }
    }

    fn grow(&mut self, registry: &KeypointRegistry) {
        while self.parent.len() < registry.pixels.len() {
            let n = self.parent.len();
            self.parent.push(n);
            self.images.push(BTreeSet::from([registry.pixels[n].0]));
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the two tracks unless they share an image; returns whether joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        if !self.images[ra].is_disjoint(&self.images[rb]) {
            return false;
        }
        // smaller index becomes the root, keeps track order deterministic
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        let moved = std::mem::take(&mut self.images[hi]);
        self.images[lo].extend(moved);
        self.parent[hi] = lo;
        true
    }
}

/// Triangulates a map from pairwise matches between the given images.
///
/// Matches failing the epipolar check are dropped first. Tracks are then
/// grown from the match graph in image-pair order. A match that
/// would put two distinct keypoints of one image into a track is skipped, so
/// inconsistent components are split rather than merged.
pub fn build_local_map(
    images: &BTreeMap<ImageId, MapImage>,
    matches: &dyn MatchProvider,
    cfg: &LocalizeConfig,
) -> Result<SceneMap> {
    let ids: Vec<ImageId> = images.keys().copied().collect();
    let mut registry = KeypointRegistry::new(cfg.association_radius_px);
    let mut uf = TrackForest::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let check = EpipolarCheck::new(&images[&a], &images[&b]);
            for m in matches.matches(a, b) {
                if check.distance(&m.pixel_a, &m.pixel_b) > cfg.epipolar_px {
                    continue;
                }
                let na = registry.register(a, m.pixel_a);
                let nb = registry.register(b, m.pixel_b);
                uf.grow(&registry);
                uf.union(na, nb);
            }
        }
    }
    uf.grow(&registry);
    let mut tracks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for node in 0..registry.pixels.len() {
        let root = uf.find(node);
        tracks.entry(root).or_default().push(node);
    }

    let tri_cfg = cfg.triangulation();
    let mut points = BTreeMap::new();
    let mut observations = Vec::new();
    let mut next_id = 0u32;
    for nodes in tracks.values() {
        if nodes.len() < 2 {
            continue;
        }
        let views: Vec<_> = nodes
            .iter()
            .map(|&n| {
                let (img, px) = registry.pixels[n];
                let m = &images[&img];
                (m.pose, m.intrinsics, px)
            })
            .collect();
        if let Ok(point) = triangulate(&views, &tri_cfg) {
            let id = PointId(next_id);
            next_id += 1;
            points.insert(id, point);
            for &n in nodes {
                let (image, pixel) = registry.pixels[n];
                observations.push(Observation { image, point: id, pixel });
            }
        }
    }
    SceneMap::new(images.clone(), points, observations)
}

/// Registers a query against a map triangulated from its top-k retrieved images.
pub fn localize_local_sfm(
    query: ImageId,
    query_intrinsics: &CameraIntrinsics,
    retrieved: &[ImageId],
    database: &BTreeMap<ImageId, MapImage>,
    matches: &dyn MatchProvider,
    cfg: &LocalizeConfig,
) -> Result<LocalizationResult> {
    let mut images = BTreeMap::new();
    for &id in retrieved {
        images.insert(id, *database.get(&id).ok_or(Error::UnknownImage(id))?);
    }
    if images.len() < 2 {
        return Ok(LocalizationResult::failed(query, Failure::TooFewTracks));
    }
    let local = build_local_map(&images, matches, cfg)?;
    if local.points().len() < cfg.ransac.min_inliers.max(4) {
        return Ok(LocalizationResult::failed(query, Failure::TooFewTracks));
    }
    let result = localize_global(query, query_intrinsics, retrieved, &local, matches, cfg)?;
    Ok(match result.estimate {
        Ok(_) => result,
        Err(_) => LocalizationResult::failed(query, Failure::RegistrationFailed),
    })
}
