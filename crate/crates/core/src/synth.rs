//! Synthetic scenes with fully known geometry: posed database and query
//! cameras, 3D points, observations, descriptors and 2D-2D matches.
//!
//! Cameras are upright (yaw only). World `y` points down, like the camera
//! `y` axis.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::challenge::{gaussian_blur, GrayImage, LabelMask};
use crate::data_io::{image_path, mask_path, write_dataset, Dataset, ImageRecord, MaskIndex, Role, IMAGES_DIR, MASKS_DIR};
use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, Pose};
use crate::gt_ranking::{rcp_score, RcpConfig};
use crate::ids::{CameraId, ImageId, PointId};
use crate::map_localize::{MapImage, Match, MatchProvider, MatchTable, Observation, SceneMap, DEFAULT_MAP_TOLERANCE_PX};

/// Deterministic child seed from a master seed and a path of integers.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Cameras on a jittered grid inside a walled plaza, random headings.
    Grid,
    /// Co-linear cameras driving down a walled street.
    Corridor,
    /// Cameras on a circle looking at a central structure.
    Loop,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Grid => "grid",
            Layout::Corridor => "corridor",
            Layout::Loop => "loop",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Layout::Grid),
            "corridor" => Ok(Layout::Corridor),
            "loop" => Ok(Layout::Loop),
            other => Err(Error::InvalidInput(format!("unknown layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub layout: Layout,
    pub n_db: usize,
    pub n_query: usize,
    /// Queries placed far outside the scene, with no relevant database image.
    pub n_missing: usize,
    pub n_points: usize,
    /// Standard deviation of the observation noise in pixels (truncated at 3 sigma).
    pub pixel_noise: f64,
    /// Distance between neighbouring database cameras, meters.
    pub spacing: f64,
    /// Largest horizontal offset of a query from its database anchor, meters.
    pub query_offset: f64,
    pub query_yaw_jitter_deg: f64,
    /// Range of database headings in the grid layout, degrees (360 = any direction).
    pub heading_spread_deg: f64,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    /// Projections closer than this to an existing observation are occluded.
    pub min_separation_px: f64,
    pub max_depth: f64,
    pub n_blurry: usize,
    pub n_dynamic: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            layout: Layout::Grid,
            n_db: 40,
            n_query: 20,
            n_missing: 0,
            n_points: 1500,
            pixel_noise: 0.5,
            spacing: 5.0,
            query_offset: 1.5,
            query_yaw_jitter_deg: 10.0,
            heading_spread_deg: 360.0,
            width: 640,
            height: 480,
            hfov_deg: 60.0,
            min_separation_px: 3.0,
            max_depth: 60.0,
            n_blurry: 0,
            n_dynamic: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_db < 2 {
            return bad(format!("need at least 2 database images, got {}", self.n_db));
        }
        if self.n_points < 8 {
            return bad(format!("need at least 8 points, got {}", self.n_points));
        }
        if self.n_missing > self.n_query {
            return bad("more missing queries than queries".into());
        }
        if self.n_blurry > self.n_query || self.n_dynamic > self.n_query {
            return bad("more challenge queries than queries".into());
        }
        // truncated noise must keep every observation within the map tolerance
        if !(self.pixel_noise >= 0.0) || 3.0 * self.pixel_noise * 2f64.sqrt() > DEFAULT_MAP_TOLERANCE_PX {
            return bad(format!("pixel noise {} breaks the {DEFAULT_MAP_TOLERANCE_PX} px map tolerance", self.pixel_noise));
        }
        if !(0.0..=360.0).contains(&self.heading_spread_deg) {
            return bad(format!("heading spread {} outside [0, 360]", self.heading_spread_deg));
        }
        if !(self.spacing > 0.0 && self.max_depth > 1.0 && self.query_offset >= 0.0) {
            return bad("spacing, depth and offsets must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub intrinsics: CameraIntrinsics,
    pub database: BTreeMap<ImageId, MapImage>,
    pub queries: BTreeMap<ImageId, MapImage>,
    pub points: BTreeMap<PointId, Vector3<f64>>,
    /// Observations in database and query images.
    pub observations: Vec<Observation>,
    pub missing: BTreeSet<ImageId>,
    pub blurry: BTreeSet<ImageId>,
    pub dynamic: BTreeSet<ImageId>,
}

/// World-to-camera rotation of an upright camera looking along `(sin yaw, 0, cos yaw)`.
pub fn upright_rotation(yaw: f64) -> UnitQuaternion<f64> {
    let (s, c) = yaw.sin_cos();
    let m = Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= 3.0 * sigma {
            return v;
        }
    }
}

struct Placement {
    db: Vec<(Vector3<f64>, f64)>,
    sample_point: Box<dyn Fn(&mut ChaCha8Rng) -> Vector3<f64>>,
}

fn place_database(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Placement {
    let s = cfg.spacing;
    match cfg.layout {
        Layout::Grid => {
            let cols = (cfg.n_db as f64).sqrt().ceil() as usize;
            let rows = cfg.n_db.div_ceil(cols);
            let db = (0..cfg.n_db)
                .map(|i| {
                    let (r, c) = (i / cols, i % cols);
                    let jx = rng.random_range(-0.1..0.1) * s;
                    let jz = rng.random_range(-0.1..0.1) * s;
                    let yaw = rng.random_range(0.0..1.0) * cfg.heading_spread_deg.to_radians();
                    (Vector3::new(c as f64 * s + jx, 0.0, r as f64 * s + jz), yaw)
                })
                .collect();
            let margin = 12.0;
            let (x0, x1) = (-margin, (cols - 1) as f64 * s + margin);
            let (z0, z1) = (-margin, (rows - 1) as f64 * s + margin);
            let sample_point = Box::new(move |rng: &mut ChaCha8Rng| {
                let (w, d) = (x1 - x0, z1 - z0);
                let t = rng.random_range(0.0..2.0 * (w + d));
                let y = rng.random_range(-10.0..1.0);
                let inset = rng.random_range(0.0..1.5);
                if t < w {
                    Vector3::new(x0 + t, y, z0 + inset)
                } else if t < 2.0 * w {
                    Vector3::new(x0 + t - w, y, z1 - inset)
                } else if t < 2.0 * w + d {
                    Vector3::new(x0 + inset, y, z0 + t - 2.0 * w)
                } else {
                    Vector3::new(x1 - inset, y, z0 + t - 2.0 * w - d)
                }
            });
            Placement { db, sample_point }
        }
        Layout::Corridor => {
            let db = (0..cfg.n_db)
                .map(|i| (Vector3::new(0.0, 0.0, i as f64 * s), rng.random_range(-3f64..3.0).to_radians()))
                .collect();
            let end = (cfg.n_db - 1) as f64 * s + 50.0;
            let sample_point = Box::new(move |rng: &mut ChaCha8Rng| {
                let y = rng.random_range(-5.0..1.5);
                let u = rng.random_range(0.0..1.0);
                if u < 0.1 {
                    Vector3::new(rng.random_range(-6.0..6.0), y, end)
                } else {
                    let side = if u < 0.55 { -6.0 } else { 6.0 };
                    Vector3::new(side + rng.random_range(-0.5..0.5), y, rng.random_range(-10.0..end))
                }
            });
            Placement { db, sample_point }
        }
        Layout::Loop => {
            let radius = (cfg.n_db as f64 * s / (2.0 * PI)).max(8.0);
            let db = (0..cfg.n_db)
                .map(|i| {
                    let theta = 2.0 * PI * i as f64 / cfg.n_db as f64;
                    let c = Vector3::new(radius * theta.cos(), 0.0, radius * theta.sin());
                    // heading towards the centre
                    let yaw = (-c.x).atan2(-c.z) + rng.random_range(-15f64..15.0).to_radians();
                    (c, yaw)
                })
                .collect();
            let core = 0.4 * radius;
            let sample_point = Box::new(move |rng: &mut ChaCha8Rng| {
                let r = core * rng.random_range(0.0f64..1.0).sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                Vector3::new(r * a.cos(), rng.random_range(-6.0..2.0), r * a.sin())
            });
            Placement { db, sample_point }
        }
    }
}

/// Generates a scene; identical configurations give identical scenes.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let intrinsics = CameraIntrinsics::from_fov(cfg.width as f64, cfg.height as f64, cfg.hfov_deg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let placement = place_database(cfg, &mut rng);

    let mut database = BTreeMap::new();
    for (i, (c, yaw)) in placement.db.iter().enumerate() {
        database.insert(ImageId(i as u32), MapImage { pose: Pose::from_parts(*c, upright_rotation(*yaw)), intrinsics });
    }

    let mut queries = BTreeMap::new();
    let mut missing = BTreeSet::new();
    for j in 0..cfg.n_query {
        let id = ImageId((cfg.n_db + j) as u32);
        let anchor = rng.random_range(0..cfg.n_db);
        let (c, yaw) = placement.db[anchor];
        let offset = match cfg.layout {
            Layout::Corridor => Vector3::new(
                rng.random_range(-0.5..0.5f64).clamp(-cfg.query_offset, cfg.query_offset),
                0.0,
                rng.random_range(-1.0..1.0) * cfg.query_offset,
            ),
            _ => {
                let r = cfg.query_offset * rng.random_range(0.0f64..1.0).sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                Vector3::new(r * a.cos(), 0.0, r * a.sin())
            }
        };
        let jitter = rng.random_range(-1.0..1.0) * cfg.query_yaw_jitter_deg.to_radians();
        let mut center = c + offset;
        if j >= cfg.n_query - cfg.n_missing {
            center += Vector3::new(5000.0, 0.0, 5000.0);
            missing.insert(id);
        }
        queries.insert(id, MapImage { pose: Pose::from_parts(center, upright_rotation(yaw + jitter)), intrinsics });
    }

    let all: Vec<(ImageId, MapImage, bool)> = database
        .iter()
        .map(|(&id, m)| (id, *m, true))
        .chain(queries.iter().map(|(&id, m)| (id, *m, false)))
        .collect();
    let cell = cfg.min_separation_px.max(1e-3);
    let mut occupied: HashMap<(ImageId, i64, i64), Vec<Vector2<f64>>> = HashMap::new();
    let mut points = BTreeMap::new();
    let mut observations = Vec::new();
    let mut attempts = 0usize;
    let max_attempts = 1000 * cfg.n_points;
    while points.len() < cfg.n_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidInput(format!(
                "layout placed only {} of {} points",
                points.len(),
                cfg.n_points
            )));
        }
        let p = (placement.sample_point)(&mut rng);
        let mut seen = Vec::new();
        let mut db_views = 0;
        for (id, img, is_db) in &all {
            let depth = img.pose.world_to_camera(&p).z;
            if depth < 0.5 || depth > cfg.max_depth {
                continue;
            }
            let Some(px) = project(&p, &img.pose, &img.intrinsics) else { continue };
            if !intrinsics.contains_pixel(&px) {
                continue;
            }
            let (gx, gy) = ((px.x / cell).floor() as i64, (px.y / cell).floor() as i64);
            let crowded = (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    occupied
                        .get(&(*id, gx + dx, gy + dy))
                        .is_some_and(|v| v.iter().any(|q| (q - px).norm() < cfg.min_separation_px))
                })
            });
            if crowded {
                continue;
            }
            let noisy = px + Vector2::new(truncated_normal(&mut rng, cfg.pixel_noise), truncated_normal(&mut rng, cfg.pixel_noise));
            if !intrinsics.contains_pixel(&noisy) {
                continue;
            }
            seen.push((*id, px, noisy, (gx, gy)));
            if *is_db {
                db_views += 1;
            }
        }
        if db_views < 2 {
            continue;
        }
        let pid = PointId(points.len() as u32);
        points.insert(pid, p);
        for (image, px, noisy, (gx, gy)) in seen {
            occupied.entry((image, gx, gy)).or_default().push(px);
            observations.push(Observation { image, point: pid, pixel: noisy });
        }
    }

    let candidates: Vec<ImageId> = queries.keys().copied().collect();
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> BTreeSet<ImageId> {
        rand::seq::index::sample(rng, candidates.len(), n).iter().map(|i| candidates[i]).collect()
    };
    let blurry = pick(&mut rng, cfg.n_blurry);
    let dynamic = pick(&mut rng, cfg.n_dynamic);

    Ok(SynthScene { config: cfg.clone(), intrinsics, database, queries, points, observations, missing, blurry, dynamic })
}

impl SynthScene {
    /// Map over database and query images, used for co-observation ground truth.
    pub fn joint_map(&self) -> Result<SceneMap> {
        let images = self.database.iter().chain(&self.queries).map(|(&id, m)| (id, *m)).collect();
        SceneMap::new(images, self.points.clone(), self.observations.clone())
    }

    /// Map over database images only, used for global-map localization.
    pub fn global_map(&self) -> Result<SceneMap> {
        let keep: BTreeSet<ImageId> = self.database.keys().copied().collect();
        self.joint_map()?.restricted_to(&keep)
    }

    pub fn image(&self, id: ImageId) -> Option<&MapImage> {
        self.database.get(&id).or_else(|| self.queries.get(&id))
    }

    fn all_images(&self) -> impl Iterator<Item = (&ImageId, &MapImage)> {
        self.database.iter().chain(&self.queries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DescriptorMode {
    /// Cosine similarity equals `exp(-rcp)` between the two poses.
    PoseOracle,
    /// Oracle descriptor plus isotropic noise of total standard deviation `sigma`.
    PosePlusNoise { sigma: f64 },
    /// Random unit vectors, independent of the poses.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorModel {
    #[serde(flatten)]
    pub mode: DescriptorMode,
    pub dim: usize,
}

impl Default for DescriptorModel {
    fn default() -> Self {
        Self { mode: DescriptorMode::PoseOracle, dim: 256 }
    }
}

/// Unit-norm oracle embedding with `e_i . e_j = exp(-rcp(i, j))`.
///
/// For upright cameras the kernel is positive semi-definite, so the factor
/// is exact when `dim` is at least the number of images; otherwise the
/// leading components are kept.
fn oracle_embedding(scene: &SynthScene, dim: usize) -> Result<BTreeMap<ImageId, Vec<f64>>> {
    let images: Vec<(ImageId, Pose)> = scene.all_images().map(|(&id, m)| (id, m.pose)).collect();
    let n = images.len();
    let rcp = RcpConfig::default();
    let k = DMatrix::from_fn(n, n, |i, j| (-rcp_score(&images[i].1, &images[j].1, &rcp)).exp());
    let eig = k.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-9 {
        log::debug!("oracle kernel has negative eigenvalue {min_eig}; clipped");
    }
    let kept = &order[..dim.min(n)];
    let mut out = BTreeMap::new();
    for (i, (id, _)) in images.iter().enumerate() {
        let mut v = vec![0.0; dim];
        for (slot, &c) in kept.iter().enumerate() {
            v[slot] = eig.eigenvectors[(i, c)] * eig.eigenvalues[c].max(0.0).sqrt();
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput("oracle embedding collapsed".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        out.insert(*id, v);
    }
    Ok(out)
}

fn normalized_f32(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Global descriptors for every database and query image, stored as the
/// single-precision values written to disk.
pub fn emit_descriptors(scene: &SynthScene, model: &DescriptorModel, seed: u64) -> Result<BTreeMap<ImageId, Vec<f32>>> {
    if model.dim == 0 {
        return Err(Error::InvalidInput("descriptor dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model.mode {
        DescriptorMode::PoseOracle => {
            Ok(oracle_embedding(scene, model.dim)?.iter().map(|(&id, v)| (id, normalized_f32(v))).collect())
        }
        DescriptorMode::PosePlusNoise { sigma } => {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidInput("descriptor noise must be non-negative".into()));
            }
            let per_component = sigma / (model.dim as f64).sqrt();
            let mut out = BTreeMap::new();
            for (id, mut v) in oracle_embedding(scene, model.dim)? {
                if sigma > 0.0 {
                    for x in v.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *x += per_component * z;
                    }
                }
                out.insert(id, normalized_f32(&v));
            }
            Ok(out)
        }
        DescriptorMode::Adversarial => Ok(scene
            .all_images()
            .map(|(&id, _)| {
                let v: Vec<f64> = (0..model.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                (id, normalized_f32(&v))
            })
            .collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchNoise {
    /// Keypoint jitter in pixels, fixed per (image, point) so tracks stay consistent.
    pub inlier_noise_px: f64,
    /// Expected share of outliers among the matches of an overlapping pair.
    pub outlier_ratio: f64,
    /// Outlier count for pairs without shared points is `round(outlier_ratio * this)`.
    pub disjoint_outlier_base: usize,
    pub seed: u64,
}

impl Default for MatchNoise {
    fn default() -> Self {
        Self { inlier_noise_px: 0.0, outlier_ratio: 0.0, disjoint_outlier_base: 100, seed: 0 }
    }
}

/// On-demand synthetic matcher; the matches of a pair depend only on the
/// scene, the noise settings and the (unordered) pair.
pub struct SynthMatcher<'a> {
    scene: &'a SynthScene,
    noise: MatchNoise,
    by_image: BTreeMap<ImageId, BTreeMap<PointId, Vector2<f64>>>,
}

impl<'a> SynthMatcher<'a> {
    pub fn new(scene: &'a SynthScene, noise: MatchNoise) -> Result<Self> {
        if !(0.0..1.0).contains(&noise.outlier_ratio) || !(noise.inlier_noise_px >= 0.0) {
            return Err(Error::InvalidInput("outlier ratio must be in [0, 1) and noise non-negative".into()));
        }
        let mut by_image: BTreeMap<ImageId, BTreeMap<PointId, Vector2<f64>>> = BTreeMap::new();
        for o in &scene.observations {
            by_image.entry(o.image).or_default().insert(o.point, o.pixel);
        }
        Ok(Self { scene, noise, by_image })
    }

    fn keypoint(&self, image: ImageId, point: PointId, pixel: Vector2<f64>) -> Vector2<f64> {
        if self.noise.inlier_noise_px == 0.0 {
            return pixel;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.noise.seed, &[1, image.0 as u64, point.0 as u64]));
        let s = self.noise.inlier_noise_px;
        let jittered = pixel + Vector2::new(truncated_normal(&mut rng, s), truncated_normal(&mut rng, s));
        let intr = &self.scene.intrinsics;
        Vector2::new(jittered.x.clamp(0.0, intr.width - 1e-9), jittered.y.clamp(0.0, intr.height - 1e-9))
    }

    /// Matches of the pair in canonical orientation (`a < b`), with the number of outliers.
    fn canonical(&self, a: ImageId, b: ImageId) -> (Vec<Match>, usize) {
        let empty = BTreeMap::new();
        let obs_a = self.by_image.get(&a).unwrap_or(&empty);
        let obs_b = self.by_image.get(&b).unwrap_or(&empty);
        let mut out: Vec<Match> = obs_a
            .iter()
            .filter_map(|(p, &pa)| {
                let pb = *obs_b.get(p)?;
                Some(Match { image_a: a, pixel_a: self.keypoint(a, *p, pa), image_b: b, pixel_b: self.keypoint(b, *p, pb) })
            })
            .collect();
        let r = self.noise.outlier_ratio;
        let n_out = if out.is_empty() {
            (r * self.noise.disjoint_outlier_base as f64).round() as usize
        } else {
            (out.len() as f64 * r / (1.0 - r)).round() as usize
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.noise.seed, &[2, a.0 as u64, b.0 as u64]));
        let intr = &self.scene.intrinsics;
        let random_pixel =
            |rng: &mut ChaCha8Rng| Vector2::new(rng.random_range(0.0..intr.width), rng.random_range(0.0..intr.height));
        let keys_a: Vec<Vector2<f64>> = obs_a.values().copied().collect();
        let keys_b: Vec<Vector2<f64>> = obs_b.values().copied().collect();
        for _ in 0..n_out {
            // one side is a genuine keypoint, the other a random location
            let (pa, pb) = if rng.random_bool(0.5) && !keys_b.is_empty() {
                (random_pixel(&mut rng), keys_b[rng.random_range(0..keys_b.len())])
            } else if !keys_a.is_empty() {
                (keys_a[rng.random_range(0..keys_a.len())], random_pixel(&mut rng))
            } else {
                (random_pixel(&mut rng), random_pixel(&mut rng))
            };
            out.push(Match { image_a: a, pixel_a: pa, image_b: b, pixel_b: pb });
        }
        (out, n_out)
    }
}

impl MatchProvider for SynthMatcher<'_> {
    fn matches(&self, a: ImageId, b: ImageId) -> Vec<Match> {
        if a == b {
            return Vec::new();
        }
        if a < b {
            self.canonical(a, b).0
        } else {
            self.canonical(b, a).0.iter().map(Match::swapped).collect()
        }
    }
}

/// Materializes the matches of the given pairs.
pub fn emit_matches(scene: &SynthScene, pairs: &[(ImageId, ImageId)], noise: &MatchNoise) -> Result<MatchTable> {
    let matcher = SynthMatcher::new(scene, *noise)?;
    let mut table = MatchTable::new();
    let unique: BTreeSet<(ImageId, ImageId)> =
        pairs.iter().filter(|(a, b)| a != b).map(|&(a, b)| if a < b { (a, b) } else { (b, a) }).collect();
    for (a, b) in unique {
        for m in matcher.canonical(a, b).0 {
            table.insert(m);
        }
    }
    Ok(table)
}

/// All database pairs plus every query-database pair.
pub fn all_pairs(scene: &SynthScene) -> Vec<(ImageId, ImageId)> {
    let db: Vec<ImageId> = scene.database.keys().copied().collect();
    let mut pairs = Vec::new();
    for (i, &a) in db.iter().enumerate() {
        for &b in &db[i + 1..] {
            pairs.push((a, b));
        }
    }
    for &q in scene.queries.keys() {
        for &d in &db {
            pairs.push((d, q));
        }
    }
    pairs
}

/// Label table written next to synthetic masks.
pub fn mask_labels() -> BTreeMap<u8, String> {
    [(0, "background"), (1, "person"), (2, "car"), (3, "building")].into_iter().map(|(k, v)| (k, v.to_string())).collect()
}

/// Grayscale rendering of a query: random texture with bright splats at the
/// observations, blurred for the blurry subset.
pub fn render_query(scene: &SynthScene, id: ImageId) -> Result<GrayImage> {
    let img = scene.queries.get(&id).ok_or(Error::UnknownImage(id))?;
    let (w, h) = (img.intrinsics.width as usize, img.intrinsics.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene.config.seed, &[3, id.0 as u64]));
    let mut data: Vec<f64> = (0..w * h).map(|_| rng.random_range(0..=255u8) as f64).collect();
    for o in scene.observations.iter().filter(|o| o.image == id) {
        let (x, y) = (o.pixel.x as isize, o.pixel.y as isize);
        for yy in (y - 1).max(0)..=(y + 1).min(h as isize - 1) {
            for xx in (x - 1).max(0)..=(x + 1).min(w as isize - 1) {
                data[yy as usize * w + xx as usize] = 255.0;
            }
        }
    }
    let gray = GrayImage::new(w, h, data)?;
    Ok(if scene.blurry.contains(&id) { gaussian_blur(&gray, 3.0) } else { gray })
}

/// Segmentation mask of a query: building in the upper part, a person
/// covering 30% of the frame for the dynamic subset, a small car otherwise.
pub fn render_mask(scene: &SynthScene, id: ImageId) -> Result<LabelMask> {
    let img = scene.queries.get(&id).ok_or(Error::UnknownImage(id))?;
    let (w, h) = (img.intrinsics.width as usize, img.intrinsics.height as usize);
    let (bw, bh, label) = if scene.dynamic.contains(&id) { (w / 2, h * 6 / 10, 1u8) } else { (w / 5, h / 4, 2u8) };
    let mut labels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x < bw && y >= h - bh {
                labels[i] = label;
            } else if y < h * 4 / 10 {
                labels[i] = 3;
            }
        }
    }
    LabelMask::new(w, h, labels)
}

/// Stable 64-bit code of a name, for seed derivation.
pub fn name_code(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Everything the harness writes: scene, descriptor features and matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub scene: SynthConfig,
    pub features: BTreeMap<String, DescriptorModel>,
    pub matches: MatchNoise,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let feature = |mode| DescriptorModel { mode, dim: 256 };
        let features = BTreeMap::from([
            ("oracle".to_string(), feature(DescriptorMode::PoseOracle)),
            ("noisy".to_string(), feature(DescriptorMode::PosePlusNoise { sigma: 0.3 })),
            ("noisier".to_string(), feature(DescriptorMode::PosePlusNoise { sigma: 0.8 })),
            ("adversarial".to_string(), feature(DescriptorMode::Adversarial)),
        ]);
        Self {
            scene: SynthConfig { n_missing: 2, n_blurry: 4, n_dynamic: 4, heading_spread_deg: 30.0, ..Default::default() },
            features,
            matches: MatchNoise { inlier_noise_px: 0.3, outlier_ratio: 0.2, ..Default::default() },
        }
    }
}

/// In-memory dataset of a scene: one camera, descriptors for every feature
/// and matches for [`all_pairs`].
pub fn to_dataset(scene: &SynthScene, cfg: &HarnessConfig) -> Result<Dataset> {
    let camera = CameraId(0);
    let mut images = BTreeMap::new();
    for (role, set) in [(Role::Database, &scene.database), (Role::Query, &scene.queries)] {
        for (&id, m) in set {
            images.insert(id, ImageRecord { camera, role, pose: m.pose });
        }
    }
    let mut descriptors = BTreeMap::new();
    for (name, model) in &cfg.features {
        let seed = derive_seed(scene.config.seed, &[10, name_code(name)]);
        descriptors.insert(name.clone(), emit_descriptors(scene, model, seed)?);
    }
    let noise = MatchNoise { seed: derive_seed(scene.config.seed, &[11, cfg.matches.seed]), ..cfg.matches };
    Ok(Dataset {
        cameras: BTreeMap::from([(camera, scene.intrinsics)]),
        images,
        points: scene.points.clone(),
        observations: scene.observations.clone(),
        descriptors,
        matches: Some(emit_matches(scene, &all_pairs(scene), &noise)?),
        masks: Some(MaskIndex { labels: mask_labels(), images: scene.queries.keys().copied().collect() }),
    })
}

/// Generates the scene of `cfg` and writes it under `root`, including query
/// renderings and masks. Returns the dataset as written.
pub fn write_synth_dataset(cfg: &HarnessConfig, root: &Path) -> Result<Dataset> {
    let scene = generate_scene(&cfg.scene)?;
    let ds = to_dataset(&scene, cfg)?;
    write_dataset(&ds, root)?;
    for dir in [IMAGES_DIR, MASKS_DIR] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for &id in scene.queries.keys() {
        render_query(&scene, id)?.to_luma8().save(image_path(root, id))?;
        let mask = render_mask(&scene, id)?;
        image::GrayImage::from_raw(mask.width as u32, mask.height as u32, mask.labels)
            .expect("mask buffer matches its size")
            .save(mask_path(root, id))?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_error;

    fn small(layout: Layout) -> SynthConfig {
        SynthConfig { layout, n_db: 12, n_query: 4, n_points: 300, seed: 5, ..Default::default() }
    }

    #[test]
    fn scenes_are_reproducible() {
        for layout in [Layout::Grid, Layout::Corridor, Layout::Loop] {
            let a = generate_scene(&small(layout)).unwrap();
            let b = generate_scene(&small(layout)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.points.len(), 300);
            a.joint_map().unwrap().validate(DEFAULT_MAP_TOLERANCE_PX).unwrap();
            a.global_map().unwrap().validate(DEFAULT_MAP_TOLERANCE_PX).unwrap();
        }
    }

    #[test]
    fn noiseless_observations_reproject_exactly() {
        let scene = generate_scene(&SynthConfig { pixel_noise: 0.0, ..small(Layout::Loop) }).unwrap();
        for o in &scene.observations {
            let img = scene.image(o.image).unwrap();
            let px = project(&scene.points[&o.point], &img.pose, &img.intrinsics).unwrap();
            assert_eq!(px, o.pixel);
        }
    }

    #[test]
    fn corridor_is_colinear() {
        let scene = generate_scene(&small(Layout::Corridor)).unwrap();
        assert!(scene.database.values().all(|m| m.pose.center().x == 0.0 && m.pose.center().y == 0.0));
    }

    #[test]
    fn upright_rotation_looks_along_yaw() {
        let yaw = 0.7;
        let pose = Pose::from_parts(Vector3::zeros(), upright_rotation(yaw));
        let ahead = Vector3::new(yaw.sin(), 0.0, yaw.cos()) * 4.0;
        assert!((pose.world_to_camera(&ahead) - Vector3::new(0.0, 0.0, 4.0)).norm() < 1e-12);
        let other = Pose::from_parts(Vector3::zeros(), upright_rotation(yaw + 0.5));
        assert!((rotation_error(&pose, &other) - 0.5f64.to_degrees()).abs() < 1e-9);
    }

    #[test]
    fn queries_have_a_relevant_database_image() {
        let scene = generate_scene(&SynthConfig { n_missing: 1, ..small(Layout::Grid) }).unwrap();
        for (id, q) in &scene.queries {
            let relevant = scene.database.values().any(|d| {
                (d.pose.center() - q.pose.center()).norm() <= 25.0 && rotation_error(&d.pose, &q.pose) <= 45.0
            });
            assert_eq!(relevant, !scene.missing.contains(id));
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(generate_scene(&SynthConfig { n_db: 1, ..Default::default() }).is_err());
        assert!(generate_scene(&SynthConfig { n_points: 7, ..Default::default() }).is_err());
        assert!(generate_scene(&SynthConfig { pixel_noise: 2.0, ..Default::default() }).is_err());
    }

    #[test]
    fn oracle_cosine_is_exp_rcp() {
        let scene = generate_scene(&small(Layout::Grid)).unwrap();
        let d = emit_descriptors(&scene, &DescriptorModel::default(), 0).unwrap();
        let (a, b) = (ImageId(0), ImageId(13));
        let dot: f64 = d[&a].iter().zip(&d[&b]).map(|(x, y)| *x as f64 * *y as f64).sum();
        let expected = (-rcp_score(&scene.image(a).unwrap().pose, &scene.image(b).unwrap().pose, &RcpConfig::default())).exp();
        assert!((dot - expected).abs() < 1e-5, "{dot} vs {expected}");
    }

    #[test]
    fn zero_noise_equals_oracle() {
        let scene = generate_scene(&small(Layout::Loop)).unwrap();
        let oracle = emit_descriptors(&scene, &DescriptorModel::default(), 1).unwrap();
        let noisy = DescriptorModel { mode: DescriptorMode::PosePlusNoise { sigma: 0.0 }, dim: 256 };
        assert_eq!(emit_descriptors(&scene, &noisy, 9).unwrap(), oracle);
    }

    #[test]
    fn clean_matches_are_geometric() {
        let scene = generate_scene(&SynthConfig { pixel_noise: 0.0, ..small(Layout::Grid) }).unwrap();
        let table = emit_matches(&scene, &all_pairs(&scene), &MatchNoise::default()).unwrap();
        assert!(!table.is_empty());
        let mut by_pixel = HashMap::new();
        for o in &scene.observations {
            by_pixel.insert((o.image, o.pixel.x.to_bits(), o.pixel.y.to_bits()), o.point);
        }
        for m in table.iter() {
            let pa = by_pixel[&(m.image_a, m.pixel_a.x.to_bits(), m.pixel_a.y.to_bits())];
            let pb = by_pixel[&(m.image_b, m.pixel_b.x.to_bits(), m.pixel_b.y.to_bits())];
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn matcher_orientation_is_consistent() {
        let scene = generate_scene(&small(Layout::Loop)).unwrap();
        let m = SynthMatcher::new(&scene, MatchNoise { outlier_ratio: 0.3, inlier_noise_px: 0.3, ..Default::default() }).unwrap();
        let ab = m.matches(ImageId(1), ImageId(2));
        let ba = m.matches(ImageId(2), ImageId(1));
        assert_eq!(ab.iter().map(Match::swapped).collect::<Vec<_>>(), ba);
    }

    #[test]
    fn written_dataset_loads_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = HarnessConfig {
            scene: SynthConfig { n_blurry: 1, n_dynamic: 1, n_missing: 1, ..small(Layout::Grid) },
            ..Default::default()
        };
        let written = write_synth_dataset(&cfg, dir.path()).unwrap();
        let loaded = crate::data_io::load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, written);
        assert_eq!(loaded.descriptors.len(), 4);
    }
}
