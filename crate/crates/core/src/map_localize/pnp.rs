//! Robust absolute pose from 2D-3D correspondences: P3P inside RANSAC, then
//! Gauss-Newton refinement of the reprojection error on the inliers.

use nalgebra::{Matrix2x3, Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::p3p;
use super::Failure;
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier threshold on the reprojection error, in pixels.
    pub inlier_px: f64,
    pub min_inliers: usize,
    pub max_iterations: usize,
    /// Confidence for the adaptive iteration bound.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { inlier_px: 8.0, min_inliers: 12, max_iterations: 10_000, confidence: 0.999, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    pub inliers: Vec<usize>,
}

fn reprojection_sq(pose: &Pose, intr: &CameraIntrinsics, c: &Correspondence) -> Option<f64> {
    let local = pose.world_to_camera(&c.point);
    intr.project_local(&local).map(|px| (px - c.pixel).norm_squared())
}

fn inliers_of(pose: &Pose, intr: &CameraIntrinsics, corr: &[Correspondence], threshold_sq: f64) -> Vec<usize> {
    corr.iter()
        .enumerate()
        .filter(|(_, c)| reprojection_sq(pose, intr, c).is_some_and(|e| e <= threshold_sq))
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC over minimal three-point samples; deterministic for a given seed.
pub fn estimate_pose_pnp(
    corr: &[Correspondence],
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PnpSolution, Failure> {
    if corr.len() < 4 {
        return Err(Failure::InsufficientMatches);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let threshold_sq = cfg.inlier_px * cfg.inlier_px;
    let bearings: Vec<Vector3<f64>> = corr.iter().map(|c| intr.bearing(&c.pixel)).collect();

    let mut best: Option<(Pose, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < needed.min(cfg.max_iterations) {
        iteration += 1;
        let idx = sample(&mut rng, corr.len(), 3);
        let (i, j, k) = (idx.index(0), idx.index(1), idx.index(2));
        let poses = p3p::solve(
            &[bearings[i], bearings[j], bearings[k]],
            &[corr[i].point, corr[j].point, corr[k].point],
        );
        for pose in poses {
            let count = corr
                .iter()
                .filter(|c| reprojection_sq(&pose, intr, c).is_some_and(|e| e <= threshold_sq))
                .count();
            if best.as_ref().is_none_or(|(_, b)| count > *b) {
                best = Some((pose, count));
                let ratio = count as f64 / corr.len() as f64;
                needed = adaptive_iterations(ratio, cfg.confidence).unwrap_or(cfg.max_iterations);
            }
        }
    }

    let Some((mut pose, _)) = best else {
        return Err(Failure::NoConsensus);
    };
    let mut inliers = inliers_of(&pose, intr, corr, threshold_sq);
    for _ in 0..3 {
        if inliers.len() < 4 {
            break;
        }
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
        pose = refine_pose(&pose, intr, &subset, 30);
        let updated = inliers_of(&pose, intr, corr, threshold_sq);
        let stable = updated == inliers;
        inliers = updated;
        if stable {
            break;
        }
    }
    if inliers.len() < cfg.min_inliers.max(4) {
        return Err(Failure::NoConsensus);
    }
    Ok(PnpSolution { pose, inliers })
}

/// Iterations needed to draw an all-inlier minimal sample with the given confidence.
fn adaptive_iterations(inlier_ratio: f64, confidence: f64) -> Option<usize> {
    let p_good = inlier_ratio.powi(3);
    if p_good <= 0.0 {
        return None;
    }
    if p_good >= 1.0 {
        return Some(1);
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    n.is_finite().then(|| n.ceil().max(1.0) as usize)
}

/// Levenberg-damped Gauss-Newton on the pixel reprojection error.
///
/// The rotation is updated on the left, `R <- exp(w) R`, and the translation
/// additively in `X_l = R X_w + t`.
pub fn refine_pose(initial: &Pose, intr: &CameraIntrinsics, corr: &[Correspondence], max_iterations: usize) -> Pose {
    let cost = |rot: &UnitQuaternion<f64>, t: &Vector3<f64>| -> f64 {
        corr.iter()
            .map(|c| {
                let local = rot * c.point + t;
                match intr.project_local(&local) {
                    Some(px) => (px - c.pixel).norm_squared(),
                    None => 1e12,
                }
            })
            .sum()
    };
    let mut rot = *initial.rotation();
    let mut t = initial.translation();
    let mut current = cost(&rot, &t);
    let mut lambda = 1e-6;
    for _ in 0..max_iterations {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let rotated = rot * c.point;
            let local = rotated + t;
            if local.z <= 0.0 {
                continue;
            }
            let (x, y, z) = (local.x, local.y, local.z);
            let residual = Vector2::new(intr.fx * x / z + intr.cx - c.pixel.x, intr.fy * y / z + intr.cy - c.pixel.y);
            let dproj = Matrix2x3::new(
                intr.fx / z, 0.0, -intr.fx * x / (z * z),
                0.0, intr.fy / z, -intr.fy * y / (z * z),
            );
            // d(local)/d(w) = -[rotated]_x, d(local)/d(t) = I
            let skew = Matrix3::new(
                0.0, -rotated.z, rotated.y,
                rotated.z, 0.0, -rotated.x,
                -rotated.y, rotated.x, 0.0,
            );
            let j_rot = dproj * (-skew);
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&j_rot);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            jtj += j.transpose() * j;
            jtr += j.transpose() * residual;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for d in 0..6 {
                damped[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let Some(delta) = damped.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let new_rot = UnitQuaternion::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2])) * rot;
            let new_t = t + Vector3::new(delta[3], delta[4], delta[5]);
            let new_cost = cost(&new_rot, &new_t);
            if new_cost <= current {
                let small = delta.norm() < 1e-14 * (1.0 + t.norm());
                rot = new_rot;
                t = new_t;
                current = new_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Pose::from_rt(rot, t)
}
