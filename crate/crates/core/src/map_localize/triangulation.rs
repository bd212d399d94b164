use nalgebra::{Matrix4, Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Degenerate {
    #[error("fewer than two views")]
    TooFewViews,
    #[error("rays are nearly parallel")]
    SmallAngle,
    #[error("point is behind a camera")]
    Cheirality,
    #[error("reprojection residual too large")]
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationConfig {
    /// Minimum angle between any two viewing rays, in degrees.
    pub min_angle_deg: f64,
    /// Maximum reprojection residual in every view, in pixels.
    pub max_residual_px: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self { min_angle_deg: 1.0, max_residual_px: super::DEFAULT_MAP_TOLERANCE_PX }
    }
}

/// Linear multi-view (DLT) triangulation followed by cheirality, ray-angle
/// and residual checks.
pub fn triangulate(
    views: &[(Pose, CameraIntrinsics, Vector2<f64>)],
    cfg: &TriangulationConfig,
) -> Result<Vector3<f64>, Degenerate> {
    if views.len() < 2 {
        return Err(Degenerate::TooFewViews);
    }
    // Work relative to the mean camera centre for conditioning.
    let origin = views.iter().map(|(p, _, _)| *p.center()).sum::<Vector3<f64>>() / views.len() as f64;
    // Accumulate the 4x4 normal matrix of the DLT rows.
    let mut normal = Matrix4::<f64>::zeros();
    for (pose, intr, pixel) in views {
        let r = pose.rotation_matrix();
        let t = r * (origin - pose.center());
        let n = intr.unproject(pixel);
        for (coord, axis) in [(n.x, 0), (n.y, 1)] {
            let row = Vector4::new(
                coord * r[(2, 0)] - r[(axis, 0)],
                coord * r[(2, 1)] - r[(axis, 1)],
                coord * r[(2, 2)] - r[(axis, 2)],
                coord * t.z - t[axis],
            );
            normal += row * row.transpose();
        }
    }
    let eigen = normal.symmetric_eigen();
    let (min_idx, _) = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Degenerate::SmallAngle)?;
    let h = eigen.eigenvectors.column(min_idx);
    if h[3].abs() < 1e-12 * h.norm() {
        return Err(Degenerate::SmallAngle);
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]) + origin;
    if !point.iter().all(|v| v.is_finite()) {
        return Err(Degenerate::SmallAngle);
    }

    for (pose, intr, pixel) in views {
        match project(&point, pose, intr) {
            None => return Err(Degenerate::Cheirality),
            Some(px) if (px - pixel).norm() > cfg.max_residual_px => return Err(Degenerate::Residual),
            Some(_) => {}
        }
    }
    let min_cos = cfg.min_angle_deg.to_radians().cos();
    let rays: Vec<Vector3<f64>> = views.iter().map(|(p, _, _)| (point - p.center()).normalize()).collect();
    let wide_enough = rays
        .iter()
        .enumerate()
        .any(|(i, a)| rays[i + 1..].iter().any(|b| a.dot(b) < min_cos));
    if !wide_enough {
        return Err(Degenerate::SmallAngle);
    }
    Ok(point)
}
