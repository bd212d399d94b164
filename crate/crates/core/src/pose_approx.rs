//! Pose approximation: the query pose as a weighted combination of the poses
//! of the top-k retrieved database images.
//!
//! Positions are combined linearly. Quaternions are first flipped into the
//! hemisphere of the top-1 quaternion, combined linearly and renormalized.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Weighted sums with a quaternion norm below this are degenerate.
pub const DEGENERATE_QUATERNION_NORM: f64 = 1e-9;
/// Similarity floor used by CSI for non-positive cosine similarities.
pub const CSI_SIMILARITY_FLOOR: f64 = 1e-12;

/// L2-normalized global image descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor(DVector<f64>);

impl GlobalDescriptor {
    /// Normalizes the vector; rejects empty, non-finite or zero vectors.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = DVector::from_vec(values);
        let norm = v.norm();
        if v.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidInput("descriptor must be a finite non-zero vector".into()));
        }
        Ok(Self(v / norm))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &GlobalDescriptor) -> f64 {
        self.0.dot(&other.0)
    }
}

/// Interpolation weights aligned with retrieval rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationWeights(pub Vec<f64>);

impl InterpolationWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiConfig {
    pub alpha: f64,
}

impl Default for CsiConfig {
    fn default() -> Self {
        Self { alpha: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Equal weights.
    Ewb,
    /// Barycentric descriptor interpolation.
    Bdi,
    /// Cosine-similarity powers.
    Csi,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ewb, Scheme::Bdi, Scheme::Csi];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Ewb => "ewb",
            Scheme::Bdi => "bdi",
            Scheme::Csi => "csi",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ewb" => Ok(Scheme::Ewb),
            "bdi" => Ok(Scheme::Bdi),
            "csi" => Ok(Scheme::Csi),
            other => Err(Error::InvalidInput(format!("unknown interpolation scheme {other:?}"))),
        }
    }
}

pub fn weights_ewb(k: usize) -> Result<InterpolationWeights> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    Ok(InterpolationWeights(vec![1.0 / k as f64; k]))
}

fn check_descriptors(query: &GlobalDescriptor, retrieved: &[GlobalDescriptor]) -> Result<()> {
    if retrieved.is_empty() {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if retrieved.iter().any(|d| d.dim() != query.dim()) {
        return Err(Error::InvalidInput("descriptor dimensions differ".into()));
    }
    Ok(())
}

/// Affine weights minimizing `|d_q - sum w_i d_i|` subject to `sum w_i = 1`.
///
/// The constraint is eliminated with an orthonormal basis `N` of the
/// complement of the all-ones vector, `w = 1/k + N z`, and the remaining least
/// squares problem is solved with an SVD pseudo-inverse. Because `1/k` is
/// orthogonal to `N`, the minimum-norm `z` gives the minimum-norm optimal `w`
/// when the system is rank deficient (for example duplicate descriptors).
pub fn weights_bdi(query: &GlobalDescriptor, retrieved: &[GlobalDescriptor]) -> Result<InterpolationWeights> {
    check_descriptors(query, retrieved)?;
    let k = retrieved.len();
    if k == 1 {
        return Ok(InterpolationWeights(vec![1.0]));
    }
    let dim = query.dim();
    let d = DMatrix::from_fn(dim, k, |r, c| retrieved[c].as_vector()[r]);
    let w0 = DVector::from_element(k, 1.0 / k as f64);

    // Columns 1.. of Q in the QR factorization of [1 | I_{k-1} ; 0] span the complement of 1.
    let seed = DMatrix::from_fn(k, k, |r, c| if c == 0 || r + 1 == c { 1.0 } else { 0.0 });
    let q = seed.qr().q();
    let basis = q.columns(1, k - 1).into_owned();

    let residual = query.as_vector() - &d * &w0;
    let a = &d * &basis;
    let svd = a.svd(true, true);
    let tol = 1e-12 * d.norm();
    let z = svd
        .solve(&residual, tol)
        .map_err(|e| Error::InvalidInput(format!("barycentric solve failed: {e}")))?;
    let w = w0 + basis * z;
    Ok(InterpolationWeights(w.iter().copied().collect()))
}

/// Weights proportional to `(d_q . d_i)^alpha`.
///
/// Non-positive similarities are raised to [`CSI_SIMILARITY_FLOOR`] with a
/// warning. Powers are taken relative to the largest similarity so that large
/// exponents do not underflow.
pub fn weights_csi(query: &GlobalDescriptor, retrieved: &[GlobalDescriptor], cfg: &CsiConfig) -> Result<InterpolationWeights> {
    check_descriptors(query, retrieved)?;
    if !(cfg.alpha >= 0.0) {
        return Err(Error::InvalidInput("alpha must be non-negative".into()));
    }
    let sims: Vec<f64> = retrieved
        .iter()
        .map(|d| {
            let s = query.cosine(d);
            if s <= 0.0 {
                log::debug!("non-positive cosine similarity {s} clamped");
                CSI_SIMILARITY_FLOOR
            } else {
                s
            }
        })
        .collect();
    Ok(InterpolationWeights(csi_from_similarities(&sims, cfg.alpha)))
}

pub(crate) fn csi_from_similarities(sims: &[f64], alpha: f64) -> Vec<f64> {
    let max = sims.iter().copied().fold(f64::MIN, f64::max);
    let raw: Vec<f64> = sims.iter().map(|s| (alpha * (s / max).ln()).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

/// Result of a weighted pose combination. A near-zero quaternion sum has no
/// rotation; the position is still reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterpolatedPose {
    Pose(Pose),
    Degenerate { position: Vector3<f64> },
}

impl InterpolatedPose {
    pub fn pose(&self) -> Option<&Pose> {
        match self {
            InterpolatedPose::Pose(p) => Some(p),
            InterpolatedPose::Degenerate { .. } => None,
        }
    }
}

pub fn interpolate_pose(poses: &[Pose], weights: &InterpolationWeights) -> Result<InterpolatedPose> {
    if poses.is_empty() || poses.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} poses for {} weights",
            poses.len(),
            weights.len()
        )));
    }
    if poses.len() == 1 {
        return Ok(InterpolatedPose::Pose(poses[0]));
    }
    let reference = poses[0].rotation().into_inner();
    let mut position = Vector3::zeros();
    let mut q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (pose, &w) in poses.iter().zip(weights.as_slice()) {
        position += pose.center() * w;
        let qi = pose.rotation().into_inner();
        let aligned = if qi.dot(&reference) < 0.0 { -qi } else { qi };
        q += aligned * w;
    }
    if q.norm() < DEGENERATE_QUATERNION_NORM {
        return Ok(InterpolatedPose::Degenerate { position });
    }
    Ok(InterpolatedPose::Pose(Pose::from_parts(position, UnitQuaternion::from_quaternion(q))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_error;

    fn desc(v: &[f64]) -> GlobalDescriptor {
        GlobalDescriptor::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ewb_examples() {
        assert_eq!(weights_ewb(1).unwrap().0, vec![1.0]);
        assert_eq!(weights_ewb(4).unwrap().0, vec![0.25; 4]);
        assert!(weights_ewb(0).is_err());
    }

    #[test]
    fn bdi_examples() {
        let q = desc(&[1.0, 2.0, 3.0]);
        assert_eq!(weights_bdi(&q, &[desc(&[0.0, 1.0, 0.0])]).unwrap().0, vec![1.0]);
        let w = weights_bdi(&q, &[q.clone(), desc(&[1.0, 0.0, 0.0]), desc(&[0.0, 0.0, 1.0])]).unwrap();
        assert!((w.0[0] - 1.0).abs() < 1e-12 && w.0[1].abs() < 1e-12 && w.0[2].abs() < 1e-12, "{w:?}");
        assert!(weights_bdi(&q, &[desc(&[1.0, 0.0])]).is_err());
    }

    #[test]
    fn bdi_duplicates_give_min_norm() {
        let q = desc(&[1.0, 0.0, 0.0]);
        let a = desc(&[0.0, 1.0, 0.0]);
        let w = weights_bdi(&q, &[a.clone(), a]).unwrap();
        assert!((w.0[0] - 0.5).abs() < 1e-12 && (w.0[1] - 0.5).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn csi_examples() {
        let q = desc(&[1.0, 0.0]);
        let a = desc(&[0.8, 0.6]);
        let b = desc(&[0.4, (1.0f64 - 0.16).sqrt()]);
        let w = weights_csi(&q, &[a.clone(), b.clone()], &CsiConfig { alpha: 1.0 }).unwrap();
        assert!((w.0[0] - 2.0 / 3.0).abs() < 1e-12 && (w.0[1] - 1.0 / 3.0).abs() < 1e-12);
        let w0 = weights_csi(&q, &[a.clone(), b.clone()], &CsiConfig { alpha: 0.0 }).unwrap();
        assert_eq!(w0.0, vec![0.5, 0.5]);
        let big = weights_csi(&q, &[b, a], &CsiConfig { alpha: 1e6 }).unwrap();
        assert!(big.0[1] > 1.0 - 1e-6);
        let neg = weights_csi(&q, &[desc(&[-1.0, 0.1]), desc(&[1.0, 0.1])], &CsiConfig::default()).unwrap();
        assert!(neg.0.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn interpolation_examples() {
        let p = Pose::new(Vector3::new(1.0, 2.0, 3.0), [0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(interpolate_pose(&[p], &InterpolationWeights(vec![1.0])).unwrap(), InterpolatedPose::Pose(p));
        let two = interpolate_pose(&[p, p], &InterpolationWeights(vec![0.3, 0.7])).unwrap();
        let two = two.pose().unwrap();
        assert!((two.center() - p.center()).norm() < 1e-12 && rotation_error(two, &p) < 1e-9);
        let a = Pose::new(Vector3::zeros(), [1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Pose::new(Vector3::new(2.0, 0.0, 0.0), [1.0, 0.0, 0.0, 0.0]).unwrap();
        let mid = interpolate_pose(&[a, b], &weights_ewb(2).unwrap()).unwrap();
        assert_eq!(mid.pose().unwrap().center(), &Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn degenerate_sum_is_flagged() {
        let a = Pose::new(Vector3::zeros(), [1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Pose::new(Vector3::new(2.0, 0.0, 0.0), [1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = interpolate_pose(&[a, b], &InterpolationWeights(vec![0.5, -0.5])).unwrap();
        assert_eq!(out, InterpolatedPose::Degenerate { position: Vector3::new(-1.0, 0.0, 0.0) });
    }
}
