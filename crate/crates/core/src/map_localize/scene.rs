use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, Pose};
use crate::ids::{ImageId, PointId};

/// Default bound on the reprojection residual of map observations, in pixels.
pub const DEFAULT_MAP_TOLERANCE_PX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image: ImageId,
    pub point: PointId,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapImage {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

/// Posed images, 3D points and the observation graph between them.
#[derive(Debug, Clone, Default)]
pub struct SceneMap {
    images: BTreeMap<ImageId, MapImage>,
    points: BTreeMap<PointId, Vector3<f64>>,
    observations: Vec<Observation>,
    by_image: BTreeMap<ImageId, Vec<usize>>,
    by_point: BTreeMap<PointId, Vec<usize>>,
    // per image: observation indices sorted by pixel x, for radius queries
    x_sorted: BTreeMap<ImageId, Vec<(f64, usize)>>,
}

impl PartialEq for SceneMap {
    fn eq(&self, other: &Self) -> bool {
        self.images == other.images && self.points == other.points && self.observations == other.observations
    }
}

impl SceneMap {
    /// Builds the map and its indices; every observation must reference an existing image and point.
    pub fn new(
        images: BTreeMap<ImageId, MapImage>,
        points: BTreeMap<PointId, Vector3<f64>>,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        let mut by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
        let mut by_point: BTreeMap<PointId, Vec<usize>> = BTreeMap::new();
        for (i, obs) in observations.iter().enumerate() {
            if !images.contains_key(&obs.image) {
                return Err(Error::Integrity(format!("observation references unknown image {}", obs.image)));
            }
            if !points.contains_key(&obs.point) {
                return Err(Error::Integrity(format!("observation references unknown point {}", obs.point)));
            }
            by_image.entry(obs.image).or_default().push(i);
            by_point.entry(obs.point).or_default().push(i);
        }
        let x_sorted = by_image
            .iter()
            .map(|(&id, idx)| {
                let mut v: Vec<(f64, usize)> = idx.iter().map(|&i| (observations[i].pixel.x, i)).collect();
                v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                (id, v)
            })
            .collect();
        Ok(Self { images, points, observations, by_image, by_point, x_sorted })
    }

    pub fn images(&self) -> &BTreeMap<ImageId, MapImage> {
        &self.images
    }

    pub fn image(&self, id: ImageId) -> Result<&MapImage> {
        self.images.get(&id).ok_or(Error::UnknownImage(id))
    }

    pub fn points(&self) -> &BTreeMap<PointId, Vector3<f64>> {
        &self.points
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn observations_of(&self, image: ImageId) -> impl Iterator<Item = &Observation> + '_ {
        self.by_image.get(&image).into_iter().flatten().map(move |&i| &self.observations[i])
    }

    pub fn observations_of_point(&self, point: PointId) -> impl Iterator<Item = &Observation> + '_ {
        self.by_point.get(&point).into_iter().flatten().map(move |&i| &self.observations[i])
    }

    /// Set of points observed by an image.
    pub fn points_seen_by(&self, image: ImageId) -> Result<BTreeSet<PointId>> {
        if !self.images.contains_key(&image) {
            return Err(Error::UnknownImage(image));
        }
        Ok(self.observations_of(image).map(|o| o.point).collect())
    }

    /// Observation of `image` closest to `pixel`, if within `radius` pixels.
    /// Ties resolve to the earliest observation.
    pub fn nearest_observation(&self, image: ImageId, pixel: &Vector2<f64>, radius: f64) -> Option<&Observation> {
        let sorted = self.x_sorted.get(&image)?;
        let start = sorted.partition_point(|(x, _)| *x < pixel.x - radius);
        let mut best: Option<(f64, usize)> = None;
        for &(x, i) in &sorted[start..] {
            if x > pixel.x + radius {
                break;
            }
            let d = (self.observations[i].pixel - pixel).norm();
            if d <= radius && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| &self.observations[i])
    }

    /// Checks the map invariants: at least two observations per point, positive
    /// depth and reprojection residual within `tolerance_px` for every observation.
    pub fn validate(&self, tolerance_px: f64) -> Result<()> {
        for id in self.points.keys() {
            let n = self.by_point.get(id).map_or(0, Vec::len);
            if n < 2 {
                return Err(Error::MapInvariant(format!("point {id} has {n} observation(s)")));
            }
        }
        for obs in &self.observations {
            let img = &self.images[&obs.image];
            let point = &self.points[&obs.point];
            let Some(px) = project(point, &img.pose, &img.intrinsics) else {
                return Err(Error::MapInvariant(format!(
                    "point {} is behind image {}",
                    obs.point, obs.image
                )));
            };
            let residual = (px - obs.pixel).norm();
            if residual > tolerance_px {
                return Err(Error::MapInvariant(format!(
                    "observation of point {} in image {} has residual {residual} px",
                    obs.point, obs.image
                )));
            }
        }
        Ok(())
    }

    /// Sub-map restricted to the given images; points left with fewer than
    /// two observations are dropped.
    pub fn restricted_to(&self, keep: &BTreeSet<ImageId>) -> Result<SceneMap> {
        let images: BTreeMap<_, _> =
            self.images.iter().filter(|(id, _)| keep.contains(id)).map(|(&id, img)| (id, *img)).collect();
        let mut counts: BTreeMap<PointId, usize> = BTreeMap::new();
        for obs in self.observations.iter().filter(|o| keep.contains(&o.image)) {
            *counts.entry(obs.point).or_default() += 1;
        }
        let points: BTreeMap<_, _> = self
            .points
            .iter()
            .filter(|(id, _)| counts.get(id).copied().unwrap_or(0) >= 2)
            .map(|(&id, p)| (id, *p))
            .collect();
        let observations = self
            .observations
            .iter()
            .filter(|o| keep.contains(&o.image) && points.contains_key(&o.point))
            .copied()
            .collect();
        SceneMap::new(images, points, observations)
    }
}
