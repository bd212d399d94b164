//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   intrinsics.txt     camera_id PINHOLE fx fy cx cy width height
//!   images.txt         image_id camera_id db|query
//!   poses.txt          image_id qw qx qy qz cx cy cz   (world-to-camera quaternion, camera centre)
//!   points.txt         point_id x y z
//!   observations.txt   image_id point_id px py
//!   descriptors/<feature>.bin + <feature>.ids
//!   matches/*.txt      image_a ax ay image_b bx by
//!   masks/labels.txt + masks/<image_id>.png
//!   images/<image_id>.png
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Floats are written
//! with shortest round-trip formatting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::ids::{CameraId, ImageId, PointId};
use crate::map_localize::{MapImage, Match, MatchTable, Observation, SceneMap, DEFAULT_MAP_TOLERANCE_PX};
use crate::pose_approx::GlobalDescriptor;
use crate::retrieval::{RankedEntry, Ranking};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const IMAGES_FILE: &str = "images.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const POINTS_FILE: &str = "points.txt";
pub const OBSERVATIONS_FILE: &str = "observations.txt";
pub const DESCRIPTORS_DIR: &str = "descriptors";
pub const MATCHES_DIR: &str = "matches";
pub const MASKS_DIR: &str = "masks";
pub const MASK_LABELS_FILE: &str = "labels.txt";
pub const IMAGES_DIR: &str = "images";

const DESCRIPTOR_MAGIC: &[u8; 8] = b"LRDESC01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Database,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRecord {
    pub camera: CameraId,
    pub role: Role,
    pub pose: Pose,
}

/// Label names and the images that have a mask raster.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskIndex {
    pub labels: BTreeMap<u8, String>,
    pub images: BTreeSet<ImageId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub cameras: BTreeMap<CameraId, CameraIntrinsics>,
    pub images: BTreeMap<ImageId, ImageRecord>,
    pub points: BTreeMap<PointId, Vector3<f64>>,
    pub observations: Vec<Observation>,
    /// Raw descriptor rows per feature name.
    pub descriptors: BTreeMap<String, BTreeMap<ImageId, Vec<f32>>>,
    pub matches: Option<MatchTable>,
    pub masks: Option<MaskIndex>,
}

impl Dataset {
    fn images_with_role(&self, role: Role) -> BTreeMap<ImageId, MapImage> {
        self.images
            .iter()
            .filter(|(_, r)| r.role == role)
            .map(|(&id, r)| (id, MapImage { pose: r.pose, intrinsics: self.cameras[&r.camera] }))
            .collect()
    }

    pub fn database(&self) -> BTreeMap<ImageId, MapImage> {
        self.images_with_role(Role::Database)
    }

    pub fn queries(&self) -> BTreeMap<ImageId, MapImage> {
        self.images_with_role(Role::Query)
    }

    /// Map over all images, for co-observation ground truth.
    pub fn joint_map(&self) -> Result<SceneMap> {
        let images = self
            .images
            .iter()
            .map(|(&id, r)| (id, MapImage { pose: r.pose, intrinsics: self.cameras[&r.camera] }))
            .collect();
        SceneMap::new(images, self.points.clone(), self.observations.clone())
    }

    /// Map over database images only.
    pub fn global_map(&self) -> Result<SceneMap> {
        let keep: BTreeSet<ImageId> = self.database().keys().copied().collect();
        self.joint_map()?.restricted_to(&keep)
    }

    pub fn global_descriptors(&self, feature: &str) -> Result<BTreeMap<ImageId, GlobalDescriptor>> {
        let rows = self
            .descriptors
            .get(feature)
            .ok_or_else(|| Error::InvalidInput(format!("no descriptors named {feature:?}")))?;
        rows.iter()
            .map(|(&id, v)| Ok((id, GlobalDescriptor::new(v.iter().map(|&x| x as f64).collect())?)))
            .collect()
    }

    /// Referential integrity across files and the scene-map invariants.
    pub fn validate(&self) -> Result<()> {
        for cam in self.cameras.values() {
            cam.validate()?;
        }
        for (id, r) in &self.images {
            if !self.cameras.contains_key(&r.camera) {
                return Err(Error::Integrity(format!("image {id} uses unknown camera {}", r.camera)));
            }
        }
        for (name, rows) in &self.descriptors {
            if rows.len() != self.images.len() {
                return Err(Error::Integrity(format!(
                    "descriptor {name:?} has {} rows for {} images",
                    rows.len(),
                    self.images.len()
                )));
            }
            if let Some(id) = rows.keys().find(|id| !self.images.contains_key(id)) {
                return Err(Error::Integrity(format!("descriptor {name:?} lists unknown image {id}")));
            }
        }
        if let Some(matches) = &self.matches {
            for m in matches.iter() {
                for (img, px) in [(m.image_a, m.pixel_a), (m.image_b, m.pixel_b)] {
                    let rec = self.images.get(&img).ok_or(Error::UnknownImage(img))?;
                    if !self.cameras[&rec.camera].contains_pixel(&px) {
                        return Err(Error::Integrity(format!("match pixel {px:?} outside image {img}")));
                    }
                }
            }
        }
        if let Some(masks) = &self.masks {
            if let Some(id) = masks.images.iter().find(|id| !self.images.contains_key(id)) {
                return Err(Error::Integrity(format!("mask for unknown image {id}")));
            }
        }
        self.joint_map()?.validate(DEFAULT_MAP_TOLERANCE_PX)
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment lines split on whitespace, with 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim();
        (!line.is_empty() && !line.starts_with('#')).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

struct Fields<'a> {
    path: &'a Path,
    line: usize,
    fields: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(path: &'a Path, line: usize, fields: Vec<&'a str>, expected: usize) -> Result<Self> {
        if fields.len() != expected {
            return Err(Error::parse(path, line, format!("expected {expected} fields, found {}", fields.len())));
        }
        Ok(Self { path, line, fields })
    }

    fn get<T: FromStr>(&self, i: usize) -> Result<T> {
        self.fields[i]
            .parse()
            .map_err(|_| Error::parse(self.path, self.line, format!("cannot parse field {} ({:?})", i + 1, self.fields[i])))
    }

    fn finite(&self, i: usize) -> Result<f64> {
        let v: f64 = self.get(i)?;
        if !v.is_finite() {
            return Err(Error::parse(self.path, self.line, format!("field {} is not finite", i + 1)));
        }
        Ok(v)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, message)
    }
}

fn read_intrinsics(path: &Path) -> Result<BTreeMap<CameraId, CameraIntrinsics>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (line, fields) in records(&text) {
        let f = Fields::new(path, line, fields, 8)?;
        if f.fields[1] != "PINHOLE" {
            return Err(f.err(format!("unsupported camera model {:?}", f.fields[1])));
        }
        let intr = CameraIntrinsics::new(f.finite(2)?, f.finite(3)?, f.finite(4)?, f.finite(5)?, f.finite(6)?, f.finite(7)?)
            .map_err(|e| f.err(e.to_string()))?;
        if out.insert(f.get(0)?, intr).is_some() {
            return Err(f.err("duplicate camera id"));
        }
    }
    Ok(out)
}

fn read_images(path: &Path) -> Result<BTreeMap<ImageId, (CameraId, Role)>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (line, fields) in records(&text) {
        let f = Fields::new(path, line, fields, 3)?;
        let role = match f.fields[2] {
            "db" => Role::Database,
            "query" => Role::Query,
            other => return Err(f.err(format!("role must be db or query, found {other:?}"))),
        };
        if out.insert(f.get(0)?, (f.get(1)?, role)).is_some() {
            return Err(f.err("duplicate image id"));
        }
    }
    Ok(out)
}

fn read_poses(path: &Path) -> Result<BTreeMap<ImageId, Pose>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (line, fields) in records(&text) {
        let f = Fields::new(path, line, fields, 8)?;
        let q = [f.finite(1)?, f.finite(2)?, f.finite(3)?, f.finite(4)?];
        let c = Vector3::new(f.finite(5)?, f.finite(6)?, f.finite(7)?);
        let pose = Pose::new(c, q).map_err(|e| f.err(e.to_string()))?;
        if out.insert(f.get(0)?, pose).is_some() {
            return Err(f.err("duplicate pose"));
        }
    }
    Ok(out)
}

fn read_points(path: &Path) -> Result<BTreeMap<PointId, Vector3<f64>>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (line, fields) in records(&text) {
        let f = Fields::new(path, line, fields, 4)?;
        if out.insert(f.get(0)?, Vector3::new(f.finite(1)?, f.finite(2)?, f.finite(3)?)).is_some() {
            return Err(f.err("duplicate point id"));
        }
    }
    Ok(out)
}

fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let text = read_text(path)?;
    records(&text)
        .map(|(line, fields)| {
            let f = Fields::new(path, line, fields, 4)?;
            Ok(Observation { image: f.get(0)?, point: f.get(1)?, pixel: Vector2::new(f.finite(2)?, f.finite(3)?) })
        })
        .collect()
}

/// Reads a match file into `table`.
pub fn read_matches_into(path: &Path, table: &mut MatchTable) -> Result<()> {
    let text = read_text(path)?;
    for (line, fields) in records(&text) {
        let f = Fields::new(path, line, fields, 6)?;
        table.insert(Match {
            image_a: f.get(0)?,
            pixel_a: Vector2::new(f.finite(1)?, f.finite(2)?),
            image_b: f.get(3)?,
            pixel_b: Vector2::new(f.finite(4)?, f.finite(5)?),
        });
    }
    Ok(())
}

fn sorted_entries(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == extension) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads `<stem>.bin` and its `<stem>.ids` sidecar.
pub fn read_descriptors(bin: &Path) -> Result<BTreeMap<ImageId, Vec<f32>>> {
    if !bin.exists() {
        return Err(Error::MissingFile(bin.to_path_buf()));
    }
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let header = DESCRIPTOR_MAGIC.len() + 8;
    if bytes.len() < header || &bytes[..8] != DESCRIPTOR_MAGIC {
        return Err(Error::parse(bin, 0, "bad descriptor header"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bytes.len() != header + rows * cols * 4 {
        return Err(Error::parse(
            bin,
            0,
            format!("expected {} payload bytes for {rows}x{cols}, found {}", rows * cols * 4, bytes.len() - header),
        ));
    }
    let ids_path = bin.with_extension("ids");
    let ids_text = read_text(&ids_path)?;
    let mut ids = Vec::new();
    for (line, fields) in records(&ids_text) {
        ids.push(Fields::new(&ids_path, line, fields, 1)?.get::<ImageId>(0)?);
    }
    if ids.len() != rows {
        return Err(Error::Integrity(format!(
            "{} has {rows} rows but {} lists {} ids",
            bin.display(),
            ids_path.display(),
            ids.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (r, id) in ids.into_iter().enumerate() {
        let row = bytes[header + r * cols * 4..header + (r + 1) * cols * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if out.insert(id, row).is_some() {
            return Err(Error::Integrity(format!("{} lists image {id} twice", ids_path.display())));
        }
    }
    Ok(out)
}

fn read_mask_index(dir: &Path) -> Result<MaskIndex> {
    let labels_path = dir.join(MASK_LABELS_FILE);
    let text = read_text(&labels_path)?;
    let mut labels = BTreeMap::new();
    for (line, fields) in records(&text) {
        let f = Fields::new(&labels_path, line, fields, 2)?;
        labels.insert(f.get::<u8>(0)?, f.fields[1].to_string());
    }
    let mut images = BTreeSet::new();
    for path in sorted_entries(dir, "png")? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let id = stem.parse::<ImageId>().map_err(|_| Error::parse(&path, 0, "mask file name is not an image id"))?;
        images.insert(id);
    }
    Ok(MaskIndex { labels, images })
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let cameras = read_intrinsics(&root.join(INTRINSICS_FILE))?;
    let image_table = read_images(&root.join(IMAGES_FILE))?;
    let mut poses = read_poses(&root.join(POSES_FILE))?;
    let points = read_points(&root.join(POINTS_FILE))?;
    let observations = read_observations(&root.join(OBSERVATIONS_FILE))?;

    let mut images = BTreeMap::new();
    for (id, (camera, role)) in image_table {
        let pose = poses.remove(&id).ok_or_else(|| Error::Integrity(format!("image {id} has no pose")))?;
        images.insert(id, ImageRecord { camera, role, pose });
    }
    if let Some(id) = poses.keys().next() {
        return Err(Error::Integrity(format!("pose for unknown image {id}")));
    }

    let mut descriptors = BTreeMap::new();
    let desc_dir = root.join(DESCRIPTORS_DIR);
    if desc_dir.is_dir() {
        for bin in sorted_entries(&desc_dir, "bin")? {
            let name = bin.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            descriptors.insert(name, read_descriptors(&bin)?);
        }
    }

    let match_dir = root.join(MATCHES_DIR);
    let matches = if match_dir.is_dir() {
        let mut table = MatchTable::new();
        for file in sorted_entries(&match_dir, "txt")? {
            read_matches_into(&file, &mut table)?;
        }
        Some(table)
    } else {
        None
    };

    let mask_dir = root.join(MASKS_DIR);
    let masks = if mask_dir.is_dir() { Some(read_mask_index(&mask_dir)?) } else { None };

    let ds = Dataset { cameras, images, points, observations, descriptors, matches, masks };
    ds.validate()?;
    Ok(ds)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_descriptors(bin: &Path, rows: &BTreeMap<ImageId, Vec<f32>>) -> Result<()> {
    let cols = rows.values().next().map_or(0, Vec::len);
    if rows.values().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput("descriptor rows differ in length".into()));
    }
    let mut bytes = Vec::with_capacity(16 + rows.len() * cols * 4);
    bytes.extend_from_slice(DESCRIPTOR_MAGIC);
    bytes.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    let mut ids = String::new();
    for (id, row) in rows {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        writeln!(ids, "{id}").expect("write to string");
    }
    if let Some(dir) = bin.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
    write_text(&bin.with_extension("ids"), &ids)
}

/// Writes matches grouped by the first image of each pair, one file per image.
pub fn write_matches(dir: &Path, table: &MatchTable) -> Result<()> {
    let mut files: BTreeMap<ImageId, String> = BTreeMap::new();
    for m in table.iter() {
        let s = files.entry(m.image_a).or_default();
        writeln!(s, "{} {} {} {} {} {}", m.image_a, m.pixel_a.x, m.pixel_a.y, m.image_b, m.pixel_b.x, m.pixel_b.y)
            .expect("write to string");
    }
    for (id, text) in files {
        write_text(&dir.join(format!("{id:08}.txt")), &text)?;
    }
    Ok(())
}

/// Writes every text and binary file of the dataset. Mask and image rasters
/// are written separately.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let mut s = String::from("# camera_id model fx fy cx cy width height\n");
    for (id, c) in &ds.cameras {
        writeln!(s, "{id} PINHOLE {} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height).expect("write to string");
    }
    write_text(&root.join(INTRINSICS_FILE), &s)?;

    let mut images = String::from("# image_id camera_id role\n");
    let mut poses = String::from("# image_id qw qx qy qz cx cy cz\n");
    for (id, r) in &ds.images {
        let role = match r.role {
            Role::Database => "db",
            Role::Query => "query",
        };
        writeln!(images, "{id} {} {role}", r.camera).expect("write to string");
        let [w, x, y, z] = r.pose.wxyz();
        let c = r.pose.center();
        writeln!(poses, "{id} {w} {x} {y} {z} {} {} {}", c.x, c.y, c.z).expect("write to string");
    }
    write_text(&root.join(IMAGES_FILE), &images)?;
    write_text(&root.join(POSES_FILE), &poses)?;

    let mut points = String::from("# point_id x y z\n");
    for (id, p) in &ds.points {
        writeln!(points, "{id} {} {} {}", p.x, p.y, p.z).expect("write to string");
    }
    write_text(&root.join(POINTS_FILE), &points)?;

    let mut obs = String::from("# image_id point_id px py\n");
    for o in &ds.observations {
        writeln!(obs, "{} {} {} {}", o.image, o.point, o.pixel.x, o.pixel.y).expect("write to string");
    }
    write_text(&root.join(OBSERVATIONS_FILE), &obs)?;

    for (name, rows) in &ds.descriptors {
        write_descriptors(&root.join(DESCRIPTORS_DIR).join(format!("{name}.bin")), rows)?;
    }
    if let Some(matches) = &ds.matches {
        let dir = root.join(MATCHES_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_matches(&dir, matches)?;
    }
    if let Some(masks) = &ds.masks {
        let mut labels = String::new();
        for (k, v) in &masks.labels {
            writeln!(labels, "{k} {v}").expect("write to string");
        }
        write_text(&root.join(MASKS_DIR).join(MASK_LABELS_FILE), &labels)?;
    }
    Ok(())
}

pub fn mask_path(root: &Path, id: ImageId) -> PathBuf {
    root.join(MASKS_DIR).join(format!("{id}.png"))
}

pub fn image_path(root: &Path, id: ImageId) -> PathBuf {
    root.join(IMAGES_DIR).join(format!("{id}.png"))
}

/// Ranking file: `query_id db_id score rank`, rank starting at 1.
pub fn write_ranking(path: &Path, ranking: &Ranking) -> Result<()> {
    let mut s = String::from("# query_id db_id score rank\n");
    for (q, list) in &ranking.per_query {
        for (i, e) in list.iter().enumerate() {
            writeln!(s, "{q} {} {} {}", e.db, e.score, i + 1).expect("write to string");
        }
    }
    write_text(path, &s)
}

pub fn read_ranking(path: &Path) -> Result<Ranking> {
    let text = read_text(path)?;
    let mut lists: BTreeMap<ImageId, Vec<(usize, RankedEntry)>> = BTreeMap::new();
    for (line, fields) in records(&text) {
        let f = Fields::new(path, line, fields, 4)?;
        let rank: usize = f.get(3)?;
        if rank == 0 {
            return Err(f.err("ranks start at 1"));
        }
        lists.entry(f.get(0)?).or_default().push((rank, RankedEntry { db: f.get(1)?, score: f.get(2)? }));
    }
    let mut per_query = BTreeMap::new();
    for (q, mut list) in lists {
        list.sort_by_key(|(r, _)| *r);
        if list.iter().enumerate().any(|(i, (r, _))| *r != i + 1) {
            return Err(Error::Integrity(format!("ranks of query {q} in {} are not 1..n", path.display())));
        }
        per_query.insert(q, list.into_iter().map(|(_, e)| e).collect());
    }
    Ok(Ranking { per_query })
}
