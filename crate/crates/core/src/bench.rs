//! Benchmark runs: every ranking source through every localization paradigm
//! over a grid of k, with the retrieval, correlation and challenge tables
//! derived from the results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::challenge::{blur_score, dynamic_fraction, is_dynamic, BlurConfig, GrayImage, LabelMask, DEFAULT_DYNAMIC_THRESHOLD};
use crate::correlation::{correlate_per_dataset, correlate_per_query, scatter_series, CorrelationReport, HISTOGRAM_BINS, QUANTILE_LEVELS};
use crate::data_io::{image_path, load_dataset, mask_path, write_ranking, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseError};
use crate::gt_ranking::{build_gt_ranking, GtConfig, GtMethod};
use crate::ids::ImageId;
use crate::map_localize::{localize_global, localize_local_sfm, Failure, LocalizationResult, LocalizeConfig, MapImage, SceneMap};
use crate::metrics::{localized_percentage, mean_average_precision, mean_precision_at_k, precision_at_k, recall_at_k, AccuracyThresholds};
use crate::pose_approx::{interpolate_pose, weights_bdi, weights_csi, weights_ewb, CsiConfig, GlobalDescriptor, InterpolatedPose, Scheme};
use crate::retrieval::{rank_by_descriptor, Ranking, MAX_K};
use crate::synth::{derive_seed, name_code, write_synth_dataset, HarnessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    /// Pose approximation from retrieved poses.
    Approx,
    /// Registration against a map triangulated from the retrieved images.
    LocalSfm,
    /// Registration against the global map through the retrieved images.
    Global,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Approx, Paradigm::LocalSfm, Paradigm::Global];
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::Approx => "approx",
            Paradigm::LocalSfm => "local-sfm",
            Paradigm::Global => "global",
        })
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" | "1" => Ok(Paradigm::Approx),
            "local-sfm" | "2a" => Ok(Paradigm::LocalSfm),
            "global" | "2b" => Ok(Paradigm::Global),
            other => Err(Error::InvalidInput(format!("unknown paradigm {other:?}"))),
        }
    }
}

/// A paradigm together with its interpolation scheme where one applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Approx(Scheme),
    LocalSfm,
    Global,
}

impl Method {
    pub fn paradigm(self) -> Paradigm {
        match self {
            Method::Approx(_) => Paradigm::Approx,
            Method::LocalSfm => Paradigm::LocalSfm,
            Method::Global => Paradigm::Global,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Approx(s) => write!(f, "approx-{s}"),
            Method::LocalSfm => f.write_str("local-sfm"),
            Method::Global => f.write_str("global"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(scheme) = s.strip_prefix("approx-") {
            return Ok(Method::Approx(scheme.parse()?));
        }
        match s.parse()? {
            Paradigm::LocalSfm => Ok(Method::LocalSfm),
            Paradigm::Global => Ok(Method::Global),
            Paradigm::Approx => Err(Error::InvalidInput("approx needs a scheme, e.g. approx-ewb".into())),
        }
    }
}

/// Where a ranking comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceKind {
    Descriptor,
    Gt(GtMethod),
    /// A ranking read from a file, without descriptors.
    External,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceKind::Descriptor => f.write_str("descriptor"),
            SourceKind::Gt(m) => write!(f, "gt-{m}"),
            SourceKind::External => f.write_str("external"),
        }
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("gt-") {
            Some(m) => Ok(SourceKind::Gt(m.parse()?)),
            None if s == "descriptor" => Ok(SourceKind::Descriptor),
            None if s == "external" => Ok(SourceKind::External),
            None => Err(Error::InvalidInput(format!("unknown ranking source kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingSource {
    /// Feature name for descriptor rankings, `gt-<method>` otherwise.
    pub name: String,
    pub kind: SourceKind,
    pub ranking: Ranking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub paradigms: Vec<Paradigm>,
    pub k_grid: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub gt_methods: Vec<GtMethod>,
    /// Ground truth whose relevance sets define P@k, R@k and mAP.
    pub relevance: GtMethod,
    pub gt: GtConfig,
    pub thresholds: AccuracyThresholds,
    pub csi: CsiConfig,
    pub localize: LocalizeConfig,
    pub blur: BlurConfig,
    pub dynamic_threshold: f64,
    pub dynamic_classes: BTreeSet<String>,
    /// Descriptor features to evaluate; empty selects all of them.
    pub features: Vec<String>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            paradigms: Paradigm::ALL.to_vec(),
            k_grid: vec![1, 2, 3, 4, 5, 10, 20, 50],
            schemes: Scheme::ALL.to_vec(),
            gt_methods: GtMethod::ALL.to_vec(),
            relevance: GtMethod::Rcp,
            gt: GtConfig::default(),
            thresholds: AccuracyThresholds::default(),
            csi: CsiConfig::default(),
            localize: LocalizeConfig::default(),
            blur: BlurConfig::default(),
            dynamic_threshold: DEFAULT_DYNAMIC_THRESHOLD,
            dynamic_classes: ["person", "car"].into_iter().map(String::from).collect(),
            features: Vec::new(),
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.k_grid.is_empty() || self.k_grid[0] == 0 {
            return bad("k grid must be non-empty and start at 1 or above");
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("k grid must be strictly increasing");
        }
        if *self.k_grid.last().expect("non-empty") > MAX_K {
            return bad("k grid goes beyond 50");
        }
        if self.paradigms.is_empty() {
            return bad("no paradigm selected");
        }
        if self.paradigms.contains(&Paradigm::Approx) && self.schemes.is_empty() {
            return bad("pose approximation needs at least one scheme");
        }
        if let Some(f) = self.features.iter().find(|f| f.is_empty() || f.contains([',', '/', '\n'])) {
            return Err(Error::InvalidInput(format!("bad feature name {f:?}")));
        }
        Ok(())
    }

    fn methods_for(&self, kind: SourceKind) -> Vec<Method> {
        let mut out = Vec::new();
        for p in &self.paradigms {
            match p {
                // other rankings carry no descriptors, so equal weights only
                Paradigm::Approx if kind != SourceKind::Descriptor => out.push(Method::Approx(Scheme::Ewb)),
                Paradigm::Approx => out.extend(self.schemes.iter().map(|&s| Method::Approx(s))),
                Paradigm::LocalSfm => out.push(Method::LocalSfm),
                Paradigm::Global => out.push(Method::Global),
            }
        }
        out
    }
}

fn selected_features(ds: &Dataset, cfg: &BenchmarkConfig) -> Result<Vec<String>> {
    if cfg.features.is_empty() {
        return Ok(ds.descriptors.keys().cloned().collect());
    }
    for f in &cfg.features {
        if !ds.descriptors.contains_key(f) {
            return Err(Error::InvalidInput(format!("dataset has no descriptors named {f:?}")));
        }
    }
    Ok(cfg.features.clone())
}

/// Descriptor rankings for the selected features, then one ranking per
/// ground-truth method.
pub fn build_rankings(ds: &Dataset, cfg: &BenchmarkConfig) -> Result<Vec<RankingSource>> {
    let queries = ds.queries();
    let database = ds.database();
    let mut out = Vec::new();
    for feature in selected_features(ds, cfg)? {
        let all = ds.global_descriptors(&feature)?;
        let (q, db): (BTreeMap<_, _>, BTreeMap<_, _>) = all.into_iter().partition(|(id, _)| queries.contains_key(id));
        out.push(RankingSource { name: feature, kind: SourceKind::Descriptor, ranking: rank_by_descriptor(&q, &db, MAX_K) });
    }
    let joint = if cfg.gt_methods.contains(&GtMethod::Coobs) { Some(ds.joint_map()?) } else { None };
    for &m in &cfg.gt_methods {
        let gt = build_gt_ranking(m, &queries, &database, joint.as_ref(), &cfg.gt)?;
        out.push(RankingSource { name: format!("gt-{m}"), kind: SourceKind::Gt(m), ranking: gt.ranking });
    }
    Ok(out)
}

/// Localization results of one (source, method) cell, per k.
pub type CellResults = BTreeMap<usize, Vec<LocalizationResult>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub source: String,
    pub kind: SourceKind,
    pub method: Method,
    pub seed: u64,
    pub outcome: std::result::Result<CellResults, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub map: Option<f64>,
    /// P@k per query with a non-empty relevant set.
    pub per_query_precision: BTreeMap<ImageId, BTreeMap<usize, f64>>,
    /// 1 when a relevant image is in the top k, else 0.
    pub per_query_recall: BTreeMap<ImageId, BTreeMap<usize, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedRow {
    pub source: String,
    pub kind: String,
    pub method: String,
    pub k: usize,
    pub meters: f64,
    pub degrees: f64,
    pub localized_pct: f64,
}

/// Ground-truth ranking against a descriptor ranking for the same method and k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub method: String,
    pub gt: String,
    pub feature: String,
    pub k: usize,
    pub meters: f64,
    pub degrees: f64,
    pub gt_pct: f64,
    pub feature_pct: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub method: String,
    pub threshold: (f64, f64),
    pub report: CorrelationReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChallengeSubsets {
    pub blur_scores: BTreeMap<ImageId, f64>,
    pub dynamic_fractions: BTreeMap<ImageId, f64>,
    pub blurry: BTreeSet<ImageId>,
    pub dynamic: BTreeSet<ImageId>,
}

impl ChallengeSubsets {
    /// Non-empty named subsets: blurry, dynamic and their union.
    pub fn named(&self) -> Vec<(&'static str, BTreeSet<ImageId>)> {
        let union: BTreeSet<ImageId> = self.blurry.union(&self.dynamic).copied().collect();
        [("blurry", self.blurry.clone()), ("dynamic", self.dynamic.clone()), ("challenging", union)]
            .into_iter()
            .filter(|(_, s)| !s.is_empty())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeRow {
    pub subset: String,
    pub source: String,
    /// Localization method, or `retrieval` for P@k and R@k rows.
    pub method: String,
    pub k: usize,
    pub metric: String,
    pub all: f64,
    pub subset_value: f64,
    pub delta: f64,
}

/// Scores every query that has a rendered image or a mask under `root`.
pub fn detect_challenges(root: &Path, ds: &Dataset, cfg: &BenchmarkConfig) -> Result<ChallengeSubsets> {
    let queries: Vec<ImageId> = ds.queries().keys().copied().collect();
    let scored: Vec<(ImageId, Option<f64>, Option<f64>)> = queries
        .par_iter()
        .map(|&q| -> Result<_> {
            let path = image_path(root, q);
            let mad = if path.exists() { Some(blur_score(&GrayImage::open(&path)?, cfg.blur.cutoff)?) } else { None };
            let fraction = match &ds.masks {
                Some(m) if m.images.contains(&q) => {
                    Some(dynamic_fraction(&LabelMask::open(&mask_path(root, q))?, &m.labels, &cfg.dynamic_classes))
                }
                _ => None,
            };
            Ok((q, mad, fraction))
        })
        .collect::<Result<_>>()?;
    let mut out = ChallengeSubsets::default();
    for (q, mad, fraction) in scored {
        if let Some(mad) = mad {
            out.blur_scores.insert(q, mad);
            if cfg.blur.is_blurry(mad) {
                out.blurry.insert(q);
            }
        }
        if let Some(f) = fraction {
            out.dynamic_fractions.insert(q, f);
            if is_dynamic(f, cfg.dynamic_threshold) {
                out.dynamic.insert(q);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub config: BenchmarkConfig,
    /// Relative input path to SHA-256, filled in by the caller.
    pub inputs: BTreeMap<String, String>,
    pub cells: Vec<Cell>,
    pub retrieval: BTreeMap<String, RetrievalMetrics>,
    pub localized: Vec<LocalizedRow>,
    pub upper_bound_gap: Vec<GapRow>,
    pub correlations: Vec<CorrelationEntry>,
    pub subsets: ChallengeSubsets,
    pub challenge: Vec<ChallengeRow>,
}

impl ReportBundle {
    pub fn failed_cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }

    pub fn cell(&self, source: &str, method: Method) -> Option<&CellResults> {
        self.cells.iter().find(|c| c.source == source && c.method == method)?.outcome.as_ref().ok()
    }

    /// Localized percentage of a cell at one k and threshold.
    pub fn localized(&self, source: &str, method: Method, k: usize, meters: f64, degrees: f64) -> Option<f64> {
        localized_percentage(self.cell(source, method)?.get(&k)?, meters, degrees).ok()
    }
}

struct Context<'a> {
    cfg: &'a BenchmarkConfig,
    ds: &'a Dataset,
    queries: BTreeMap<ImageId, MapImage>,
    database: BTreeMap<ImageId, MapImage>,
    descriptors: BTreeMap<String, BTreeMap<ImageId, GlobalDescriptor>>,
    global_map: std::result::Result<SceneMap, String>,
}

impl Context<'_> {
    fn run_cell(&self, src: &RankingSource, method: Method, seed: u64) -> Result<CellResults> {
        if method != Method::Approx(Scheme::Ewb) && matches!(method, Method::Approx(_)) && src.kind != SourceKind::Descriptor {
            return Err(Error::InvalidInput(format!("{method} needs descriptors; {} has none", src.name)));
        }
        if matches!(method, Method::LocalSfm | Method::Global) && self.ds.matches.is_none() {
            return Err(Error::InvalidInput("dataset has no matches".into()));
        }
        if method == Method::Global {
            if let Err(e) = &self.global_map {
                return Err(Error::MapInvariant(e.clone()));
            }
        }
        self.cfg
            .k_grid
            .par_iter()
            .map(|&k| {
                let results = self
                    .queries
                    .par_iter()
                    .map(|(&q, qi)| self.localize_one(src, method, seed, k, q, qi))
                    .collect::<Result<Vec<_>>>()?;
                Ok((k, results))
            })
            .collect()
    }

    fn localize_one(
        &self,
        src: &RankingSource,
        method: Method,
        seed: u64,
        k: usize,
        q: ImageId,
        qi: &MapImage,
    ) -> Result<LocalizationResult> {
        let retrieved = src.ranking.top_k(q, k);
        let mut lc = self.cfg.localize;
        lc.ransac.seed = derive_seed(seed, &[k as u64, q.0 as u64]);
        let result = match method {
            Method::Approx(_) if retrieved.is_empty() => LocalizationResult::failed(q, Failure::NothingRetrieved),
            Method::Approx(scheme) => {
                let poses: Vec<Pose> = retrieved
                    .iter()
                    .map(|id| self.database.get(id).map(|m| m.pose).ok_or(Error::UnknownImage(*id)))
                    .collect::<Result<_>>()?;
                let weights = match scheme {
                    Scheme::Ewb => weights_ewb(poses.len())?,
                    Scheme::Bdi | Scheme::Csi => {
                        let desc = &self.descriptors[&src.name];
                        let get = |id: &ImageId| desc.get(id).cloned().ok_or(Error::UnknownImage(*id));
                        let dq = get(&q)?;
                        let dr: Vec<GlobalDescriptor> = retrieved.iter().map(get).collect::<Result<_>>()?;
                        if scheme == Scheme::Bdi {
                            weights_bdi(&dq, &dr)?
                        } else {
                            weights_csi(&dq, &dr, &self.cfg.csi)?
                        }
                    }
                };
                match interpolate_pose(&poses, &weights)? {
                    InterpolatedPose::Pose(p) => LocalizationResult::success(q, p, 0),
                    InterpolatedPose::Degenerate { .. } => LocalizationResult::failed(q, Failure::DegenerateInterpolation),
                }
            }
            Method::LocalSfm => {
                let matches = self.ds.matches.as_ref().expect("checked");
                localize_local_sfm(q, &qi.intrinsics, &retrieved, &self.database, matches, &lc)?
            }
            Method::Global => {
                let matches = self.ds.matches.as_ref().expect("checked");
                let map = self.global_map.as_ref().expect("checked");
                localize_global(q, &qi.intrinsics, &retrieved, map, matches, &lc)?
            }
        };
        Ok(result.with_reference(&qi.pose))
    }
}

fn retrieval_metrics(
    ranking: &Ranking,
    relevant: &BTreeMap<ImageId, BTreeSet<ImageId>>,
    k_grid: &[usize],
) -> Result<RetrievalMetrics> {
    let mut out = RetrievalMetrics::default();
    let eligible = relevant.values().any(|r| !r.is_empty());
    if !eligible {
        return Ok(out);
    }
    for &k in k_grid {
        out.precision.insert(k, mean_precision_at_k(ranking, relevant, k)?);
        out.recall.insert(k, recall_at_k(ranking, relevant, k)?);
    }
    out.map = Some(mean_average_precision(ranking, relevant)?);
    for (&q, rel) in relevant.iter().filter(|(_, r)| !r.is_empty()) {
        for &k in k_grid {
            let top = ranking.top_k(q, k);
            let p = precision_at_k(&top, rel, k)?;
            out.per_query_precision.entry(q).or_default().insert(k, p);
            out.per_query_recall.entry(q).or_default().insert(k, if p > 0.0 { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

fn threshold_label(meters: f64, degrees: f64) -> String {
    format!("localized({meters}m,{degrees}deg)")
}

/// Runs every (source, method) cell over the k grid. Cell failures are
/// recorded in the bundle and do not stop the run.
pub fn run_benchmark(
    ds: &Dataset,
    sources: &[RankingSource],
    subsets: &ChallengeSubsets,
    cfg: &BenchmarkConfig,
) -> Result<ReportBundle> {
    cfg.validate()?;
    let queries = ds.queries();
    let database = ds.database();
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let joint = if cfg.relevance == GtMethod::Coobs { Some(ds.joint_map()?) } else { None };
    let relevant = build_gt_ranking(cfg.relevance, &queries, &database, joint.as_ref(), &cfg.gt)?.relevant;

    let mut descriptors = BTreeMap::new();
    for s in sources.iter().filter(|s| s.kind == SourceKind::Descriptor) {
        descriptors.insert(s.name.clone(), ds.global_descriptors(&s.name)?);
    }
    let global_map = if cfg.paradigms.contains(&Paradigm::Global) {
        ds.global_map().map_err(|e| e.to_string())
    } else {
        Err("global map not requested".into())
    };
    let ctx = Context { cfg, ds, queries, database, descriptors, global_map };

    let jobs: Vec<(&RankingSource, Method, u64)> = sources
        .iter()
        .flat_map(|s| {
            cfg.methods_for(s.kind).into_iter().map(move |m| {
                let seed = derive_seed(cfg.seed, &[name_code(&s.name), name_code(&m.to_string())]);
                (s, m, seed)
            })
        })
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(s, method, seed)| {
            let outcome = ctx.run_cell(s, method, seed).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("cell {}/{method} failed: {e}", s.name);
            }
            Cell { source: s.name.clone(), kind: s.kind, method, seed, outcome }
        })
        .collect();

    let mut retrieval = BTreeMap::new();
    for s in sources {
        retrieval.insert(s.name.clone(), retrieval_metrics(&s.ranking, &relevant, &cfg.k_grid)?);
    }

    let mut bundle = ReportBundle {
        config: cfg.clone(),
        inputs: BTreeMap::new(),
        cells,
        retrieval,
        localized: Vec::new(),
        upper_bound_gap: Vec::new(),
        correlations: Vec::new(),
        subsets: subsets.clone(),
        challenge: Vec::new(),
    };
    derive_tables(&mut bundle, &relevant, sources)?;
    Ok(bundle)
}

/// Fills the localized, gap, correlation and challenge tables from the cells
/// and retrieval metrics.
fn derive_tables(
    bundle: &mut ReportBundle,
    relevant: &BTreeMap<ImageId, BTreeSet<ImageId>>,
    sources: &[RankingSource],
) -> Result<()> {
    let cfg = &bundle.config;
    let mut localized = Vec::new();
    for cell in &bundle.cells {
        let Ok(results) = &cell.outcome else { continue };
        for (&k, rs) in results {
            for &(m, d) in cfg.thresholds.pairs() {
                localized.push(LocalizedRow {
                    source: cell.source.clone(),
                    kind: cell.kind.to_string(),
                    method: cell.method.to_string(),
                    k,
                    meters: m,
                    degrees: d,
                    localized_pct: localized_percentage(rs, m, d)?,
                });
            }
        }
    }

    let mut gaps = Vec::new();
    for g in bundle.cells.iter().filter(|c| matches!(c.kind, SourceKind::Gt(_))) {
        let Ok(gt_results) = &g.outcome else { continue };
        for f in bundle.cells.iter().filter(|c| c.kind == SourceKind::Descriptor) {
            let comparable = match f.method {
                Method::Approx(_) => g.method == Method::Approx(Scheme::Ewb),
                m => g.method == m,
            };
            let Ok(f_results) = &f.outcome else { continue };
            if !comparable {
                continue;
            }
            for (&k, rs) in f_results {
                let Some(grs) = gt_results.get(&k) else { continue };
                for &(m, d) in cfg.thresholds.pairs() {
                    let (gt_pct, feature_pct) = (localized_percentage(grs, m, d)?, localized_percentage(rs, m, d)?);
                    gaps.push(GapRow {
                        method: f.method.to_string(),
                        gt: g.source.clone(),
                        feature: f.source.clone(),
                        k,
                        meters: m,
                        degrees: d,
                        gt_pct,
                        feature_pct,
                        gap: gt_pct - feature_pct,
                    });
                }
            }
        }
    }

    let correlations = compute_correlations(cfg, &bundle.cells, &bundle.retrieval)?;

    let mut challenge = Vec::new();
    for (name, subset) in bundle.subsets.named() {
        for cell in &bundle.cells {
            let Ok(results) = &cell.outcome else { continue };
            for (&k, rs) in results {
                let sub: Vec<LocalizationResult> = rs.iter().filter(|r| subset.contains(&r.query)).cloned().collect();
                if sub.is_empty() {
                    continue;
                }
                for &(m, d) in cfg.thresholds.pairs() {
                    let (all, part) = (localized_percentage(rs, m, d)?, localized_percentage(&sub, m, d)?);
                    challenge.push(ChallengeRow {
                        subset: name.into(),
                        source: cell.source.clone(),
                        method: cell.method.to_string(),
                        k,
                        metric: threshold_label(m, d),
                        all,
                        subset_value: part,
                        delta: part - all,
                    });
                }
            }
        }
        let sub_relevant: BTreeMap<ImageId, BTreeSet<ImageId>> =
            relevant.iter().filter(|(q, _)| subset.contains(q)).map(|(q, r)| (*q, r.clone())).collect();
        if !sub_relevant.values().any(|r| !r.is_empty()) {
            continue;
        }
        for s in sources {
            for &k in &cfg.k_grid {
                let pairs = [
                    ("P@k", mean_precision_at_k(&s.ranking, relevant, k)?, mean_precision_at_k(&s.ranking, &sub_relevant, k)?),
                    ("R@k", recall_at_k(&s.ranking, relevant, k)?, recall_at_k(&s.ranking, &sub_relevant, k)?),
                ];
                for (metric, all, part) in pairs {
                    challenge.push(ChallengeRow {
                        subset: name.into(),
                        source: s.name.clone(),
                        method: "retrieval".into(),
                        k,
                        metric: metric.into(),
                        all,
                        subset_value: part,
                        delta: part - all,
                    });
                }
            }
        }
    }

    bundle.localized = localized;
    bundle.upper_bound_gap = gaps;
    bundle.correlations = correlations;
    bundle.challenge = challenge;
    Ok(())
}

/// Retrieval metrics against localization over descriptor features, per
/// method, retrieval metric and accuracy threshold. Per query, metric B is
/// the position error of successful localizations.
pub fn compute_correlations(
    cfg: &BenchmarkConfig,
    cells: &[Cell],
    retrieval: &BTreeMap<String, RetrievalMetrics>,
) -> Result<Vec<CorrelationEntry>> {
    let methods: BTreeSet<Method> = cells.iter().filter(|c| c.kind == SourceKind::Descriptor).map(|c| c.method).collect();
    let mut out = Vec::new();
    for method in methods {
        let feature_cells: Vec<(&String, &CellResults)> = cells
            .iter()
            .filter(|c| c.kind == SourceKind::Descriptor && c.method == method)
            .filter_map(|c| Some((&c.source, c.outcome.as_ref().ok()?)))
            .collect();
        let errors: BTreeMap<&String, BTreeMap<ImageId, BTreeMap<usize, f64>>> = feature_cells
            .iter()
            .map(|(f, results)| {
                let mut per_query: BTreeMap<ImageId, BTreeMap<usize, f64>> = BTreeMap::new();
                for (&k, rs) in *results {
                    for r in rs {
                        if let (true, Some(e)) = (r.is_success(), r.error) {
                            per_query.entry(r.query).or_default().insert(k, e.c_error);
                        }
                    }
                }
                (*f, per_query)
            })
            .collect();
        for metric in ["P@k", "R@k"] {
            let mut per_query = BTreeMap::new();
            let mut series_a = BTreeMap::new();
            for (f, _) in &feature_cells {
                let Some(rm) = retrieval.get(*f) else { continue };
                let (pq, series) = if metric == "P@k" {
                    (&rm.per_query_precision, &rm.precision)
                } else {
                    (&rm.per_query_recall, &rm.recall)
                };
                per_query.insert((*f).clone(), correlate_per_query(pq, &errors[f], &cfg.k_grid)?);
                series_a.insert((*f).clone(), series.clone());
            }
            for &(m, d) in cfg.thresholds.pairs() {
                let series_b: BTreeMap<String, BTreeMap<usize, f64>> = feature_cells
                    .iter()
                    .map(|(f, results)| {
                        let s = results.iter().map(|(&k, rs)| Ok((k, localized_percentage(rs, m, d)?))).collect::<Result<_>>()?;
                        Ok(((*f).clone(), s))
                    })
                    .collect::<Result<_>>()?;
                out.push(CorrelationEntry {
                    method: method.to_string(),
                    threshold: (m, d),
                    report: CorrelationReport {
                        metric_a: metric.into(),
                        metric_b: threshold_label(m, d),
                        per_query: per_query.clone(),
                        per_dataset: correlate_per_dataset(&series_a, &series_b, &cfg.k_grid)?,
                        scatter: scatter_series(&series_a, &series_b),
                    },
                });
            }
        }
    }
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of every file below `root`, keyed by relative path.
pub fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("below root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, sha256_hex(&fs::read(&path).map_err(|e| Error::io(&path, e))?));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const RESULTS_FILE: &str = "results.csv";
pub const PER_QUERY_RETRIEVAL_FILE: &str = "per_query_retrieval.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_HASH_FILE: &str = "manifest.sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub source: String,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: BenchmarkConfig,
    pub cell_seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub failed_cells: Vec<FailedCell>,
}

fn write_correlation_files(out: &Path, correlations: &[CorrelationEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(correlations)?;
    let path = out.join("correlation.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let mut scatter = Vec::new();
    let mut violin = Vec::new();
    let mut seen = BTreeSet::new();
    for c in correlations {
        for p in &c.report.scatter {
            scatter.push(vec![
                c.method.clone(),
                c.report.metric_a.clone(),
                c.report.metric_b.clone(),
                p.feature.clone(),
                p.k.to_string(),
                p.a.to_string(),
                p.b.to_string(),
            ]);
        }
        // the per-query part does not depend on the threshold
        if !seen.insert((c.method.clone(), c.report.metric_a.clone())) {
            continue;
        }
        for (feature, pq) in &c.report.per_query {
            let mut row = vec![
                c.method.clone(),
                c.report.metric_a.clone(),
                feature.clone(),
                pq.coefficients.len().to_string(),
                pq.undefined.len().to_string(),
            ];
            match &pq.distribution {
                Some(d) => {
                    row.extend(d.quantiles.iter().map(f64::to_string));
                    row.extend(d.histogram.iter().map(usize::to_string));
                }
                None => row.extend(std::iter::repeat_n(String::new(), QUANTILE_LEVELS.len() + HISTOGRAM_BINS)),
            }
            violin.push(row);
        }
    }
    write_csv(&out.join("scatter.csv"), &["method", "metric_a", "metric_b", "feature", "k", "a", "b"], scatter)?;
    let mut header: Vec<String> =
        ["method", "metric_a", "feature", "defined", "undefined"].iter().map(|s| s.to_string()).collect();
    header.extend(QUANTILE_LEVELS.iter().map(|q| format!("q{:02}", (q * 100.0).round() as u32)));
    header.extend((0..HISTOGRAM_BINS).map(|i| format!("bin{i:02}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out.join("violin.csv"), &header, violin)
}

/// Writes every report file and the manifest. Returns the manifest hash.
pub fn emit_reports(bundle: &ReportBundle, out: &Path) -> Result<String> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg = &bundle.config;
    let mut written: Vec<String> = Vec::new();
    let mut note = |name: &str| written.push(name.to_string());

    let mut rows = Vec::new();
    for (source, rm) in &bundle.retrieval {
        for (k, v) in &rm.precision {
            rows.push(vec!["precision".into(), source.clone(), k.to_string(), v.to_string()]);
        }
        for (k, v) in &rm.recall {
            rows.push(vec!["recall".into(), source.clone(), k.to_string(), v.to_string()]);
        }
        if let Some(m) = rm.map {
            rows.push(vec!["map".into(), source.clone(), "all".into(), m.to_string()]);
        }
    }
    write_csv(&out.join(METRICS_FILE), &["metric", "source", "k", "value"], rows)?;
    note(METRICS_FILE);

    let mut rows = Vec::new();
    for (source, rm) in &bundle.retrieval {
        for (q, per_k) in &rm.per_query_precision {
            for (k, p) in per_k {
                let r = rm.per_query_recall[q][k];
                rows.push(vec![source.clone(), q.to_string(), k.to_string(), p.to_string(), r.to_string()]);
            }
        }
    }
    write_csv(&out.join(PER_QUERY_RETRIEVAL_FILE), &["source", "query", "k", "precision", "recall"], rows)?;
    note(PER_QUERY_RETRIEVAL_FILE);

    write_results(&out.join(RESULTS_FILE), &bundle.cells)?;
    note(RESULTS_FILE);

    write_csv(
        &out.join("localization.csv"),
        &["source", "kind", "method", "k", "meters", "degrees", "localized_pct"],
        bundle.localized.iter().map(|r| {
            vec![r.source.clone(), r.kind.clone(), r.method.clone(), r.k.to_string(), r.meters.to_string(), r.degrees.to_string(), r.localized_pct.to_string()]
        }),
    )?;
    note("localization.csv");

    // plot-ready series: one file per method, one row per (source, k)
    let methods: BTreeSet<Method> = bundle.cells.iter().map(|c| c.method).collect();
    for method in methods {
        let mut header: Vec<String> = vec!["source".into(), "kind".into(), "k".into()];
        header.extend(cfg.thresholds.pairs().iter().map(|&(m, d)| threshold_label(m, d)));
        let mut rows = Vec::new();
        for cell in bundle.cells.iter().filter(|c| c.method == method) {
            let Ok(results) = &cell.outcome else { continue };
            for (k, rs) in results {
                let mut row = vec![cell.source.clone(), cell.kind.to_string(), k.to_string()];
                for &(m, d) in cfg.thresholds.pairs() {
                    row.push(localized_percentage(rs, m, d)?.to_string());
                }
                rows.push(row);
            }
        }
        let name = format!("series_{method}.csv");
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&out.join(&name), &header, rows)?;
        note(&name);
    }

    write_csv(
        &out.join("upper_bound_gap.csv"),
        &["method", "gt", "feature", "k", "meters", "degrees", "gt_pct", "feature_pct", "gap"],
        bundle.upper_bound_gap.iter().map(|g| {
            vec![
                g.method.clone(),
                g.gt.clone(),
                g.feature.clone(),
                g.k.to_string(),
                g.meters.to_string(),
                g.degrees.to_string(),
                g.gt_pct.to_string(),
                g.feature_pct.to_string(),
                g.gap.to_string(),
            ]
        }),
    )?;
    note("upper_bound_gap.csv");

    write_correlation_files(out, &bundle.correlations)?;
    note("correlation.json");
    note("scatter.csv");
    note("violin.csv");

    write_subset_files(out, &bundle.subsets)?;
    for f in ["challenge_scores.csv", "blurry.txt", "dynamic.txt"] {
        note(f);
    }
    write_csv(
        &out.join("challenge.csv"),
        &["subset", "source", "method", "k", "metric", "all", "subset_value", "delta"],
        bundle.challenge.iter().map(|c| {
            vec![
                c.subset.clone(),
                c.source.clone(),
                c.method.clone(),
                c.k.to_string(),
                c.metric.clone(),
                c.all.to_string(),
                c.subset_value.to_string(),
                c.delta.to_string(),
            ]
        }),
    )?;
    note("challenge.csv");

    let mut outputs = BTreeMap::new();
    for name in &written {
        let path = out.join(name);
        outputs.insert(name.clone(), sha256_hex(&fs::read(&path).map_err(|e| Error::io(&path, e))?));
    }
    let manifest = Manifest {
        config: cfg.clone(),
        cell_seeds: bundle.cells.iter().map(|c| (format!("{}/{}", c.source, c.method), c.seed)).collect(),
        inputs: bundle.inputs.clone(),
        outputs,
        failed_cells: bundle
            .failed_cells()
            .map(|c| FailedCell {
                source: c.source.clone(),
                method: c.method.to_string(),
                error: c.outcome.as_ref().err().cloned().unwrap_or_default(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, &json).map_err(|e| Error::io(&path, e))?;
    let hash = sha256_hex(json.as_bytes());
    let path = out.join(MANIFEST_HASH_FILE);
    fs::write(&path, format!("{hash}  {MANIFEST_FILE}\n")).map_err(|e| Error::io(&path, e))?;
    Ok(hash)
}

/// One row per (cell, k, query) with status, errors and estimated pose.
pub fn write_results(path: &Path, cells: &[Cell]) -> Result<()> {
    let mut rows = Vec::new();
    for cell in cells {
        let Ok(results) = &cell.outcome else { continue };
        for (k, rs) in results {
            for r in rs {
                let mut row = vec![cell.source.clone(), cell.kind.to_string(), cell.method.to_string(), k.to_string(), r.query.to_string()];
                match &r.estimate {
                    Ok(p) => {
                        row.push("ok".into());
                        row.push(fmt_opt(r.error.map(|e| e.c_error)));
                        row.push(fmt_opt(r.error.map(|e| e.r_error)));
                        row.push(r.num_inliers.to_string());
                        row.extend(p.wxyz().iter().map(f64::to_string));
                        row.extend(p.center().iter().map(f64::to_string));
                    }
                    Err(f) => {
                        row.push(serde_json::to_value(f)?.as_str().expect("unit variant").to_string());
                        row.extend(std::iter::repeat_n(String::new(), 10));
                    }
                }
                rows.push(row);
            }
        }
    }
    write_csv(
        path,
        &["source", "kind", "method", "k", "query", "status", "c_error", "r_error", "inliers", "qw", "qx", "qy", "qz", "cx", "cy", "cz"],
        rows,
    )
}

/// Blur scores, dynamic fractions and the subset membership lists.
pub fn write_subset_files(out: &Path, subsets: &ChallengeSubsets) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ids: BTreeSet<ImageId> = subsets.blur_scores.keys().chain(subsets.dynamic_fractions.keys()).copied().collect();
    write_csv(
        &out.join("challenge_scores.csv"),
        &["image", "mad", "dynamic_fraction", "blurry", "dynamic"],
        ids.iter().map(|id| {
            vec![
                id.to_string(),
                fmt_opt(subsets.blur_scores.get(id).copied()),
                fmt_opt(subsets.dynamic_fractions.get(id).copied()),
                subsets.blurry.contains(id).to_string(),
                subsets.dynamic.contains(id).to_string(),
            ]
        }),
    )?;
    for (name, set) in [("blurry.txt", &subsets.blurry), ("dynamic.txt", &subsets.dynamic)] {
        let text: String = set.iter().map(|id| format!("{id}\n")).collect();
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads a subset list (one image id per line).
pub fn read_id_list(path: &Path) -> Result<BTreeSet<ImageId>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| l.trim().parse().map_err(|_| Error::parse(path, i + 1, format!("bad image id {l:?}"))))
        .collect()
}

fn field<T: FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(path, line, format!("bad value in column {}", i + 1)))
}

/// Reads a results file written by [`emit_reports`] back into cells.
pub fn read_results(path: &Path) -> Result<Vec<Cell>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut cells: BTreeMap<(String, Method), (SourceKind, CellResults)> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(path)?;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let source = rec.get(0).unwrap_or_default().to_string();
        let kind: SourceKind = field(path, line, &rec, 1)?;
        let method: Method = field(path, line, &rec, 2)?;
        let k: usize = field(path, line, &rec, 3)?;
        let query: ImageId = field(path, line, &rec, 4)?;
        let status = rec.get(5).unwrap_or_default();
        let result = if status == "ok" {
            let q = [field(path, line, &rec, 9)?, field(path, line, &rec, 10)?, field(path, line, &rec, 11)?, field(path, line, &rec, 12)?];
            let c = Vector3::new(field(path, line, &rec, 13)?, field(path, line, &rec, 14)?, field(path, line, &rec, 15)?);
            let pose = Pose::new(c, q).map_err(|e| Error::parse(path, line, e.to_string()))?;
            let mut r = LocalizationResult::success(query, pose, field(path, line, &rec, 8)?);
            if !rec.get(6).unwrap_or_default().is_empty() {
                r.error = Some(PoseError { c_error: field(path, line, &rec, 6)?, r_error: field(path, line, &rec, 7)? });
            }
            r
        } else {
            let failure: Failure = serde_json::from_value(serde_json::Value::String(status.into()))
                .map_err(|_| Error::parse(path, line, format!("unknown status {status:?}")))?;
            LocalizationResult::failed(query, failure)
        };
        cells.entry((source, method)).or_insert_with(|| (kind, BTreeMap::new())).1.entry(k).or_default().push(result);
    }
    Ok(cells
        .into_iter()
        .map(|((source, method), (kind, results))| Cell { source, kind, method, seed: 0, outcome: Ok(results) })
        .collect())
}

/// Reads the dataset-level and per-query retrieval metrics of a report directory.
pub fn read_retrieval(dir: &Path) -> Result<BTreeMap<String, RetrievalMetrics>> {
    let mut out: BTreeMap<String, RetrievalMetrics> = BTreeMap::new();
    let path = dir.join(METRICS_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let mut reader = csv::Reader::from_path(&path)?;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let entry = out.entry(rec.get(1).unwrap_or_default().to_string()).or_default();
        let value: f64 = field(&path, i + 2, &rec, 3)?;
        match rec.get(0).unwrap_or_default() {
            "precision" => {
                entry.precision.insert(field(&path, i + 2, &rec, 2)?, value);
            }
            "recall" => {
                entry.recall.insert(field(&path, i + 2, &rec, 2)?, value);
            }
            "map" => entry.map = Some(value),
            other => return Err(Error::parse(&path, i + 2, format!("unknown metric {other:?}"))),
        }
    }
    let path = dir.join(PER_QUERY_RETRIEVAL_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let mut reader = csv::Reader::from_path(&path)?;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let entry = out.entry(rec.get(0).unwrap_or_default().to_string()).or_default();
        let q: ImageId = field(&path, line, &rec, 1)?;
        let k: usize = field(&path, line, &rec, 2)?;
        entry.per_query_precision.entry(q).or_default().insert(k, field(&path, line, &rec, 3)?);
        entry.per_query_recall.entry(q).or_default().insert(k, field(&path, line, &rec, 4)?);
    }
    Ok(out)
}

/// Recomputes the correlation files of a finished run directory into `out`.
pub fn correlate_run(run_dir: &Path, out: &Path) -> Result<Vec<CorrelationEntry>> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
    let cells = read_results(&run_dir.join(RESULTS_FILE))?;
    let retrieval = read_retrieval(run_dir)?;
    let correlations = compute_correlations(&manifest.config, &cells, &retrieval)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_correlation_files(out, &correlations)?;
    Ok(correlations)
}

/// Ranking of every query by `rcp`, `frustum`, `coobs` or `desc:<feature>`.
pub fn rank_by_name(ds: &Dataset, name: &str, gt: &GtConfig) -> Result<Ranking> {
    let (queries, database) = (ds.queries(), ds.database());
    if let Some(feature) = name.strip_prefix("desc:") {
        let all = ds.global_descriptors(feature)?;
        let (q, db): (BTreeMap<_, _>, BTreeMap<_, _>) = all.into_iter().partition(|(id, _)| queries.contains_key(id));
        return Ok(rank_by_descriptor(&q, &db, MAX_K));
    }
    let method: GtMethod = name.parse()?;
    let joint = if method == GtMethod::Coobs { Some(ds.joint_map()?) } else { None };
    Ok(build_gt_ranking(method, &queries, &database, joint.as_ref(), gt)?.ranking)
}

/// Full run over a dataset directory: challenge detection, rankings (written
/// to `out/rankings`), every benchmark cell and the report files. Returns the
/// bundle and the manifest hash.
pub fn run_pipeline(data: &Path, cfg: &BenchmarkConfig, out: &Path) -> Result<(ReportBundle, String)> {
    let ds = load_dataset(data)?;
    let subsets = detect_challenges(data, &ds, cfg)?;
    let sources = build_rankings(&ds, cfg)?;
    for s in &sources {
        write_ranking(&out.join("rankings").join(format!("{}.txt", s.name)), &s.ranking)?;
    }
    let mut bundle = run_benchmark(&ds, &sources, &subsets, cfg)?;
    bundle.inputs = hash_tree(data)?;
    let hash = emit_reports(&bundle, out)?;
    Ok((bundle, hash))
}

/// Writes a synthetic dataset to `out/dataset` (replacing any previous one)
/// and runs [`run_pipeline`] on it.
pub fn run_synthetic(harness: &HarnessConfig, cfg: &BenchmarkConfig, out: &Path) -> Result<(ReportBundle, String)> {
    let dir = out.join("dataset");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_synth_dataset(harness, &dir)?;
    run_pipeline(&dir, cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in [Method::Approx(Scheme::Bdi), Method::LocalSfm, Method::Global] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        for k in [SourceKind::Descriptor, SourceKind::Gt(GtMethod::Coobs)] {
            assert_eq!(k.to_string().parse::<SourceKind>().unwrap(), k);
        }
        assert!("approx".parse::<Method>().is_err());
    }

    #[test]
    fn k_grid_is_checked() {
        let cfg = |k_grid: Vec<usize>| BenchmarkConfig { k_grid, ..Default::default() };
        assert!(cfg(vec![1, 2, 50]).validate().is_ok());
        assert!(cfg(vec![2, 1]).validate().is_err());
        assert!(cfg(vec![1, 51]).validate().is_err());
        assert!(cfg(vec![0, 1]).validate().is_err());
        assert!(cfg(vec![]).validate().is_err());
    }

    #[test]
    fn ground_truth_sources_use_equal_weights() {
        let cfg = BenchmarkConfig::default();
        assert_eq!(
            cfg.methods_for(SourceKind::Gt(GtMethod::Rcp)),
            vec![Method::Approx(Scheme::Ewb), Method::LocalSfm, Method::Global]
        );
        assert_eq!(cfg.methods_for(SourceKind::Descriptor).len(), 5);
    }
}
