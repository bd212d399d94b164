//! C interface to the benchmark toolkit.
//!
//! Every function returns an [`LbStatus`]; on failure the message is kept per
//! thread and can be read with [`lb_last_error_message`]. Objects are handed
//! out as opaque pointers and released with the matching `*_free` function.
//! Panics never cross the boundary; they surface as [`LbStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use locbench::bench::{rank_by_name, run_pipeline, run_synthetic, BenchmarkConfig, Method, ReportBundle};
use locbench::challenge::{blur_score, GrayImage};
use locbench::data_io::{load_dataset, write_ranking, Dataset};
use locbench::geometry::{Pose, PoseError};
use locbench::gt_ranking::GtConfig;
use locbench::retrieval::Ranking;
use locbench::synth::{write_synth_dataset, HarnessConfig};
use locbench::{Error, ImageId};
use nalgebra::Vector3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Integrity = 5,
    NotFound = 6,
    BufferTooSmall = 7,
    Failed = 8,
    Panic = 9,
}

/// A loaded dataset directory.
pub struct LbDataset {
    inner: Dataset,
}

/// Per-query ordered database images.
pub struct LbRanking {
    inner: Ranking,
}

/// Results of a full benchmark run.
pub struct LbRun {
    bundle: ReportBundle,
    hash: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> LbStatus {
    match err {
        Error::Io { .. } | Error::Image(_) => LbStatus::Io,
        Error::MissingFile(_) | Error::UnknownImage(_) => LbStatus::NotFound,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => LbStatus::Parse,
        Error::Integrity(_) | Error::MapInvariant(_) => LbStatus::Integrity,
        Error::InvalidInput(_) | Error::DegenerateQuaternion { .. } | Error::EmptyQuerySet => LbStatus::InvalidArgument,
        Error::LinearProgram(_) => LbStatus::Failed,
    }
}

struct Fail(LbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LbStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LbStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LbStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LbStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> Result<T, Fail> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| Fail(LbStatus::Parse, format!("config: {e}"))),
    }
}

/// Copies `s` with its terminating nul into `buf`; `needed` receives the full size.
unsafe fn copy_out(s: &CStr, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Fail> {
    let bytes = s.to_bytes_with_nul();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len();
    }
    if buf.is_null() {
        return if len == 0 { Ok(()) } else { Err(null("buf")) };
    }
    if len < bytes.len() {
        return Err(Fail(LbStatus::BufferTooSmall, format!("need {} bytes, have {len}", bytes.len())));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn lb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Size in bytes (including the nul) of the calling thread's last error
/// message, or 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn lb_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |m| m.as_bytes_with_nul().len()))
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lb_last_error_message(buf: *mut c_char, len: usize) -> LbStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone()).unwrap_or_default();
    if buf.is_null() {
        return LbStatus::NullArgument;
    }
    let bytes = msg.as_bytes_with_nul();
    if len < bytes.len() {
        return LbStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
    LbStatus::Ok
}

/// Loads and validates the dataset stored under `path`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lb_dataset_load(path: *const c_char, out: *mut *mut LbDataset) -> LbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = load_dataset(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(LbDataset { inner }));
        Ok(())
    })
}

/// Writes a synthetic dataset to `path` and returns it loaded.
/// `harness_json` may be null for the default harness.
///
/// # Safety
/// String arguments must be nul-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lb_dataset_write_synthetic(
    harness_json: *const c_char,
    path: *const c_char,
    out: *mut *mut LbDataset,
) -> LbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let harness: HarnessConfig = parse_json(opt_str_arg(harness_json, "harness_json")?)?;
        let inner = write_synth_dataset(&harness, &PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(LbDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lb_dataset_free(ds: *mut LbDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of database and query images.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lb_dataset_counts(ds: *const LbDataset, n_database: *mut usize, n_query: *mut usize) -> LbStatus {
    guard(|| {
        let ds = ref_arg(ds, "ds")?;
        *out_arg(n_database, "n_database")? = ds.inner.database().len();
        *out_arg(n_query, "n_query")? = ds.inner.queries().len();
        Ok(())
    })
}

/// Ranks database images for every query. `method` is `rcp`, `frustum`,
/// `coobs` or `desc:<feature>`.
///
/// # Safety
/// `ds` must be valid, `method` nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn lb_rank(ds: *const LbDataset, method: *const c_char, out: *mut *mut LbRanking) -> LbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ds = ref_arg(ds, "ds")?;
        let inner = rank_by_name(&ds.inner, str_arg(method, "method")?, &GtConfig::default())?;
        *out = Box::into_raw(Box::new(LbRanking { inner }));
        Ok(())
    })
}

/// # Safety
/// `r` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lb_ranking_free(r: *mut LbRanking) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Writes up to `k` database ids for `query` into `ids` (capacity `k`);
/// `count` receives how many were written.
///
/// # Safety
/// `ids` must point to `k` writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn lb_ranking_top_k(
    r: *const LbRanking,
    query: u32,
    k: usize,
    ids: *mut u32,
    count: *mut usize,
) -> LbStatus {
    guard(|| {
        let r = ref_arg(r, "ranking")?;
        let count = out_arg(count, "count")?;
        *count = 0;
        if !r.inner.per_query.contains_key(&ImageId(query)) {
            return Err(Error::UnknownImage(ImageId(query)).into());
        }
        let top = r.inner.top_k(ImageId(query), k);
        if !top.is_empty() && ids.is_null() {
            return Err(null("ids"));
        }
        for (i, id) in top.iter().enumerate() {
            *ids.add(i) = id.0;
        }
        *count = top.len();
        Ok(())
    })
}

/// Writes the ranking as text (`query_id db_id score rank` per line).
///
/// # Safety
/// `r` must be valid and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn lb_ranking_write(r: *const LbRanking, path: *const c_char) -> LbStatus {
    guard(|| {
        let r = ref_arg(r, "ranking")?;
        write_ranking(&PathBuf::from(str_arg(path, "path")?), &r.inner)?;
        Ok(())
    })
}

/// Position error in meters and rotation error in degrees between two poses,
/// each given as a camera centre and a world-to-camera quaternion `(w, x, y, z)`.
///
/// # Safety
/// Array pointers must reference 3 and 4 doubles; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn lb_pose_error(
    center_est: *const [f64; 3],
    wxyz_est: *const [f64; 4],
    center_ref: *const [f64; 3],
    wxyz_ref: *const [f64; 4],
    meters: *mut f64,
    degrees: *mut f64,
) -> LbStatus {
    guard(|| {
        let est = Pose::new(Vector3::from(*ref_arg(center_est, "center_est")?), *ref_arg(wxyz_est, "wxyz_est")?)?;
        let rf = Pose::new(Vector3::from(*ref_arg(center_ref, "center_ref")?), *ref_arg(wxyz_ref, "wxyz_ref")?)?;
        let e = PoseError::between(&est, &rf);
        *out_arg(meters, "meters")? = e.c_error;
        *out_arg(degrees, "degrees")? = e.r_error;
        Ok(())
    })
}

/// Blur score (mean absolute high-frequency residual) of a row-major
/// grayscale image.
///
/// # Safety
/// `pixels` must reference `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn lb_blur_score(
    pixels: *const f64,
    width: usize,
    height: usize,
    cutoff: usize,
    score: *mut f64,
) -> LbStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let n = width.checked_mul(height).ok_or_else(|| Fail(LbStatus::InvalidArgument, "image too large".into()))?;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        *out_arg(score, "score")? = blur_score(&GrayImage::new(width, height, data)?, cutoff)?;
        Ok(())
    })
}

/// Runs the full benchmark and writes the reports to `out_dir`.
///
/// With a null `data_dir` a synthetic dataset is generated into
/// `out_dir/dataset` from `harness_json` (null for the default). Null
/// `config_json` selects the default benchmark configuration. Cells that
/// failed are reported by [`lb_run_failed_cells`], not by the status.
///
/// # Safety
/// String arguments must be nul-terminated or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn lb_run(
    data_dir: *const c_char,
    config_json: *const c_char,
    harness_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut LbRun,
) -> LbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg: BenchmarkConfig = parse_json(opt_str_arg(config_json, "config_json")?)?;
        let out_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let (bundle, hash) = match opt_str_arg(data_dir, "data_dir")? {
            Some(d) => run_pipeline(&PathBuf::from(d), &cfg, &out_dir)?,
            None => {
                let harness: HarnessConfig = parse_json(opt_str_arg(harness_json, "harness_json")?)?;
                run_synthetic(&harness, &cfg, &out_dir)?
            }
        };
        let hash = CString::new(hash).map_err(|e| Fail(LbStatus::Failed, e.to_string()))?;
        *out = Box::into_raw(Box::new(LbRun { bundle, hash }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lb_run_free(run: *mut LbRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// SHA-256 of the run manifest as 64 hex digits; `needed` (nullable)
/// receives the buffer size required.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lb_run_manifest_hash(run: *const LbRun, buf: *mut c_char, len: usize, needed: *mut usize) -> LbStatus {
    guard(|| copy_out(&ref_arg(run, "run")?.hash, buf, len, needed))
}

/// Number of (ranking source, method) cells that failed as a whole.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lb_run_failed_cells(run: *const LbRun, count: *mut usize) -> LbStatus {
    guard(|| {
        *out_arg(count, "count")? = ref_arg(run, "run")?.bundle.failed_cells().count();
        Ok(())
    })
}

/// Percentage of queries localized within `meters` and `degrees` for one
/// ranking source, method (`approx-ewb`, `local-sfm`, `global`, ...) and k.
///
/// # Safety
/// Pointers must be valid and strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn lb_run_localized(
    run: *const LbRun,
    source: *const c_char,
    method: *const c_char,
    k: usize,
    meters: f64,
    degrees: f64,
    percent: *mut f64,
) -> LbStatus {
    guard(|| {
        let run = ref_arg(run, "run")?;
        let source = str_arg(source, "source")?;
        let method: Method = str_arg(method, "method")?.parse()?;
        let value = run.bundle.localized(source, method, k, meters, degrees).ok_or_else(|| {
            Fail(LbStatus::NotFound, format!("no results for {source}/{method} at k={k}"))
        })?;
        *out_arg(percent, "percent")? = value;
        Ok(())
    })
}
