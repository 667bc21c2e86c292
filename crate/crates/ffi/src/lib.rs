//! C ABI for the mixseg pipeline: opaque handles for configurations and
//! datasets, status codes, and buffer-based mask/metric helpers.
//!
//! Conventions:
//! - Every fallible call returns a [`MixsegStatus`]; on failure a
//!   human-readable message is retrievable via `mixseg_last_error`.
//! - Handles are created and destroyed by this library only; passing a
//!   pointer that did not come from the matching constructor is undefined
//!   behavior.
//! - Rasters cross the boundary as row-major byte buffers (class ids or
//!   0/1 mask values); the caller owns them.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mixseg_core::config::{parse_config, ExperimentConfig};
use mixseg_core::error::Error;
use mixseg_core::io::dataset::{load_dataset, save_dataset};
use mixseg_core::metrics::{accumulate_confusion, miou, ConfusionMatrix};
use mixseg_core::mixing::{classmix_mask, cowmix_mask, cutmix_mask, present_classes, sample_class_subset};
use mixseg_core::scenes::{generate_data, ExperimentData};
use mixseg_core::tensor::SegMap;
use mixseg_core::trainer::run_experiment;

/// Status code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MixsegStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    TrainingError = 4,
    IoError = 5,
    Utf8Error = 6,
    Panic = 7,
}

/// Opaque experiment configuration.
pub struct MixsegConfig {
    inner: ExperimentConfig,
}

/// Opaque dataset (training pool + held-out evaluation pairs).
pub struct MixsegDataset {
    inner: ExperimentData,
}

/// Final and best held-out mIoU of one training run.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MixsegRunSummary {
    pub final_miou: f64,
    pub best_miou: f64,
    /// Number of evaluation points in the metric series.
    pub evaluations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let safe = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = safe);
}

fn status_of(err: &Error) -> MixsegStatus {
    match err {
        Error::Config { .. } => MixsegStatus::ConfigError,
        Error::Io { .. } | Error::Format { .. } => MixsegStatus::IoError,
        Error::TrainingAborted { .. } | Error::NonFinite { .. } => MixsegStatus::TrainingError,
        _ => MixsegStatus::InvalidArgument,
    }
}

fn fail(err: &Error) -> MixsegStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Run a closure, translating panics into a status instead of unwinding
/// across the FFI boundary.
fn guarded(f: impl FnOnce() -> MixsegStatus) -> MixsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            MixsegStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, MixsegStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(MixsegStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        MixsegStatus::Utf8Error
    })
}

/// Copy the last error message of this thread into `buf` (truncated to
/// `cap - 1` bytes, always NUL-terminated). Returns the full message length.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be null (then only
/// the required length is returned).
#[no_mangle]
pub unsafe extern "C" fn mixseg_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn mixseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Free a string allocated by this library.
///
/// # Safety
/// `s` must come from a mixseg function documented to transfer string
/// ownership, and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mixseg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// New configuration with every field at its default.
#[no_mangle]
pub extern "C" fn mixseg_config_default() -> *mut MixsegConfig {
    Box::into_raw(Box::new(MixsegConfig {
        inner: ExperimentConfig::default(),
    }))
}

/// Parse `key = value` configuration text into a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mixseg_config_parse(text: *const c_char, out: *mut *mut MixsegConfig) -> MixsegStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return MixsegStatus::NullArgument;
        }
        let text = match cstr(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_config(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MixsegConfig { inner }));
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Set one configuration key, with the same validation as the config file.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mixseg_config_set(
    config: *mut MixsegConfig,
    key: *const c_char,
    value: *const c_char,
) -> MixsegStatus {
    guarded(|| {
        let Some(config) = config.as_mut() else {
            set_error("null config handle");
            return MixsegStatus::NullArgument;
        };
        let (key, value) = match (cstr(key), cstr(value)) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match config.inner.set(key, value, 0) {
            Ok(()) => MixsegStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Resolved configuration snapshot as a newly allocated string; free with
/// `mixseg_string_free`. Returns null only on internal failure.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mixseg_config_to_text(config: *const MixsegConfig) -> *mut c_char {
    let Some(config) = config.as_ref() else {
        set_error("null config handle");
        return std::ptr::null_mut();
    };
    CString::new(config.inner.to_text())
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// Destroy a configuration handle.
///
/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mixseg_config_free(config: *mut MixsegConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Generate the dataset described by the configuration.
///
/// # Safety
/// `config` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mixseg_dataset_generate(
    config: *const MixsegConfig,
    out: *mut *mut MixsegDataset,
) -> MixsegStatus {
    guarded(|| {
        let Some(config) = config.as_ref() else {
            set_error("null config handle");
            return MixsegStatus::NullArgument;
        };
        if out.is_null() {
            set_error("null output pointer");
            return MixsegStatus::NullArgument;
        }
        let c = &config.inner;
        match generate_data(&c.to_scene_config(), c.train_scenes, c.eval_scenes, c.labelled_fraction, c.data_seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MixsegDataset { inner }));
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a dataset directory written by `mixseg_dataset_save` or the CLI.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mixseg_dataset_load(dir: *const c_char, out: *mut *mut MixsegDataset) -> MixsegStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return MixsegStatus::NullArgument;
        }
        let dir = match cstr(dir) {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        match load_dataset(&dir) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MixsegDataset { inner }));
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Persist a dataset as a directory of PPM/PGM pairs with an index file.
///
/// # Safety
/// `dataset` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn mixseg_dataset_save(dataset: *const MixsegDataset, dir: *const c_char) -> MixsegStatus {
    guarded(|| {
        let Some(dataset) = dataset.as_ref() else {
            set_error("null dataset handle");
            return MixsegStatus::NullArgument;
        };
        let dir = match cstr(dir) {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        if let Err(e) = std::fs::create_dir_all(&dir) {
            return fail(&Error::io(dir.display().to_string(), e));
        }
        match save_dataset(&dir, &dataset.inner) {
            Ok(()) => MixsegStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Report pool sizes: total training scenes, labelled and unlabelled counts,
/// and evaluation scenes. Null out-pointers are skipped.
///
/// # Safety
/// `dataset` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mixseg_dataset_counts(
    dataset: *const MixsegDataset,
    train: *mut usize,
    labelled: *mut usize,
    unlabelled: *mut usize,
    eval: *mut usize,
) -> MixsegStatus {
    let Some(dataset) = dataset.as_ref() else {
        set_error("null dataset handle");
        return MixsegStatus::NullArgument;
    };
    if !train.is_null() {
        *train = dataset.inner.train.items.len();
    }
    if !labelled.is_null() {
        *labelled = dataset.inner.train.labelled.len();
    }
    if !unlabelled.is_null() {
        *unlabelled = dataset.inner.train.unlabelled.len();
    }
    if !eval.is_null() {
        *eval = dataset.inner.eval.len();
    }
    MixsegStatus::Ok
}

/// Destroy a dataset handle.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mixseg_dataset_free(dataset: *mut MixsegDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Train one run with the given seed and fill `summary`.
///
/// # Safety
/// `config` and `dataset` must be live handles; `summary` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mixseg_run(
    config: *const MixsegConfig,
    dataset: *const MixsegDataset,
    seed: u64,
    summary: *mut MixsegRunSummary,
) -> MixsegStatus {
    guarded(|| {
        let (Some(config), Some(dataset)) = (config.as_ref(), dataset.as_ref()) else {
            set_error("null config or dataset handle");
            return MixsegStatus::NullArgument;
        };
        if summary.is_null() {
            set_error("null summary pointer");
            return MixsegStatus::NullArgument;
        }
        let net = config.inner.to_net_config();
        let train_cfg = config.inner.to_train_config(seed);
        match run_experiment(&train_cfg, &net, &dataset.inner) {
            Ok(series) => {
                *summary = MixsegRunSummary {
                    final_miou: series.final_miou(),
                    best_miou: series.best_miou(),
                    evaluations: series.points.len(),
                };
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

unsafe fn segmap_from(ptr: *const u8, h: usize, w: usize) -> Result<SegMap, MixsegStatus> {
    if ptr.is_null() {
        set_error("null raster pointer");
        return Err(MixsegStatus::NullArgument);
    }
    if h == 0 || w == 0 {
        set_error("empty raster");
        return Err(MixsegStatus::InvalidArgument);
    }
    let data = std::slice::from_raw_parts(ptr, h * w).to_vec();
    Ok(SegMap { h, w, data })
}

/// Build a class-based mixing mask from a segmentation map: half of the
/// present classes (rounded up), chosen uniformly with `seed`, become 1.
///
/// # Safety
/// `segmap` must hold `h*w` readable bytes and `out_mask` `h*w` writable
/// bytes.
#[no_mangle]
pub unsafe extern "C" fn mixseg_classmix_mask(
    segmap: *const u8,
    h: usize,
    w: usize,
    seed: u64,
    out_mask: *mut u8,
) -> MixsegStatus {
    guarded(|| {
        let seg = match segmap_from(segmap, h, w) {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_mask.is_null() {
            set_error("null mask pointer");
            return MixsegStatus::NullArgument;
        }
        let classes = present_classes(&seg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subset = match sample_class_subset(&classes, &mut rng) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match classmix_mask(&seg, &subset) {
            Ok(mask) => {
                std::ptr::copy_nonoverlapping(mask.data.as_ptr(), out_mask, h * w);
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Random rectangle mask of half the area.
///
/// # Safety
/// `out_mask` must hold `h*w` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mixseg_cutmix_mask(h: usize, w: usize, seed: u64, out_mask: *mut u8) -> MixsegStatus {
    guarded(|| {
        if out_mask.is_null() {
            set_error("null mask pointer");
            return MixsegStatus::NullArgument;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match cutmix_mask(h, w, &mut rng) {
            Ok(mask) => {
                std::ptr::copy_nonoverlapping(mask.data.as_ptr(), out_mask, h * w);
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Thresholded smoothed-noise mask with ones-fraction `p`.
///
/// # Safety
/// `out_mask` must hold `h*w` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mixseg_cowmix_mask(
    h: usize,
    w: usize,
    sigma: f64,
    p: f64,
    seed: u64,
    out_mask: *mut u8,
) -> MixsegStatus {
    guarded(|| {
        if out_mask.is_null() {
            set_error("null mask pointer");
            return MixsegStatus::NullArgument;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match cowmix_mask(h, w, sigma, p, &mut rng) {
            Ok(mask) => {
                std::ptr::copy_nonoverlapping(mask.data.as_ptr(), out_mask, h * w);
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Mean intersection-over-union of two class-id rasters of `len` pixels with
/// `k` classes; classes absent from both are excluded from the mean.
///
/// # Safety
/// `pred` and `gt` must hold `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mixseg_miou(
    pred: *const u8,
    gt: *const u8,
    len: usize,
    k: usize,
    out: *mut f64,
) -> MixsegStatus {
    guarded(|| {
        if pred.is_null() || gt.is_null() || out.is_null() {
            set_error("null argument");
            return MixsegStatus::NullArgument;
        }
        if len == 0 || k == 0 {
            set_error("empty input");
            return MixsegStatus::InvalidArgument;
        }
        let pred = SegMap {
            h: 1,
            w: len,
            data: std::slice::from_raw_parts(pred, len).to_vec(),
        };
        let gt = SegMap {
            h: 1,
            w: len,
            data: std::slice::from_raw_parts(gt, len).to_vec(),
        };
        let mut matrix = ConfusionMatrix::new(k);
        if let Err(e) = accumulate_confusion(&pred, &gt, &mut matrix) {
            return fail(&e);
        }
        match miou(&matrix) {
            Ok(v) => {
                *out = v;
                MixsegStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
