//! C ABI over the ctquant library.
//!
//! Every fallible function returns a [`CtqStatus`]. On failure a message is
//! kept per thread and can be read with [`ctq_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;

use ctquant::biomarkers::{extract_all, BiomarkerVector, ScanMasks, Status, BIOMARKER_COUNT};
use ctquant::features::FeatureRecord;
use ctquant::fusion::{feature_names, FusionModel};
use ctquant::volume::{load_mask, load_volume, LabelMask, MaskSchema};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtqStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidString = 2,
    InvalidArgument = 3,
    BufferTooSmall = 4,
    Volume = 5,
    Biomarker = 6,
    Model = 7,
    Panic = 8,
}

/// Biomarker status codes used in the `statuses` arrays.
pub const CTQ_MEASUREMENT_OK: u8 = 0;
pub const CTQ_MEASUREMENT_EMPTY: u8 = 1;
pub const CTQ_MEASUREMENT_FAILED: u8 = 2;

/// Opaque handle to a loaded fusion model.
pub struct CtqModel {
    inner: FusionModel,
}

struct Failure {
    status: CtqStatus,
    message: String,
}

impl Failure {
    fn new(status: CtqStatus, message: impl ToString) -> Self {
        Self {
            status,
            message: message.to_string(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtqStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure::new(CtqStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            set_last_error("");
            CtqStatus::Ok
        }
        Err(f) => {
            set_last_error(&f.message);
            f.status
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(|s| Some(PathBuf::from(s)))
        .map_err(|_| Failure::new(CtqStatus::InvalidString, format!("{what} is not valid UTF-8")))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(CtqStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn status_code(s: Status) -> u8 {
    match s {
        Status::Ok => CTQ_MEASUREMENT_OK,
        Status::EmptyInput => CTQ_MEASUREMENT_EMPTY,
        Status::Failed => CTQ_MEASUREMENT_FAILED,
    }
}

fn status_from_code(c: u8) -> Result<Status, Failure> {
    match c {
        CTQ_MEASUREMENT_OK => Ok(Status::Ok),
        CTQ_MEASUREMENT_EMPTY => Ok(Status::EmptyInput),
        CTQ_MEASUREMENT_FAILED => Ok(Status::Failed),
        other => Err(Failure::new(CtqStatus::InvalidArgument, format!("unknown measurement status {other}"))),
    }
}

fn feature_cstrings() -> &'static [CString] {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    NAMES.get_or_init(|| {
        feature_names()
            .into_iter()
            .map(|n| CString::new(n).expect("feature names have no NUL"))
            .collect()
    })
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next ctq_* call on the same thread.
#[no_mangle]
pub extern "C" fn ctq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Number of scalar biomarkers.
#[no_mangle]
pub extern "C" fn ctq_biomarker_count() -> usize {
    BIOMARKER_COUNT
}

/// Number of model features: the biomarkers followed by the deep vector.
#[no_mangle]
pub extern "C" fn ctq_feature_count() -> usize {
    feature_cstrings().len()
}

/// Static name of feature `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn ctq_feature_name(index: usize) -> *const c_char {
    feature_cstrings().get(index).map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Computes every biomarker the supplied masks allow. Mask paths may be
/// null; the corresponding biomarkers are reported as failed. `values` and
/// `statuses` must each hold at least `len` elements, `len >=
/// ctq_biomarker_count()`.
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `values` and `statuses`
/// must be writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ctq_extract_biomarkers(
    volume: *const c_char,
    pericardium: *const c_char,
    calcium: *const c_char,
    aorta: *const c_char,
    lungs: *const c_char,
    values: *mut f64,
    statuses: *mut u8,
    len: usize,
) -> CtqStatus {
    guard(|| {
        nonnull(volume, "volume")?;
        nonnull(values, "values")?;
        nonnull(statuses, "statuses")?;
        if len < BIOMARKER_COUNT {
            return Err(Failure::new(
                CtqStatus::BufferTooSmall,
                format!("need {BIOMARKER_COUNT} slots, got {len}"),
            ));
        }
        let volume_path = path_arg(volume, "volume")?.expect("checked non-null");
        let v = load_volume(&volume_path).map_err(|e| Failure::new(CtqStatus::Volume, e))?;
        let mut masks: [Option<LabelMask>; 4] = Default::default();
        let inputs = [
            (pericardium, MaskSchema::Pericardium, "pericardium"),
            (calcium, MaskSchema::Calcium, "calcium"),
            (aorta, MaskSchema::Aorta, "aorta"),
            (lungs, MaskSchema::Lungs, "lungs"),
        ];
        for (slot, (p, schema, what)) in masks.iter_mut().zip(inputs) {
            if let Some(path) = path_arg(p, what)? {
                *slot = Some(load_mask(&path, schema).map_err(|e| Failure::new(CtqStatus::Volume, e))?);
            }
        }
        let scan = ScanMasks {
            pericardium: masks[0].as_ref(),
            calcium: masks[1].as_ref(),
            aorta: masks[2].as_ref(),
            lungs: masks[3].as_ref(),
        };
        let out = extract_all(&v, scan).map_err(|e| Failure::new(CtqStatus::Biomarker, e))?;
        let values = std::slice::from_raw_parts_mut(values, BIOMARKER_COUNT);
        let statuses = std::slice::from_raw_parts_mut(statuses, BIOMARKER_COUNT);
        values.copy_from_slice(out.values());
        for (s, &st) in statuses.iter_mut().zip(out.statuses()) {
            *s = status_code(st);
        }
        Ok(())
    })
}

/// Loads and verifies a model file. On success `*out` owns a handle that
/// must be released with [`ctq_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctq_model_load(path: *const c_char, out: *mut *mut CtqModel) -> CtqStatus {
    guard(|| {
        nonnull(path, "path")?;
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let path = path_arg(path, "path")?.expect("checked non-null");
        let inner = FusionModel::load(&path).map_err(|e| Failure::new(CtqStatus::Model, e))?;
        *out = Box::into_raw(Box::new(CtqModel { inner }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`ctq_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctq_model_free(model: *mut CtqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the deep feature vector the model expects.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctq_model_deep_width(model: *const CtqModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.deep_width)
}

/// Predicts the risk probability for one scan and writes the per-feature
/// contribution scores, in [`ctq_feature_name`] order, to `scores`.
/// Biomarker values are raw (unnormalised) and `statuses` uses the
/// `CTQ_MEASUREMENT_*` codes.
///
/// # Safety
/// `model` must be a live handle; `deep` readable for `deep_len`,
/// `values` and `statuses` readable for `biomarker_len`, `scores` writable
/// for `scores_len` elements and `probability` writable.
#[no_mangle]
pub unsafe extern "C" fn ctq_model_predict(
    model: *const CtqModel,
    deep: *const f64,
    deep_len: usize,
    values: *const f64,
    statuses: *const u8,
    biomarker_len: usize,
    probability: *mut f64,
    scores: *mut f64,
    scores_len: usize,
) -> CtqStatus {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(deep, "deep")?;
        nonnull(values, "values")?;
        nonnull(statuses, "statuses")?;
        nonnull(probability, "probability")?;
        nonnull(scores, "scores")?;
        if biomarker_len != BIOMARKER_COUNT {
            return Err(Failure::new(
                CtqStatus::InvalidArgument,
                format!("expected {BIOMARKER_COUNT} biomarkers, got {biomarker_len}"),
            ));
        }
        let n_features = ctq_feature_count();
        if scores_len < n_features {
            return Err(Failure::new(
                CtqStatus::BufferTooSmall,
                format!("need {n_features} score slots, got {scores_len}"),
            ));
        }
        let model = &(*model).inner;
        let mut raw = [0.0; BIOMARKER_COUNT];
        raw.copy_from_slice(std::slice::from_raw_parts(values, BIOMARKER_COUNT));
        let mut status = [Status::Ok; BIOMARKER_COUNT];
        for (s, &c) in status.iter_mut().zip(std::slice::from_raw_parts(statuses, BIOMARKER_COUNT)) {
            *s = status_from_code(c)?;
        }
        let record = FeatureRecord {
            scan_id: String::new(),
            x1: std::slice::from_raw_parts(deep, deep_len).to_vec(),
            biomarkers: BiomarkerVector::from_parts(raw, status),
            label: None,
        };
        let (p, s) = model
            .forward(&model.prepare(&record))
            .map_err(|e| Failure::new(CtqStatus::Model, e))?;
        *probability = p;
        std::slice::from_raw_parts_mut(scores, n_features).copy_from_slice(&s);
        Ok(())
    })
}
