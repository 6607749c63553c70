//! C ABI over the frozen feature extractor and the evaluation metrics.
//!
//! Every fallible function returns an `FmStatus` code; on failure the message
//! is available from `fm_last_error` on the same thread. Handles are opaque and
//! must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fitmask::data::Image;
use fitmask::evaluation::{extract_features, retrieval_eval, FeatureMatrix, FrozenModel, Similarity};
use fitmask::model::GridMap;
use fitmask::rationale::{attention_normalize_with, AttentionScaling};
use fitmask::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    NullPointer = 1,
    Argument = 2,
    Config = 3,
    Data = 4,
    Format = 5,
    Io = 6,
    Numeric = 7,
    State = 8,
    Usage = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmSimilarity {
    Cosine = 0,
    L2 = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmScaling {
    /// `(A - min) / (1e-7 + max)`.
    Literal = 0,
    /// `(A - min) / (1e-7 + max - min)`.
    Range = 1,
}

/// Retrieval metrics in percent.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FmRetrievalReport {
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    pub queries: usize,
    pub excluded: usize,
}

/// Opaque frozen model loaded from a checkpoint.
pub struct FmModel {
    inner: FrozenModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FmStatus {
    match e {
        Error::Config(_) => FmStatus::Config,
        Error::Numeric(_) => FmStatus::Numeric,
        Error::State(_) => FmStatus::State,
        Error::Argument(_) => FmStatus::Argument,
        Error::Usage(_) => FmStatus::Usage,
        Error::Data(_) | Error::Image(_) => FmStatus::Data,
        Error::Format(_) | Error::Json(_) => FmStatus::Format,
        Error::Io { .. } => FmStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed as {what}"));
            FmStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FmStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn model_ref<'a>(model: *const FmModel) -> Result<&'a FrozenModel, Fail> {
    model.as_ref().map(|m| &m.inner).ok_or(Fail::Null("model"))
}

fn images(pixels: &[f32], count: usize, width: usize, height: usize) -> Result<Vec<Image>, Fail> {
    let per = width * height * 3;
    if pixels.len() != count * per {
        return Err(Error::Argument(format!(
            "{count} images of {width}x{height} need {} floats, got {}",
            count * per,
            pixels.len()
        ))
        .into());
    }
    Ok(pixels
        .chunks(per.max(1))
        .take(count)
        .map(|c| Image::new(width, height, c.to_vec()))
        .collect::<fitmask::Result<Vec<_>>>()?)
}

fn check_out(len: usize, need: usize, what: &str) -> Result<(), Fail> {
    if len < need {
        return Err(Error::Argument(format!("{what} holds {len} values, need {need}")).into());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint into a new model handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_model_load(path: *const c_char, out: *mut *mut FmModel) -> FmStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Argument("path is not UTF-8".into()))?;
        let inner = FrozenModel::load(Path::new(p))?;
        *out = Box::into_raw(Box::new(FmModel { inner }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `fm_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fm_model_free(model: *mut FmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the network input side, feature dimension and grid shape.
///
/// # Safety
/// All pointers must be valid or null (null outputs are skipped).
#[no_mangle]
pub unsafe extern "C" fn fm_model_info(
    model: *const FmModel,
    input_size: *mut usize,
    feature_dim: *mut usize,
    grid_h: *mut usize,
    grid_w: *mut usize,
) -> FmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (h, w) = m.net.config().feature_grid;
        for (ptr, v) in [
            (input_size, m.input_size()),
            (feature_dim, m.feature_dim()),
            (grid_h, h),
            (grid_w, w),
        ] {
            if let Some(p) = ptr.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Extracts features of `count` RGB images (`height x width x 3` f32 in
/// [0, 1], channels last, packed back to back) into `out`, row-major
/// `count x feature_dim`.
///
/// # Safety
/// `pixels` must hold `count*height*width*3` floats and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_model_extract(
    model: *const FmModel,
    pixels: *const f32,
    count: usize,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> FmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let px = slice(pixels, count * width * height * 3, "pixels")?;
        let imgs = images(px, count, width, height)?;
        check_out(out_len, count * m.feature_dim(), "out")?;
        let out = slice_mut(out, out_len, "out")?;
        let f = extract_features(m, &imgs)?;
        out[..f.data.len()].copy_from_slice(&f.data);
        Ok(())
    })
}

/// Normalized attention mask of one image, `grid_h x grid_w` row-major.
///
/// # Safety
/// `pixels` must hold `height*width*3` floats and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_model_attention(
    model: *const FmModel,
    pixels: *const f32,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> FmStatus {
    guard(|| {
        let m = model_ref(model)?;
        if m.branch.is_none() {
            return Err(Error::Config(format!("{} has no attention branch", m.variant.mode)).into());
        }
        let px = slice(pixels, width * height * 3, "pixels")?;
        let imgs = images(px, 1, width, height)?;
        let (h, w) = m.net.config().feature_grid;
        check_out(out_len, h * w, "out")?;
        let out = slice_mut(out, out_len, "out")?;
        let maps = m.feature_maps(&[m.preprocess(&imgs[0])])?;
        let a = m.attention(&maps[0])?;
        out[..h * w].copy_from_slice(a.values());
        Ok(())
    })
}

/// Leave-one-out retrieval over `rows x dim` row-major features.
///
/// # Safety
/// `features` must hold `rows*dim` doubles, `labels` `rows` values, `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fm_retrieval_eval(
    features: *const f64,
    rows: usize,
    dim: usize,
    labels: *const u32,
    metric: FmSimilarity,
    out: *mut FmRetrievalReport,
) -> FmStatus {
    guard(|| {
        let data = slice(features, rows * dim, "features")?.to_vec();
        let labels: Vec<usize> = slice(labels, rows, "labels")?
            .iter()
            .map(|&l| l as usize)
            .collect();
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        let fm = FeatureMatrix { rows, dim, data };
        let metric = match metric {
            FmSimilarity::Cosine => Similarity::Cosine,
            FmSimilarity::L2 => Similarity::L2,
        };
        let r = retrieval_eval(&fm, &labels, metric)?;
        *out = FmRetrievalReport {
            rank1: r.rank1,
            rank5: r.rank5,
            map: r.map,
            queries: r.queries,
            excluded: r.excluded,
        };
        Ok(())
    })
}

/// Attention normalization of a raw `h x w` map into `out` (same size).
///
/// # Safety
/// `raw` and `out` must each hold `h*w` doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_attention_normalize(
    raw: *const f64,
    h: usize,
    w: usize,
    scaling: FmScaling,
    out: *mut f64,
) -> FmStatus {
    guard(|| {
        let values = slice(raw, h * w, "raw")?.to_vec();
        let out = slice_mut(out, h * w, "out")?;
        let map = GridMap::new(h, w, values)?;
        let scaling = match scaling {
            FmScaling::Literal => AttentionScaling::Literal,
            FmScaling::Range => AttentionScaling::Range,
        };
        out.copy_from_slice(attention_normalize_with(&map, scaling)?.values());
        Ok(())
    })
}
