//! C ABI over `cookcast`.
//!
//! Conventions:
//! - every fallible function returns a [`CookcastStatus`]; on failure the
//!   message is available from [`cookcast_last_error`] on the same thread;
//! - images are `height × width × 3` interleaved `float` buffers in `[-1, 1]`;
//! - handles are opaque, created by `*_load`/`*_start` and released by the
//!   matching `*_free`, which accepts NULL;
//! - panics never cross the boundary; they surface as `COOKCAST_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cookcast::cis::{f_cul, EmbeddingModel};
use cookcast::harness::archive::WeightArchive;
use cookcast::harness::{load_weights, quantize_archive, QuantScheme};
use cookcast::img::{Image, CHANNELS};
use cookcast::monitor::{start_monitor, step, Decision, MonitorConfig, MonitorState};
use cookcast::nets::GeneratorModel;
use cookcast::sessions::Frame;
use cookcast::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CookcastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Lookup = 4,
    Shape = 5,
    Numeric = 6,
    State = 7,
    Config = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

impl From<&Error> for CookcastStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::Format(_) | Error::Json(_) | Error::Codec(_) | Error::Csv(_) => Self::Format,
            Error::Lookup(_) => Self::Lookup,
            Error::Shape(_) => Self::Shape,
            Error::Numeric(_) => Self::Numeric,
            Error::State(_) => Self::State,
            Error::Config(_) => Self::Config,
            Error::Io(_) => Self::Io,
            Error::Tensor(_) => Self::Internal,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording any error or panic for [`cookcast_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (CookcastStatus, String)>) -> CookcastStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CookcastStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CookcastStatus::Panic
        }
    }
}

fn lib(e: Error) -> (CookcastStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (CookcastStatus, String) {
    (CookcastStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CookcastStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            CookcastStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn image_in(
    p: *const f32,
    height: usize,
    width: usize,
    what: &str,
) -> Result<Image, (CookcastStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(CHANNELS))
        .ok_or_else(|| {
            (
                CookcastStatus::InvalidArgument,
                format!("{what}: {height}x{width} overflows"),
            )
        })?;
    let img = Image::new(height, width, std::slice::from_raw_parts(p, n).to_vec()).map_err(lib)?;
    if !img.in_range() {
        return Err((
            CookcastStatus::InvalidArgument,
            format!("{what}: pixel values must lie in [-1, 1]"),
        ));
    }
    Ok(img)
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cookcast_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, including the git revision it was built from.
#[no_mangle]
pub extern "C" fn cookcast_version() -> *const c_char {
    static VERSION: std::sync::OnceLock<CString> = std::sync::OnceLock::new();
    VERSION
        .get_or_init(|| {
            CString::new(cookcast::harness::config::version_string()).unwrap_or_default()
        })
        .as_ptr()
}

/// Trained similarity network.
pub struct CookcastCis {
    model: EmbeddingModel,
}

/// Trained cooked-state generator.
pub struct CookcastGenerator {
    model: GeneratorModel,
}

/// Streaming stop detector bound to one target image.
pub struct CookcastMonitor {
    cis: EmbeddingModel,
    state: MonitorState,
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cookcast_cis_load(
    dir: *const c_char,
    out: *mut *mut CookcastCis,
) -> CookcastStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = PathBuf::from(c_str(dir, "dir")?);
        let model: EmbeddingModel = load_weights(&dir).map_err(lib)?;
        *out = Box::into_raw(Box::new(CookcastCis { model }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`cookcast_cis_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cookcast_cis_free(handle: *mut CookcastCis) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Input image side length the network expects.
///
/// # Safety
/// `handle` must be a live CIS handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cookcast_cis_image_size(
    handle: *const CookcastCis,
    out: *mut usize,
) -> CookcastStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = h.model.config.img_size;
        Ok(())
    })
}

/// Clamped culinary similarity in `[0, 1]` of two same-session images.
///
/// # Safety
/// `a` and `b` must each point to `height·width·3` floats.
#[no_mangle]
pub unsafe extern "C" fn cookcast_cis_similarity(
    handle: *const CookcastCis,
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> CookcastStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = image_in(a, height, width, "a")?;
        let b = image_in(b, height, width, "b")?;
        *out = f_cul(&h.model, &a, &b).map_err(lib)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cookcast_generator_load(
    dir: *const c_char,
    out: *mut *mut CookcastGenerator,
) -> CookcastStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = PathBuf::from(c_str(dir, "dir")?);
        let model: GeneratorModel = load_weights(&dir).map_err(lib)?;
        *out = Box::into_raw(Box::new(CookcastGenerator { model }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`cookcast_generator_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cookcast_generator_free(handle: *mut CookcastGenerator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live generator handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cookcast_generator_image_size(
    handle: *const CookcastGenerator,
    out: *mut usize,
) -> CookcastStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = h.model.config.img_size;
        Ok(())
    })
}

/// Writes the `state` image of `recipe` for a square raw image of the
/// generator's size into `out` (`out_len` must equal `size·size·3`).
///
/// # Safety
/// `raw` must point to `size·size·3` floats and `out` to `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cookcast_generator_generate(
    handle: *const CookcastGenerator,
    raw: *const f32,
    size: usize,
    recipe: *const c_char,
    state: *const c_char,
    out: *mut f32,
    out_len: usize,
) -> CookcastStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let raw = image_in(raw, size, size, "raw")?;
        let recipe = c_str(recipe, "recipe")?;
        let state = c_str(state, "state")?;
        let img = h.model.generate(&raw, recipe, state).map_err(lib)?;
        if out_len != img.data().len() {
            return Err((
                CookcastStatus::Shape,
                format!(
                    "out holds {out_len} floats, the image needs {}",
                    img.data().len()
                ),
            ));
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(img.data());
        Ok(())
    })
}

/// Starts monitoring against `target`. The monitor keeps its own reference
/// to the network, so `cis` may be freed afterwards.
///
/// # Safety
/// `target` must point to `height·width·3` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cookcast_monitor_start(
    cis: *const CookcastCis,
    target: *const f32,
    height: usize,
    width: usize,
    smooth_window: usize,
    peak_confirm: usize,
    min_peak_sim: f64,
    out: *mut *mut CookcastMonitor,
) -> CookcastStatus {
    guard(|| {
        let c = cis.as_ref().ok_or_else(|| null("cis"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let target = image_in(target, height, width, "target")?;
        let cfg = MonitorConfig {
            smooth_window,
            peak_confirm,
            min_peak_sim,
            ..MonitorConfig::default()
        };
        let state = start_monitor(&c.model, &target, &cfg).map_err(lib)?;
        *out = Box::into_raw(Box::new(CookcastMonitor {
            cis: c.model.clone(),
            state,
        }));
        Ok(())
    })
}

/// Feeds the next frame. On a stop decision `*stopped` is set to 1 and
/// `*stop_index` to the peak frame; otherwise `*stopped` is 0.
///
/// # Safety
/// `frame` must point to `height·width·3` floats; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cookcast_monitor_step(
    handle: *mut CookcastMonitor,
    frame: *const f32,
    height: usize,
    width: usize,
    t_seconds: f64,
    stopped: *mut i32,
    stop_index: *mut usize,
) -> CookcastStatus {
    guard(|| {
        let m = handle.as_mut().ok_or_else(|| null("handle"))?;
        let stopped = stopped.as_mut().ok_or_else(|| null("stopped"))?;
        let stop_index = stop_index.as_mut().ok_or_else(|| null("stop_index"))?;
        let image = image_in(frame, height, width, "frame")?;
        let decision = step(&mut m.state, &m.cis, &Frame { image, t_seconds }).map_err(lib)?;
        match decision {
            Decision::Stop { index, .. } => {
                *stopped = 1;
                *stop_index = index;
            }
            Decision::Continue => *stopped = 0,
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`cookcast_monitor_start`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cookcast_monitor_free(handle: *mut CookcastMonitor) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Re-encodes the archive in `in_dir` with the default hybrid policy into
/// `out_dir`; `*reduction` receives bytes-before / bytes-after.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `reduction` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cookcast_quantize_archive(
    in_dir: *const c_char,
    out_dir: *const c_char,
    reduction: *mut f64,
) -> CookcastStatus {
    guard(|| {
        let reduction = reduction.as_mut().ok_or_else(|| null("reduction"))?;
        let src = PathBuf::from(c_str(in_dir, "in_dir")?);
        let dst = PathBuf::from(c_str(out_dir, "out_dir")?);
        let archive = WeightArchive::load(&src).map_err(lib)?;
        let (q, report) = quantize_archive(&archive, &QuantScheme::default()).map_err(lib)?;
        q.save(&dst).map_err(lib)?;
        *reduction = report.reduction_factor();
        Ok(())
    })
}
