//! C ABI for the deraining library.
//!
//! All objects are opaque heap handles created by `rlrtr_*_new`/`load`
//! functions and released with the matching `rlrtr_*_free`. Every fallible
//! function returns an [`RlrtrStatus`]; on failure the message is available
//! from [`rlrtr_last_error`] on the same thread.
//!
//! # Safety
//!
//! Handle arguments must be null or a live handle of the right kind returned
//! by this library; a handle must not be used after it is freed. Buffers must
//! be valid for `len` elements and strings NUL-terminated. Null handles and
//! undersized buffers are reported through the status code.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rlrtr::config::RunConfig;
use rlrtr::error::Error;
use rlrtr::io::{read_rlrt, write_rlrt};
use rlrtr::solver::{derain, DecompositionResult, SolverConfig};
use rlrtr::tensor::VideoTensor;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RlrtrStatus {
    Ok = 0,
    NullPointer = 1,
    Argument = 2,
    Numeric = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A single-channel video, `height × width × frames` 32-bit floats.
pub struct RlrtrVideo(VideoTensor);

/// Solver settings.
pub struct RlrtrConfig(SolverConfig);

/// Output of one decomposition.
pub struct RlrtrResult(DecompositionResult);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(err: &Error) -> RlrtrStatus {
    match err.class() {
        "argument" => RlrtrStatus::Argument,
        "numeric" => RlrtrStatus::Numeric,
        "io" => RlrtrStatus::Io,
        "format" => RlrtrStatus::Format,
        "config" => RlrtrStatus::Config,
        _ => RlrtrStatus::Argument,
    }
}

/// Runs `f`, recording its error message and turning panics into a status.
fn guard(f: impl FnOnce() -> Result<(), RlrtrStatus>) -> RlrtrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RlrtrStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            RlrtrStatus::Panic
        }
    }
}

fn fail(err: Error) -> RlrtrStatus {
    set_error(&format!("{}: {err}", err.class()));
    status_of(&err)
}

fn null(what: &str) -> RlrtrStatus {
    set_error(&format!("null pointer: {what}"));
    RlrtrStatus::NullPointer
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, RlrtrStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("argument: path is not valid UTF-8");
            Err(RlrtrStatus::Argument)
        }
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Creates a video from `height·width·frames` floats in frame-major,
/// row-major order.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_video_new(
    height: usize,
    width: usize,
    frames: usize,
    data: *const f32,
    out: *mut *mut RlrtrVideo,
) -> RlrtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if data.is_null() {
            return Err(null("data"));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(frames))
            .ok_or_else(|| fail(Error::Argument("video dimensions overflow".into())))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let t = VideoTensor::from_vec(height, width, frames, values).map_err(fail)?;
        put(out, RlrtrVideo(t));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlrtr_video_read_rlrt(
    path: *const c_char,
    out: *mut *mut RlrtrVideo,
) -> RlrtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let t = read_rlrt(path).map_err(fail)?;
        put(out, RlrtrVideo(t));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlrtr_video_write_rlrt(
    video: *const RlrtrVideo,
    path: *const c_char,
) -> RlrtrStatus {
    guard(|| {
        let video = video.as_ref().ok_or_else(|| null("video"))?;
        let path = path_arg(path)?;
        write_rlrt(&video.0, path).map_err(fail)
    })
}

/// Writes the dimensions; any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_video_dims(
    video: *const RlrtrVideo,
    height: *mut usize,
    width: *mut usize,
    frames: *mut usize,
) -> RlrtrStatus {
    guard(|| {
        let v = &video.as_ref().ok_or_else(|| null("video"))?.0;
        for (p, value) in [
            (height, v.height()),
            (width, v.width()),
            (frames, v.frames()),
        ] {
            if !p.is_null() {
                *p = value;
            }
        }
        Ok(())
    })
}

/// Copies the samples into `buf`, which must hold `height·width·frames` floats.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_video_copy_data(
    video: *const RlrtrVideo,
    buf: *mut f32,
    len: usize,
) -> RlrtrStatus {
    guard(|| {
        let v = &video.as_ref().ok_or_else(|| null("video"))?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < v.len() {
            set_error(&format!("buffer holds {len} values, {} needed", v.len()));
            return Err(RlrtrStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(v.data().as_ptr(), buf, v.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlrtr_video_free(video: *mut RlrtrVideo) {
    if !video.is_null() {
        drop(Box::from_raw(video));
    }
}

/// Default solver settings.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_config_new(out: *mut *mut RlrtrConfig) -> RlrtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, RlrtrConfig(SolverConfig::default()));
        Ok(())
    })
}

/// Solver settings from TOML text (the `[solver]` section; `[synth]` is
/// validated and ignored).
#[no_mangle]
pub unsafe extern "C" fn rlrtr_config_from_toml(
    text: *const c_char,
    out: *mut *mut RlrtrConfig,
) -> RlrtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if text.is_null() {
            return Err(null("text"));
        }
        let text = CStr::from_ptr(text).to_str().map_err(|_| {
            set_error("argument: configuration text is not valid UTF-8");
            RlrtrStatus::Argument
        })?;
        let cfg = RunConfig::parse(text).map_err(fail)?;
        put(out, RlrtrConfig(cfg.solver));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlrtr_config_load(
    path: *const c_char,
    out: *mut *mut RlrtrConfig,
) -> RlrtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let cfg = RunConfig::load(path).map_err(fail)?;
        put(out, RlrtrConfig(cfg.solver));
        Ok(())
    })
}

/// Toggles the alignment and subspace parts of the model.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_config_set_features(
    cfg: *mut RlrtrConfig,
    enable_affine: bool,
    enable_subspace: bool,
) -> RlrtrStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.enable_affine = enable_affine;
        cfg.0.enable_subspace = enable_subspace;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlrtr_config_free(cfg: *mut RlrtrConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Decomposes `video`. Stopping at the iteration limit is not an error; see
/// [`rlrtr_result_converged`].
#[no_mangle]
pub unsafe extern "C" fn rlrtr_derain(
    video: *const RlrtrVideo,
    cfg: *const RlrtrConfig,
    out: *mut *mut RlrtrResult,
) -> RlrtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let video = video.as_ref().ok_or_else(|| null("video"))?;
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        let res = derain(&video.0, &cfg.0).map_err(fail)?;
        put(out, RlrtrResult(res));
        Ok(())
    })
}

/// New handle holding the background layer.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_result_background(
    res: *const RlrtrResult,
    out: *mut *mut RlrtrVideo,
) -> RlrtrStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, RlrtrVideo(res.0.background.clone()));
        Ok(())
    })
}

/// New handle holding the rain layer (aligned input minus background).
#[no_mangle]
pub unsafe extern "C" fn rlrtr_result_rain(
    res: *const RlrtrResult,
    out: *mut *mut RlrtrVideo,
) -> RlrtrStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, RlrtrVideo(res.0.rain.clone()));
        Ok(())
    })
}

/// Outer iterations run; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_result_iterations(res: *const RlrtrResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.history.len())
}

#[no_mangle]
pub unsafe extern "C" fn rlrtr_result_converged(res: *const RlrtrResult) -> bool {
    res.as_ref().is_some_and(|r| r.0.converged)
}

/// Objective after each outer iteration, copied into `buf`.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_result_objective_history(
    res: *const RlrtrResult,
    buf: *mut f64,
    len: usize,
) -> RlrtrStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let n = res.0.history.len();
        if n == 0 {
            return Ok(());
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < n {
            set_error(&format!("buffer holds {len} values, {n} needed"));
            return Err(RlrtrStatus::BufferTooSmall);
        }
        for (i, h) in res.0.history.iter().enumerate() {
            *buf.add(i) = h.objective;
        }
        Ok(())
    })
}

/// Per-frame affine parameters `(a, b, tx, c, d, ty)`; `buf` holds `6·frames` values.
#[no_mangle]
pub unsafe extern "C" fn rlrtr_result_tau(
    res: *const RlrtrResult,
    buf: *mut f64,
    len: usize,
) -> RlrtrStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let n = 6 * res.0.tau.len();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < n {
            set_error(&format!("buffer holds {len} values, {n} needed"));
            return Err(RlrtrStatus::BufferTooSmall);
        }
        for (f, t) in res.0.tau.iter().enumerate() {
            ptr::copy_nonoverlapping(t.to_array().as_ptr(), buf.add(6 * f), 6);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rlrtr_result_free(res: *mut RlrtrResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
