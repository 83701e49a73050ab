//! C ABI over `gazelab`.
//!
//! Every fallible function returns a [`GzStatus`]; on failure the message is
//! kept per thread and read back with [`gz_last_error`]. Models are opaque
//! handles created by `*_load` and released by the matching `*_free`.
//! Images cross the boundary as tightly packed RGB8 buffers, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe, UnwindSafe};
use std::path::Path;
use std::ptr;

use gazelab::geometry::{self, GazeDirection};
use gazelab::metrics::{self, LaplacianKernel};
use gazelab::training::{load_estimator, GanRedirector, TrainedEstimator};
use gazelab::Error;
use image::RgbImage;

/// Side of the square eye patches accepted by the models.
pub const GZ_PATCH_SIZE: u32 = 64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Range = 3,
    Data = 4,
    Io = 5,
    Checkpoint = 6,
    Config = 7,
    Numeric = 8,
    Degenerate = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GzKernel {
    /// `[[0,1,0],[1,-4,1],[0,1,0]]`.
    Standard = 0,
    /// `[[0,1,0],[1,-4,1],[0,1,1]]`.
    Corner = 1,
}

/// Opaque trained generator.
pub struct GzRedirector(GanRedirector);

/// Opaque trained gaze estimator.
pub struct GzEstimator(TrainedEstimator);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GzStatus {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } => GzStatus::InvalidArgument,
        Error::Range(_) => GzStatus::Range,
        Error::NotFound(_) | Error::Data(_) | Error::Extraction(_) | Error::Csv(_) | Error::Image(_) => {
            GzStatus::Data
        }
        Error::Io { .. } => GzStatus::Io,
        Error::Checkpoint { .. } | Error::Json(_) => GzStatus::Checkpoint,
        Error::Config(_) => GzStatus::Config,
        Error::Numeric(_) => GzStatus::Numeric,
        Error::DegenerateInput(_) => GzStatus::Degenerate,
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

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail> + UnwindSafe) -> GzStatus {
    match catch_unwind(f) {
        Ok(Ok(())) => {
            set_error("");
            GzStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            GzStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            set_error(&format!("panic: {msg}"));
            GzStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::invalid("path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn rgb_arg(pixels: *const u8, width: u32, height: u32) -> Result<RgbImage, Fail> {
    if pixels.is_null() {
        return Err(Fail::Null("pixels"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image size {width}×{height}")).into());
    }
    let len = width as usize * height as usize * 3;
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    Ok(RgbImage::from_raw(width, height, data).expect("buffer length matches dimensions"))
}

unsafe fn patch_arg(pixels: *const u8) -> Result<RgbImage, Fail> {
    rgb_arg(pixels, GZ_PATCH_SIZE, GZ_PATCH_SIZE)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Unit gaze vector `[x, y, z]` for (yaw, pitch) in degrees.
///
/// # Safety
/// `out` must point to three writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gz_to_cartesian(yaw: f64, pitch: f64, out: *mut f64) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let v = geometry::to_cartesian(GazeDirection::new(yaw, pitch))?;
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&[v.x, v.y, v.z]);
        Ok(())
    }))
}

/// Angle in degrees between two gaze directions given as (yaw, pitch).
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn gz_angular_error(
    yaw_a: f64,
    pitch_a: f64,
    yaw_b: f64,
    pitch_b: f64,
    out: *mut f64,
) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        let out = out_ref(out, "out")?;
        *out = geometry::angular_error(GazeDirection::new(yaw_a, pitch_a), GazeDirection::new(yaw_b, pitch_b))?;
        Ok(())
    }))
}

/// Maps degrees into [−1, 1] by the per-axis maxima.
///
/// # Safety
/// `yaw_n` and `pitch_n` must be valid pointers to doubles.
#[no_mangle]
pub unsafe extern "C" fn gz_normalize_gaze(
    yaw: f64,
    pitch: f64,
    yaw_max: f64,
    pitch_max: f64,
    yaw_n: *mut f64,
    pitch_n: *mut f64,
) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        let (yo, po) = (out_ref(yaw_n, "yaw_n")?, out_ref(pitch_n, "pitch_n")?);
        let n = geometry::normalize_gaze(GazeDirection::new(yaw, pitch), yaw_max, pitch_max)?;
        *yo = n.yaw_n;
        *po = n.pitch_n;
        Ok(())
    }))
}

/// Inverse Laplacian variance of an RGB8 image.
///
/// # Safety
/// `pixels` must hold `width * height * 3` bytes and `out` must be a valid
/// pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn gz_blurriness(
    pixels: *const u8,
    width: u32,
    height: u32,
    kernel: GzKernel,
    out: *mut f64,
) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        let out = out_ref(out, "out")?;
        let img = rgb_arg(pixels, width, height)?;
        let k = match kernel {
            GzKernel::Standard => LaplacianKernel::Standard,
            GzKernel::Corner => LaplacianKernel::Corner,
        };
        *out = metrics::blurriness(&img, k)?;
        Ok(())
    }))
}

/// Loads a generator checkpoint. On success `*out` owns a handle that
/// must be released with [`gz_redirector_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gz_redirector_load(path: *const c_char, out: *mut *mut GzRedirector) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let r = GanRedirector::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(GzRedirector(r)));
        Ok(())
    }))
}

/// Redirects a 64×64 RGB8 patch to (yaw, pitch) in degrees, patch frame.
/// `output` receives 64×64×3 bytes.
///
/// # Safety
/// `handle` must come from [`gz_redirector_load`]; `input` and `output`
/// must each hold 12288 bytes.
#[no_mangle]
pub unsafe extern "C" fn gz_redirector_redirect(
    handle: *const GzRedirector,
    input: *const u8,
    yaw: f64,
    pitch: f64,
    output: *mut u8,
) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        let h = non_null(handle, "handle")?;
        if output.is_null() {
            return Err(Fail::Null("output"));
        }
        let patch = patch_arg(input)?;
        let d = GazeDirection::new(yaw, pitch);
        d.ensure_finite()?;
        let img = h.0.redirect(&patch, d)?;
        let raw = img.as_raw();
        std::slice::from_raw_parts_mut(output, raw.len()).copy_from_slice(raw);
        Ok(())
    }))
}

/// Releases a redirector handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`gz_redirector_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gz_redirector_free(handle: *mut GzRedirector) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Loads an estimator checkpoint. Release with [`gz_estimator_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gz_estimator_load(path: *const c_char, out: *mut *mut GzEstimator) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let e = load_estimator(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(GzEstimator(e)));
        Ok(())
    }))
}

/// Estimates (yaw, pitch) in degrees for a 64×64 RGB8 patch.
///
/// # Safety
/// `handle` must come from [`gz_estimator_load`]; `input` must hold 12288
/// bytes; `yaw` and `pitch` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gz_estimator_estimate(
    handle: *const GzEstimator,
    input: *const u8,
    yaw: *mut f64,
    pitch: *mut f64,
) -> GzStatus {
    guard(AssertUnwindSafe(|| {
        let h = non_null(handle, "handle")?;
        let (yo, po) = (out_ref(yaw, "yaw")?, out_ref(pitch, "pitch")?);
        let patch = patch_arg(input)?;
        let x = gazelab::dataio::image_to_tensor(&patch);
        let d = h.0.estimate(&x.reshape(&[1, 3, 64, 64]))?[0];
        *yo = d.yaw;
        *po = d.pitch;
        Ok(())
    }))
}

/// Releases an estimator handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`gz_estimator_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gz_estimator_free(handle: *mut GzEstimator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
