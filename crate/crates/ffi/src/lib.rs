//! C ABI over the `faceshield` core.
//!
//! Objects cross the boundary as opaque handles (`FsStack`, `FsImage`) that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns an [`FsStatus`]; on failure [`fs_last_error`] describes the error
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use faceshield::image::ImageTensor;
use faceshield::metrics::{att_id, psnr, ssim};
use faceshield::models::stack::{ModelStack, ToyStack, ToyTrainConfig};
use faceshield::optimize::{run_defense, RunConfig};
use faceshield::swap::{swap, SwapConfig};
use faceshield::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    Runtime = 6,
    Panic = 7,
}

/// A trained model stack with its swap settings.
pub struct FsStack {
    stack: ToyStack,
    models: ModelStack,
    swap: SwapConfig,
}

/// An RGB image with values in `[0, 1]`.
pub struct FsImage {
    image: ImageTensor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FsStatus {
    match err {
        Error::InvalidArgument(_)
        | Error::TimestepOutOfRange { .. }
        | Error::UnknownRegion(_)
        | Error::UnknownAttribute(_)
        | Error::Json(_) => FsStatus::InvalidArgument,
        Error::ShapeMismatch { .. } => FsStatus::ShapeMismatch,
        Error::Io(_) | Error::Image(_) | Error::Csv(_) => FsStatus::Io,
        Error::Checkpoint(_) => FsStatus::Checkpoint,
        _ => FsStatus::Runtime,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FsStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FsStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn string(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Core(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn optional_json<T: serde::de::DeserializeOwned + Default>(
    p: *const c_char,
    what: &'static str,
) -> Result<T, Failure> {
    if p.is_null() {
        return Ok(T::default());
    }
    Ok(serde_json::from_str(&string(p, what)?).map_err(Error::from)?)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn fs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads the stack cached in `dir`, training it with `config_json` (a toy
/// training config; null for defaults) when absent or stale.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `config_json` null or NUL-terminated;
/// `out_stack` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_stack_load_or_train(
    dir: *const c_char,
    config_json: *const c_char,
    out_stack: *mut *mut FsStack,
) -> FsStatus {
    guard(|| {
        let dir = PathBuf::from(string(dir, "dir")?);
        let cfg: ToyTrainConfig = optional_json(config_json, "config_json")?;
        let slot = out(out_stack, "out_stack")?;
        let stack = ToyStack::load_or_train(dir, &cfg)?;
        let models = stack.models()?;
        *slot = boxed(FsStack {
            stack,
            models,
            swap: SwapConfig::default(),
        });
        Ok(())
    })
}

/// Loads a saved stack without training.
///
/// # Safety
/// `dir` must be NUL-terminated and `out_stack` valid.
#[no_mangle]
pub unsafe extern "C" fn fs_stack_load(
    dir: *const c_char,
    out_stack: *mut *mut FsStack,
) -> FsStatus {
    guard(|| {
        let dir = PathBuf::from(string(dir, "dir")?);
        let slot = out(out_stack, "out_stack")?;
        let stack = ToyStack::load(dir)?;
        let models = stack.models()?;
        *slot = boxed(FsStack {
            stack,
            models,
            swap: SwapConfig::default(),
        });
        Ok(())
    })
}

/// Replaces the swap settings used by [`fs_swap`] with `config_json`.
///
/// # Safety
/// `stack` must come from this library; `config_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fs_stack_set_swap_config(
    stack: *mut FsStack,
    config_json: *const c_char,
) -> FsStatus {
    guard(|| {
        let s = out(stack, "stack")?;
        let cfg: SwapConfig =
            serde_json::from_str(&string(config_json, "config_json")?).map_err(Error::from)?;
        cfg.validate(s.models.schedule.steps())?;
        s.swap = cfg;
        Ok(())
    })
}

/// Image shape `(height, width, channels)` the stack expects.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fs_stack_image_shape(
    stack: *const FsStack,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> FsStatus {
    guard(|| {
        let s = deref(stack, "stack")?;
        let (h, w, c) = s.models.codec.image_shape();
        *out(height, "height")? = h;
        *out(width, "width")? = w;
        *out(channels, "channels")? = c;
        Ok(())
    })
}

/// Training seed of the stack.
///
/// # Safety
/// `stack` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fs_stack_seed(stack: *const FsStack) -> u64 {
    stack.as_ref().map_or(0, |s| s.stack.config.seed)
}

/// # Safety
/// `stack` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_stack_free(stack: *mut FsStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Creates an image from interleaved 8-bit RGB rows of `height * width * 3` bytes.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out_image` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fs_image_from_rgb8(
    height: usize,
    width: usize,
    data: *const u8,
    len: usize,
    out_image: *mut *mut FsImage,
) -> FsStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let slot = out(out_image, "out_image")?;
        if height.checked_mul(width).and_then(|n| n.checked_mul(3)) != Some(len) {
            return Err(Error::InvalidArgument(format!(
                "buffer of {len} bytes does not hold a {height}x{width} RGB image"
            ))
            .into());
        }
        let bytes = std::slice::from_raw_parts(data, len);
        let values = bytes.iter().map(|&b| faceshield::image::from_u8(b)).collect();
        *slot = boxed(FsImage {
            image: ImageTensor::new(height, width, 3, values)?,
        });
        Ok(())
    })
}

/// Copies the image as interleaved 8-bit RGB into `buffer` (`len` must equal
/// `height * width * channels`).
///
/// # Safety
/// `buffer` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_image_to_rgb8(
    image: *const FsImage,
    buffer: *mut u8,
    len: usize,
) -> FsStatus {
    guard(|| {
        let img = &deref(image, "image")?.image;
        if buffer.is_null() {
            return Err(Failure::Null("buffer"));
        }
        if len != img.len() {
            return Err(Error::InvalidArgument(format!(
                "buffer holds {len} bytes, image needs {}",
                img.len()
            ))
            .into());
        }
        let dst = std::slice::from_raw_parts_mut(buffer, len);
        for (d, v) in dst.iter_mut().zip(img.data()) {
            *d = faceshield::image::to_u8(*v);
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out_image` valid.
#[no_mangle]
pub unsafe extern "C" fn fs_image_load_png(
    path: *const c_char,
    out_image: *mut *mut FsImage,
) -> FsStatus {
    guard(|| {
        let p = string(path, "path")?;
        let slot = out(out_image, "out_image")?;
        *slot = boxed(FsImage {
            image: ImageTensor::load_png(p)?,
        });
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fs_image_save_png(
    image: *const FsImage,
    path: *const c_char,
) -> FsStatus {
    guard(|| {
        let img = deref(image, "image")?;
        img.image.save_png(string(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fs_image_shape(
    image: *const FsImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> FsStatus {
    guard(|| {
        let (h, w, c) = deref(image, "image")?.image.shape();
        *out(height, "height")? = h;
        *out(width, "width")? = w;
        *out(channels, "channels")? = c;
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_image_free(image: *mut FsImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Protects `source` with the run settings in `config_json` (null for the
/// reference defaults). Writes the protected image and the final latent
/// infinity-norm distance from the source latent.
///
/// # Safety
/// Handles must come from this library; `config_json` null or NUL-terminated;
/// output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn fs_protect(
    stack: *const FsStack,
    source: *const FsImage,
    config_json: *const c_char,
    out_image: *mut *mut FsImage,
    out_budget_linf: *mut f64,
) -> FsStatus {
    guard(|| {
        let s = deref(stack, "stack")?;
        let src = deref(source, "source")?;
        let cfg: RunConfig = optional_json(config_json, "config_json")?;
        let slot = out(out_image, "out_image")?;
        let budget = out(out_budget_linf, "out_budget_linf")?;
        let result = run_defense(&src.image, &s.models, &cfg)?;
        *budget = result.budget_linf();
        *slot = boxed(FsImage {
            image: result.protected_image,
        });
        Ok(())
    })
}

/// Swaps the identity of `source` onto `target`; `seed` offsets the stack's swap seed.
///
/// # Safety
/// Handles must come from this library and `out_image` be valid.
#[no_mangle]
pub unsafe extern "C" fn fs_swap(
    stack: *const FsStack,
    source: *const FsImage,
    target: *const FsImage,
    seed: u64,
    out_image: *mut *mut FsImage,
) -> FsStatus {
    guard(|| {
        let s = deref(stack, "stack")?;
        let src = deref(source, "source")?;
        let tar = deref(target, "target")?;
        let slot = out(out_image, "out_image")?;
        let cfg = SwapConfig {
            seed: s.swap.seed.wrapping_add(seed),
            ..s.swap
        };
        *slot = boxed(FsImage {
            image: swap(&src.image, &tar.image, &s.models, &cfg)?,
        });
        Ok(())
    })
}

/// Identity loss rate of a protected swap relative to the clean swap.
/// `out_clamped` is set to 1 when the baseline cosine hit the floor.
///
/// # Safety
/// Handles must come from this library and output pointers be valid.
#[no_mangle]
pub unsafe extern "C" fn fs_att_id(
    stack: *const FsStack,
    source: *const FsImage,
    clean_swap: *const FsImage,
    protected_swap: *const FsImage,
    out_value: *mut f64,
    out_clamped: *mut i32,
) -> FsStatus {
    guard(|| {
        let s = deref(stack, "stack")?;
        let a = att_id(
            &deref(source, "source")?.image,
            &deref(clean_swap, "clean_swap")?.image,
            &deref(protected_swap, "protected_swap")?.image,
            s.models.embedder.as_ref(),
        )?;
        *out(out_value, "out_value")? = a.value;
        *out(out_clamped, "out_clamped")? = i32::from(a.clamped);
        Ok(())
    })
}

/// PSNR in dB; `+inf` for identical images.
///
/// # Safety
/// Handles must come from this library and `out_value` be valid.
#[no_mangle]
pub unsafe extern "C" fn fs_psnr(
    a: *const FsImage,
    b: *const FsImage,
    out_value: *mut f64,
) -> FsStatus {
    guard(|| {
        let v = psnr(&deref(a, "a")?.image, &deref(b, "b")?.image)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// # Safety
/// Handles must come from this library and `out_value` be valid.
#[no_mangle]
pub unsafe extern "C" fn fs_ssim(
    a: *const FsImage,
    b: *const FsImage,
    out_value: *mut f64,
) -> FsStatus {
    guard(|| {
        let v = ssim(&deref(a, "a")?.image, &deref(b, "b")?.image)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}
