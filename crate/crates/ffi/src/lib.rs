//! C ABI for `ocu-core`.
//!
//! Every function returns an [`OcuStatus`]; results come back through out
//! pointers. Objects are opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. After a failure,
//! [`ocu_last_error`] copies a description of the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ocu_core::checkpoint::{Body, Checkpoint};
use ocu_core::ocnn::{denoiser_forward, predict, Network};
use ocu_core::optics::{Cascade, InputEncoding, OcuGeometry, OcuModel as CoreModel};
use ocu_core::perf::{energy, ops_count, throughput, PerfSpec};
use ocu_core::srp::{conv2d_reference, fit_kernel, generate_pattern, ocu_convolve, ConvMode, FitConfig, Kernel};
use ocu_core::tensorize::{feature_dim, ImageTensor};
use ocu_core::OcuError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGeometry = 3,
    DimensionMismatch = 4,
    NonFinite = 5,
    Io = 6,
    Format = 7,
    Config = 8,
    Diverged = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A single OCU together with the input encoding and stride it runs with.
pub struct OcuModel {
    model: CoreModel,
    encoding: InputEncoding,
    stride: usize,
}

/// A trained classifier or denoiser.
pub struct OcuNetwork {
    net: Network,
}

/// Throughput (operations per second) and energy (J) estimates.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OcuPerf {
    pub ops_conv: u64,
    pub ops_kernel: u64,
    pub speed_ocu: f64,
    pub speed_ock: f64,
    pub speed_ocl: f64,
    pub energy_modulation: f64,
    pub energy_detection: f64,
    pub energy_total: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &OcuError) -> OcuStatus {
    match err {
        OcuError::InvalidGeometry(_) | OcuError::SingularGeometry { .. } => OcuStatus::InvalidGeometry,
        OcuError::NonFinite(_) => OcuStatus::NonFinite,
        OcuError::DimensionMismatch { .. } => OcuStatus::DimensionMismatch,
        OcuError::InvalidArgument(_) => OcuStatus::InvalidArgument,
        OcuError::Diverged { .. } => OcuStatus::Diverged,
        OcuError::Format { .. } => OcuStatus::Format,
        OcuError::Config(_) => OcuStatus::Config,
        OcuError::Io { .. } => OcuStatus::Io,
    }
}

struct Fail(OcuStatus, String);

impl From<OcuError> for Fail {
    fn from(e: OcuError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OcuStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OcuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OcuStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OcuStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(OcuStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn square_image(pixels: &[f64], size: usize, channels: usize) -> Result<ImageTensor, Fail> {
    if size == 0 || channels == 0 || pixels.len() != size * size * channels {
        return Err(Fail(
            OcuStatus::DimensionMismatch,
            format!("expected {channels}×{size}×{size} pixels, got {}", pixels.len()),
        ));
    }
    Ok(ImageTensor::new(size, channels, pixels.to_vec())?)
}

fn encoding_of(amplitude: bool) -> InputEncoding {
    if amplitude {
        InputEncoding::Amplitude
    } else {
        InputEncoding::Intensity
    }
}

/// Copies the last error message of this thread, NUL-terminated and
/// truncated to `capacity`. Returns the full message length in bytes.
///
/// # Safety
/// `buffer` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ocu_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buffer, n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates an OCU for `kernel_size × kernel_size` kernels with default
/// silicon-on-insulator geometry, `metaunits` per metaline and `layers`
/// diffraction regions, with phases drawn from `seed`.
///
/// # Safety
/// `out` must point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_new(
    kernel_size: usize,
    metaunits: usize,
    layers: usize,
    amplitude_encoding: bool,
    seed: u64,
    out: *mut *mut OcuModel,
) -> OcuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let geometry = OcuGeometry::new(kernel_size * kernel_size, metaunits, layers);
        let cascade = Cascade::new(geometry)?;
        let model = CoreModel::random(cascade, &mut ChaCha8Rng::seed_from_u64(seed));
        *out = Box::into_raw(Box::new(OcuModel {
            model,
            encoding: encoding_of(amplitude_encoding),
            stride: 1,
        }));
        Ok(())
    })
}

/// Loads the unit called `name` from a fit-kernel checkpoint.
///
/// # Safety
/// `path` and `name` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_load(path: *const c_char, name: *const c_char, out: *mut *mut OcuModel) -> OcuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let name = path_arg(name, "name")?.to_string_lossy().into_owned();
        let ck = Checkpoint::load(path)?;
        let (encoding, stride) = match &ck.body {
            Body::Kernels { encoding, stride, .. } => (*encoding, *stride),
            Body::Network { .. } => {
                return Err(Fail(OcuStatus::InvalidArgument, "checkpoint holds a network".into()));
            }
        };
        let model = ck
            .kernel_models()?
            .into_iter()
            .find(|(u, _)| u.name == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Fail(OcuStatus::InvalidArgument, format!("no kernel named {name:?}")))?;
        *out = Box::into_raw(Box::new(OcuModel { model, encoding, stride }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_free(model: *mut OcuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input ports, `H²`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_num_inputs(model: *const OcuModel, out: *mut usize) -> OcuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.num_inputs();
        Ok(())
    })
}

/// Detection gain κ.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_gain(model: *const OcuModel, out: *mut f64) -> OcuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.gain();
        Ok(())
    })
}

/// Trains the unit to reproduce the row-major kernel `values` (length
/// `H²`) on a seeded random pattern of side `pattern_size`. The final
/// per-pixel MSE on the pattern is written to `out_mse`.
///
/// # Safety
/// `model` must be a live handle, `values` must hold `len` doubles and
/// `out_mse` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_fit(
    model: *mut OcuModel,
    values: *const f64,
    len: usize,
    pattern_size: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
    out_mse: *mut f64,
) -> OcuStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let values = slice_arg(values, len, "values")?;
        let h = (len as f64).sqrt().round() as usize;
        let kernel = Kernel::new(h, values.to_vec())?;
        let mut cfg = FitConfig {
            epochs,
            seed,
            encoding: m.encoding,
            stride: m.stride,
            ..FitConfig::default()
        };
        cfg.optimizer.learning_rate = learning_rate;
        let pattern = generate_pattern(seed, pattern_size);
        let outcome = fit_kernel(m.model.clone(), &kernel, &pattern, &cfg)?;
        m.model = outcome.model;
        if let Some(o) = out_mse.as_mut() {
            *o = outcome.best.mse;
        }
        Ok(())
    })
}

/// Side of the feature map for an `image_size` input.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_output_size(model: *const OcuModel, image_size: usize, out: *mut usize) -> OcuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let h = (m.model.num_inputs() as f64).sqrt().round() as usize;
        *out.as_mut().ok_or_else(|| null("out"))? = feature_dim(image_size, h, m.stride)?;
        Ok(())
    })
}

/// Convolves a single-channel `size × size` image (row-major, values in
/// `[0, 1]`) and writes the `G × G` feature map to `out`.
///
/// # Safety
/// `image` must hold `size²` doubles and `out` must have room for
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ocu_model_convolve(
    model: *const OcuModel,
    image: *const f64,
    size: usize,
    out: *mut f64,
    out_len: usize,
) -> OcuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let img = square_image(slice_arg(image, size * size, "image")?, size, 1)?;
        let map = ocu_convolve(&m.model, &img, m.stride, m.encoding)?;
        write_out(map.data(), out, out_len)
    })
}

unsafe fn write_out(data: &[f64], out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    if out_len < data.len() {
        return Err(Fail(
            OcuStatus::BufferTooSmall,
            format!("output needs {} values, buffer holds {out_len}", data.len()),
        ));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

/// Exact sliding-window correlation of a `size × size` image with a
/// row-major `kernel_size × kernel_size` kernel, stride 1, no padding.
///
/// # Safety
/// `image` must hold `size²` doubles, `kernel` `kernel_size²` doubles and
/// `out` room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ocu_conv2d_reference(
    image: *const f64,
    size: usize,
    kernel: *const f64,
    kernel_size: usize,
    out: *mut f64,
    out_len: usize,
) -> OcuStatus {
    guard(|| {
        let img = square_image(slice_arg(image, size * size, "image")?, size, 1)?;
        let k = Kernel::new(kernel_size, slice_arg(kernel, kernel_size * kernel_size, "kernel")?.to_vec())?;
        let map = conv2d_reference(&img, &k, 1, ConvMode::Correlation)?;
        write_out(map.data(), out, out_len)
    })
}

/// Loads a network checkpoint written by `train-classifier` or
/// `train-denoiser`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_network_load(path: *const c_char, out: *mut *mut OcuNetwork) -> OcuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = Checkpoint::load(path_arg(path, "path")?)?.build_network()?;
        *out = Box::into_raw(Box::new(OcuNetwork { net }));
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ocu_network_free(net: *mut OcuNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Predicted class of a `channels × size × size` image (channel-major).
///
/// # Safety
/// `net` must be a live handle, `image` must hold `channels·size²` doubles
/// and `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_network_classify(
    net: *mut OcuNetwork,
    image: *const f64,
    channels: usize,
    size: usize,
    out_class: *mut usize,
) -> OcuStatus {
    guard(|| {
        let n = net.as_mut().ok_or_else(|| null("net"))?;
        let img = square_image(slice_arg(image, channels * size * size, "image")?, size, channels)?;
        let out = out_class.as_mut().ok_or_else(|| null("out_class"))?;
        *out = predict(&mut n.net, std::slice::from_ref(&img))?[0];
        Ok(())
    })
}

/// Denoises a single-channel `size × size` image; the clean estimate
/// (unclamped) is written to `out`.
///
/// # Safety
/// `net` must be a live handle, `image` must hold `size²` doubles and
/// `out` room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ocu_network_denoise(
    net: *mut OcuNetwork,
    image: *const f64,
    size: usize,
    out: *mut f64,
    out_len: usize,
) -> OcuStatus {
    guard(|| {
        let n = net.as_mut().ok_or_else(|| null("net"))?;
        let img = square_image(slice_arg(image, size * size, "image")?, size, 1)?;
        let result = denoiser_forward(&mut n.net, &img)?;
        write_out(result.clean.data(), out, out_len)
    })
}

/// Speed and energy of an optical convolution layer. `rate` is in baud,
/// `energy_per_bit` in joules and `detector_power` in watts.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocu_perf(
    kernel_size: usize,
    channels: usize,
    ocks: usize,
    rate: f64,
    symbols: f64,
    bit_depth: f64,
    energy_per_bit: f64,
    detector_power: f64,
    out: *mut OcuPerf,
) -> OcuStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let spec = PerfSpec {
            kernel_size,
            channels,
            ocks,
            rate,
            symbols,
            bit_depth,
            energy_per_bit,
            detector_power,
        };
        let (ops_conv, ops_kernel) = ops_count(kernel_size, channels)?;
        let t = throughput(&spec)?;
        let e = energy(&spec)?;
        *out = OcuPerf {
            ops_conv,
            ops_kernel,
            speed_ocu: t.ocu,
            speed_ock: t.ock,
            speed_ocl: t.ocl,
            energy_modulation: e.modulation,
            energy_detection: e.detection,
            energy_total: e.total,
        };
        Ok(())
    })
}
