//! C ABI for the netdet detector: opaque model handles, integer error
//! codes, and a thread-local last-error message. The generated header
//! lands in `include/netdet.h` at build time.
//!
//! Conventions:
//! * every fallible function returns a [`NetdetStatus`]; `NETDET_STATUS_OK`
//!   is zero,
//! * out-parameters are written only on success,
//! * handles from `netdet_model_*` constructors are freed with
//!   [`netdet_model_free`]; passing them anywhere else after that is
//!   undefined behavior, as in any C API,
//! * images are row-major grayscale `f64` buffers of `size * size` pixels
//!   in `[0, 1]`, and box coordinates are normalized to `[0, 1]`.

use netdet::checkpoint;
use netdet::detector::{predict, train, Example, Model, ModelConfig, PredictConfig, TrainConfig, Variant};
use netdet::scenes::{generate_scene, SceneConfig};
use netdet::tensor::{ParamStore, Tensor};
use netdet::NetError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

/// Result code shared by all fallible entry points.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetdetStatus {
    /// Success.
    Ok = 0,
    /// A pointer argument was null.
    NullArgument = 1,
    /// An argument failed validation (bad variant name, bad buffer size...).
    InvalidArgument = 2,
    /// File read/write failed.
    Io = 3,
    /// Numerical failure (divergence, non-finite values).
    Numeric = 4,
    /// Any other internal failure; see `netdet_last_error`.
    Internal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(cleaned).unwrap());
}

fn fail(status: NetdetStatus, msg: &str) -> NetdetStatus {
    set_error(msg);
    status
}

fn fail_with(err: NetError) -> NetdetStatus {
    let status = match &err {
        NetError::Io(_) | NetError::Checkpoint(_) => NetdetStatus::Io,
        NetError::Config(_) | NetError::InvalidShape { .. } | NetError::ShapeMismatch { .. } => {
            NetdetStatus::InvalidArgument
        }
        NetError::NonFinite { .. } | NetError::Diverged { .. } => NetdetStatus::Numeric,
        _ => NetdetStatus::Internal,
    };
    fail(status, &err.to_string())
}

/// Message describing the most recent failure on this thread, empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn netdet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string, e.g. "0.1.0".
#[no_mangle]
pub extern "C" fn netdet_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Opaque detector handle: model architecture plus its parameters.
pub struct NetdetModel {
    model: Model,
    store: ParamStore,
}

/// One decoded detection in normalized image coordinates.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct NetdetDetection {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    /// Softmax confidence in (0, 1).
    pub score: f64,
    /// Object class, 1-based (0 is background and never emitted).
    pub class_id: u32,
}

/// One ground-truth box of a generated scene.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct NetdetGroundTruth {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub class_id: u32,
    /// 0 = small, 1 = medium, 2 = large.
    pub scale_class: u32,
}

unsafe fn parse_variant(variant: *const c_char) -> Result<Variant, NetdetStatus> {
    if variant.is_null() {
        return Err(fail(NetdetStatus::NullArgument, "variant must not be null"));
    }
    let s = match CStr::from_ptr(variant).to_str() {
        Ok(s) => s,
        Err(_) => return Err(fail(NetdetStatus::InvalidArgument, "variant must be UTF-8")),
    };
    Variant::parse(s).map_err(|e| fail_with(e))
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, NetdetStatus> {
    if ptr.is_null() {
        return Err(fail(NetdetStatus::NullArgument, "path must not be null"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(NetdetStatus::InvalidArgument, "path must be UTF-8")),
    }
}

fn build_model(variant: Variant, seed: u64) -> Result<NetdetModel, NetError> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(ModelConfig::desk(variant), &mut store, &mut rng)?;
    Ok(NetdetModel { model, store })
}

/// Create a freshly initialized detector.
///
/// `variant` selects the pyramid reconfiguration: "baseline", "nem", "ntm",
/// "netm", "netm+tdp", "netnet", or "nnem". `seed` drives weight init.
///
/// # Safety
/// `variant` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_new(
    variant: *const c_char,
    seed: u64,
    out: *mut *mut NetdetModel,
) -> NetdetStatus {
    if out.is_null() {
        return fail(NetdetStatus::NullArgument, "out must not be null");
    }
    let variant = match parse_variant(variant) {
        Ok(v) => v,
        Err(s) => return s,
    };
    match build_model(variant, seed) {
        Ok(m) => {
            *out = Box::into_raw(Box::new(m));
            NetdetStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Destroy a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be a pointer previously returned by a constructor, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_free(model: *mut NetdetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square input image the model expects.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_input_size(model: *const NetdetModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).model.config.pyramid.input_size
}

/// Total number of scalar parameters in the model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_num_params(model: *const NetdetModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).store.num_scalars()
}

/// Write the model parameters to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_save(model: *const NetdetModel, path: *const c_char) -> NetdetStatus {
    if model.is_null() {
        return fail(NetdetStatus::NullArgument, "model must not be null");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match checkpoint::save_file(path, &(*model).store) {
        Ok(()) => NetdetStatus::Ok,
        Err(e) => fail_with(e),
    }
}

/// Create a model of the given variant and restore its parameters from a
/// checkpoint written by [`netdet_model_save`] (or the CLI trainer). The
/// variant must match the one the checkpoint was produced with.
///
/// # Safety
/// `variant` and `path` must be valid C strings, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_load(
    variant: *const c_char,
    path: *const c_char,
    out: *mut *mut NetdetModel,
) -> NetdetStatus {
    if out.is_null() {
        return fail(NetdetStatus::NullArgument, "out must not be null");
    }
    let variant = match parse_variant(variant) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let mut handle = match build_model(variant, 0) {
        Ok(m) => m,
        Err(e) => return fail_with(e),
    };
    let loaded = match checkpoint::load_file(path) {
        Ok(l) => l,
        Err(e) => return fail_with(e),
    };
    if let Err(e) = checkpoint::restore(&mut handle.store, loaded) {
        return fail_with(e);
    }
    *out = Box::into_raw(Box::new(handle));
    NetdetStatus::Ok
}

/// Train the model in place on procedurally generated scenes.
///
/// `scene_seed` fixes the dataset, `num_scenes` its size; training runs for
/// `epochs` epochs with the stock schedule (warmup + milestone decay) and
/// `train_seed` driving the shuffle. On success `*final_loss_out` (if
/// non-null) receives the last epoch's mean loss.
///
/// # Safety
/// `model` must be a live handle; `final_loss_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_train_synthetic(
    model: *mut NetdetModel,
    scene_seed: u64,
    num_scenes: usize,
    epochs: usize,
    train_seed: u64,
    final_loss_out: *mut f64,
) -> NetdetStatus {
    if model.is_null() {
        return fail(NetdetStatus::NullArgument, "model must not be null");
    }
    if num_scenes == 0 || epochs == 0 {
        return fail(NetdetStatus::InvalidArgument, "num_scenes and epochs must be positive");
    }
    let handle = &mut *model;
    let scene_cfg = SceneConfig {
        image_size: handle.model.config.pyramid.input_size,
        base_seed: scene_seed,
        ..SceneConfig::default()
    };
    let mut dataset: Vec<Example> = Vec::with_capacity(num_scenes);
    for i in 0..num_scenes as u64 {
        match generate_scene(&scene_cfg, i) {
            Ok(scene) => dataset.push((scene.image, scene.gts)),
            Err(e) => return fail_with(e),
        }
    }
    let cfg = TrainConfig { epochs, seed: train_seed, ..TrainConfig::default() };
    match train(&handle.model, &mut handle.store, &dataset, &cfg) {
        Ok(losses) => {
            if !final_loss_out.is_null() {
                *final_loss_out = losses.last().copied().unwrap_or(f64::NAN);
            }
            NetdetStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Run detection on one grayscale image.
///
/// `pixels` must hold `size * size` values where `size` is
/// [`netdet_model_input_size`]. Up to `capacity` detections are written to
/// `detections` in descending score order; `*count_out` receives how many.
/// If more than `capacity` detections survive thresholding, the lowest
/// scoring ones are dropped (that is not an error).
///
/// # Safety
/// `pixels` must point to `pixel_count` readable doubles, `detections` to
/// `capacity` writable slots, and `count_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn netdet_model_detect(
    model: *const NetdetModel,
    pixels: *const f64,
    pixel_count: usize,
    score_threshold: f64,
    detections: *mut NetdetDetection,
    capacity: usize,
    count_out: *mut usize,
) -> NetdetStatus {
    if model.is_null() || pixels.is_null() || count_out.is_null() || (capacity > 0 && detections.is_null()) {
        return fail(NetdetStatus::NullArgument, "null argument to netdet_model_detect");
    }
    let handle = &*model;
    let size = handle.model.config.pyramid.input_size;
    if pixel_count != size * size {
        return fail(
            NetdetStatus::InvalidArgument,
            &format!("expected {} pixels ({}x{}), got {}", size * size, size, size, pixel_count),
        );
    }
    if !(0.0..=1.0).contains(&score_threshold) {
        return fail(NetdetStatus::InvalidArgument, "score_threshold must be in [0, 1]");
    }
    let data = std::slice::from_raw_parts(pixels, pixel_count).to_vec();
    let image = match Tensor::new(vec![1, size, size], data) {
        Ok(t) => t,
        Err(e) => return fail_with(e),
    };
    let cfg = PredictConfig { score_thresh: score_threshold, ..PredictConfig::default() };
    let dets = match predict(&handle.model, &handle.store, &image, &cfg) {
        Ok(d) => d,
        Err(e) => return fail_with(e),
    };
    let n = dets.len().min(capacity);
    let out = std::slice::from_raw_parts_mut(detections, n);
    for (slot, det) in out.iter_mut().zip(&dets) {
        *slot = NetdetDetection {
            xmin: det.bbox.xmin,
            ymin: det.bbox.ymin,
            xmax: det.bbox.xmax,
            ymax: det.bbox.ymax,
            score: det.score,
            class_id: det.class_id as u32,
        };
    }
    *count_out = n;
    NetdetStatus::Ok
}

/// Generate a deterministic synthetic scene.
///
/// The image (`image_size * image_size` pixels) is written to `pixels` if
/// `pixel_capacity` is large enough, and up to `gt_capacity` ground-truth
/// boxes to `gts`; `*gt_count_out` receives the true box count (which may
/// exceed `gt_capacity`, in which case the extras are dropped).
///
/// # Safety
/// Buffers must match their stated capacities; `gt_count_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn netdet_scene_generate(
    base_seed: u64,
    index: u64,
    image_size: usize,
    pixels: *mut f64,
    pixel_capacity: usize,
    gts: *mut NetdetGroundTruth,
    gt_capacity: usize,
    gt_count_out: *mut usize,
) -> NetdetStatus {
    if pixels.is_null() || gt_count_out.is_null() || (gt_capacity > 0 && gts.is_null()) {
        return fail(NetdetStatus::NullArgument, "null argument to netdet_scene_generate");
    }
    if pixel_capacity < image_size * image_size {
        return fail(NetdetStatus::InvalidArgument, "pixel buffer smaller than image_size^2");
    }
    let cfg = SceneConfig { image_size, base_seed, ..SceneConfig::default() };
    let scene = match generate_scene(&cfg, index) {
        Ok(s) => s,
        Err(e) => return fail_with(e),
    };
    let out = std::slice::from_raw_parts_mut(pixels, image_size * image_size);
    out.copy_from_slice(scene.image.data());
    let n = scene.gts.len().min(gt_capacity);
    let gt_out = std::slice::from_raw_parts_mut(gts, n);
    for (slot, gt) in gt_out.iter_mut().zip(&scene.gts) {
        *slot = NetdetGroundTruth {
            xmin: gt.bbox.xmin,
            ymin: gt.bbox.ymin,
            xmax: gt.bbox.xmax,
            ymax: gt.bbox.ymax,
            class_id: gt.class_id as u32,
            scale_class: gt.scale_class as u32,
        };
    }
    *gt_count_out = n;
    NetdetStatus::Ok
}
