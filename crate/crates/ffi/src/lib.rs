//! C ABI over the `sinmotion` library.
//!
//! Every fallible function returns an [`SmStatus`]; on failure the message is
//! available from [`sm_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that must be released with their `_free`
//! function. Motions are held in the normalized feature space of the model
//! that produced or loaded them.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sinmotion::applications::{build_mask, compose, crowd_seed, generate, harmonize, HarmonizationSpec, LowPass};
use sinmotion::checkpoint::Checkpoint;
use sinmotion::cli::load_like;
use sinmotion::config::RunConfig;
use sinmotion::motion::{bundled_walk, read_bvh_file, write_bvh_file, ContactSpec};
use sinmotion::tensor::Tensor;
use sinmotion::trainer::train;
use sinmotion::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Parse = 5,
    Io = 6,
    Checkpoint = 7,
    NonFinite = 8,
    Divergence = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Trained model with its normalizer and skeleton.
pub struct SmModel {
    ckpt: Checkpoint,
    config: RunConfig,
}

/// Normalized motion, `frames × features` row-major.
pub struct SmMotion {
    data: Tensor<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SmStatus {
    match e {
        Error::Shape(_) => SmStatus::Shape,
        Error::InvalidArgument(_) | Error::DegenerateRotation(_) => SmStatus::InvalidArgument,
        Error::NonFinite(_) => SmStatus::NonFinite,
        Error::Bvh { .. } | Error::Json(_) => SmStatus::Parse,
        Error::Divergence { .. } => SmStatus::Divergence,
        Error::Checkpoint(_) => SmStatus::Checkpoint,
        Error::Config(_) => SmStatus::Config,
        Error::Io { .. } => SmStatus::Io,
    }
}

struct Fail(SmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SmStatus::NullArgument, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SmStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    text(p, what).map(PathBuf::from)
}

unsafe fn model_ref<'a>(p: *const SmModel) -> Result<&'a SmModel, Fail> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn motion_ref<'a>(p: *const SmMotion) -> Result<&'a SmMotion, Fail> {
    p.as_ref().ok_or_else(|| null("motion"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Fail> {
    if out.is_null() {
        Err(null("output pointer"))
    } else {
        Ok(())
    }
}

fn model_from(ckpt: Checkpoint) -> SmModel {
    let config = RunConfig::default().adopt(ckpt.model.config(), &ckpt.train);
    SmModel { ckpt, config }
}

/// Last error message of this thread, or null after a successful call. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Checks `config_text` (`key = value` lines) without using it.
///
/// # Safety
/// `config_text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sm_config_check(config_text: *const c_char) -> SmStatus {
    guard(|| {
        RunConfig::parse(text(config_text, "config text")?)?.validate()?;
        Ok(())
    })
}

/// Trains a model on a BVH file, or on the bundled walk when `bvh_path` is
/// null. `config_text` overrides the defaults and may be null.
///
/// # Safety
/// Non-null strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_train(
    bvh_path: *const c_char,
    config_text: *const c_char,
    out: *mut *mut SmModel,
) -> SmStatus {
    guard(|| {
        check_out(out)?;
        let config = if config_text.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(text(config_text, "config text")?)?
        };
        config.validate()?;
        let m = if bvh_path.is_null() {
            bundled_walk()
        } else {
            read_bvh_file(&path(bvh_path, "BVH path")?)?.to_motion(&ContactSpec::Auto, config.contact_threshold)?
        };
        let (ckpt, _) = train(&m, config.model_config(m.features())?, config.train_config(), |_, _| {
            Ok(())
        })?;
        put(out, SmModel { ckpt, config })
    })
}

/// # Safety
/// `checkpoint_path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_model_load(checkpoint_path: *const c_char, out: *mut *mut SmModel) -> SmStatus {
    guard(|| {
        check_out(out)?;
        let ckpt = Checkpoint::load(&path(checkpoint_path, "checkpoint path")?)?;
        put(out, model_from(ckpt))
    })
}

/// # Safety
/// `model` must be a live handle; `checkpoint_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sm_model_save(model: *const SmModel, checkpoint_path: *const c_char) -> SmStatus {
    guard(|| {
        model_ref(model)?
            .ckpt
            .save(&path(checkpoint_path, "checkpoint path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_model_free(model: *mut SmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Frame count of the training motion; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_model_frames(model: *const SmModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.train_frames())
}

/// Per-frame feature count; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_model_features(model: *const SmModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.features())
}

/// Samples one motion of `frames` frames (0: the training length). The
/// result matches the first sample of a crowd drawn with `seed`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_sample(
    model: *const SmModel,
    frames: usize,
    seed: u64,
    out: *mut *mut SmMotion,
) -> SmStatus {
    guard(|| {
        check_out(out)?;
        let m = model_ref(model)?;
        let n = if frames == 0 { m.ckpt.train_frames() } else { frames };
        m.ckpt.model.config().check_frames(n)?;
        let data = generate(
            &mut m.ckpt.model.predictor(),
            &m.ckpt.train.schedule()?,
            n,
            m.ckpt.features(),
            crowd_seed(seed, 0),
            m.config.sampler(),
        )?;
        put(out, SmMotion { data })
    })
}

/// Regenerates `reference` outside the kept frame ranges
/// `[starts[i], ends[i])`, blending over `ramp_frames` frames.
///
/// # Safety
/// `starts` and `ends` must each hold `count` values (or be null when
/// `count` is 0); handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_compose(
    model: *const SmModel,
    reference: *const SmMotion,
    starts: *const usize,
    ends: *const usize,
    count: usize,
    ramp_frames: usize,
    seed: u64,
    out: *mut *mut SmMotion,
) -> SmStatus {
    guard(|| {
        check_out(out)?;
        let (m, y) = (model_ref(model)?, &motion_ref(reference)?.data);
        if count > 0 && (starts.is_null() || ends.is_null()) {
            return Err(null("range array"));
        }
        let keep: Vec<_> = (0..count).map(|i| *starts.add(i)..*ends.add(i)).collect();
        let n = y.shape()[0];
        m.ckpt.model.config().check_frames(n)?;
        let mask = build_mask(n, &m.ckpt.layout, &keep, &[], ramp_frames)?;
        let data = compose(
            &mut m.ckpt.model.predictor(),
            &m.ckpt.train.schedule()?,
            y,
            &mask,
            crowd_seed(seed, 0),
            m.config.sampler(),
        )?;
        put(out, SmMotion { data })
    })
}

/// Resynthesizes `content` while following its low frequencies after
/// downsampling by `filter_factor`; a factor of 0 disables the guidance.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_harmonize(
    model: *const SmModel,
    content: *const SmMotion,
    filter_factor: usize,
    seed: u64,
    out: *mut *mut SmMotion,
) -> SmStatus {
    guard(|| {
        check_out(out)?;
        let (m, y) = (model_ref(model)?, &motion_ref(content)?.data);
        m.ckpt.model.config().check_frames(y.shape()[0])?;
        let spec = HarmonizationSpec {
            filter: if filter_factor == 0 {
                LowPass::Zero
            } else {
                LowPass::Resample(filter_factor)
            },
            frames: None,
        };
        let data = harmonize(
            &mut m.ckpt.model.predictor(),
            &m.ckpt.train.schedule()?,
            None,
            y,
            &spec,
            crowd_seed(seed, 0),
            m.config.sampler(),
        )?;
        put(out, SmMotion { data })
    })
}

/// Reads a BVH with `model`'s skeleton conventions and normalizes it.
///
/// # Safety
/// `model` must be a live handle; `bvh_path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sm_motion_read_bvh(
    model: *const SmModel,
    bvh_path: *const c_char,
    out: *mut *mut SmMotion,
) -> SmStatus {
    guard(|| {
        check_out(out)?;
        let m = model_ref(model)?;
        let seq = load_like(&m.ckpt, &path(bvh_path, "BVH path")?, &m.config)?;
        put(
            out,
            SmMotion {
                data: m.ckpt.normalize(&seq)?,
            },
        )
    })
}

/// Denormalizes `motion` with `model` and writes it as BVH.
///
/// # Safety
/// Handles must be live; `bvh_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sm_motion_write_bvh(
    model: *const SmModel,
    motion: *const SmMotion,
    bvh_path: *const c_char,
) -> SmStatus {
    guard(|| {
        let (m, x) = (model_ref(model)?, motion_ref(motion)?);
        write_bvh_file(&m.ckpt.to_motion(&x.data)?, &path(bvh_path, "BVH path")?)?;
        Ok(())
    })
}

/// # Safety
/// `motion` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_motion_frames(motion: *const SmMotion) -> usize {
    motion.as_ref().map_or(0, |m| m.data.shape()[0])
}

/// # Safety
/// `motion` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_motion_features(motion: *const SmMotion) -> usize {
    motion.as_ref().map_or(0, |m| m.data.shape()[1])
}

/// Copies the normalized features into `buf`, which must hold
/// `frames × features` values.
///
/// # Safety
/// `motion` must be a live handle; `buf` must be writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn sm_motion_copy(motion: *const SmMotion, buf: *mut f32, len: usize) -> SmStatus {
    guard(|| {
        let x = motion_ref(motion)?.data.data();
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < x.len() {
            return Err(Fail(
                SmStatus::BufferTooSmall,
                format!("buffer holds {len} values, motion needs {}", x.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(x.as_ptr(), buf, x.len());
        Ok(())
    })
}

/// # Safety
/// `motion` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_motion_free(motion: *mut SmMotion) {
    if !motion.is_null() {
        drop(Box::from_raw(motion));
    }
}
