//! C ABI over `crydet`: opaque backbone and head handles, status codes and
//! a per-thread last-error message.
//!
//! Every function that can fail returns a [`CrydetStatus`]; on failure the
//! message is available from [`crydet_last_error`] until the next failing
//! call on the same thread. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use crydet::audio::{
    log_mel, resample, spectrograms_for_clip, AudioClip, LogMel, MelProfile, Spectrogram,
};
use crydet::diffcore::Tensor;
use crydet::model::{load_weights, save_weights, AnomalyHead, BlazeNet, FEATURE_DIM, INPUT_SIZE};
use crydet::Error;

/// Width of the backbone feature vector.
pub const CRYDET_FEATURE_DIM: usize = 224;
/// Side of the square log-Mel input the backbone expects.
pub const CRYDET_INPUT_SIZE: usize = 64;

const _: () = assert!(CRYDET_FEATURE_DIM == FEATURE_DIM && CRYDET_INPUT_SIZE == INPUT_SIZE);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrydetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Log-Mel front-end presets.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrydetProfile {
    /// 8 kHz, 1 s windows, 64×64 output.
    Blazenet = 0,
    /// 8 kHz, 5 s windows, 64×64 output.
    Blazenet5s = 1,
    /// 16 kHz, 1 s windows, 96×64 output.
    Embedding = 2,
}

impl CrydetProfile {
    fn profile(self) -> MelProfile {
        match self {
            CrydetProfile::Blazenet => MelProfile::blazenet(),
            CrydetProfile::Blazenet5s => MelProfile::blazenet_5s(),
            CrydetProfile::Embedding => MelProfile::embedding(),
        }
    }
}

/// Opaque BlazeNet classifier.
pub struct CrydetBackbone {
    net: BlazeNet,
    front: LogMel,
}

/// Opaque anomaly head.
pub struct CrydetHead {
    head: AnomalyHead,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CrydetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CrydetStatus::Io,
            Error::Format(_)
            | Error::Decode(_)
            | Error::UnsupportedFormat(_)
            | Error::Parse { .. } => CrydetStatus::Format,
            Error::Dimension(_) => CrydetStatus::Dimension,
            _ => CrydetStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: CrydetStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrydetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrydetStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CrydetStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(CrydetStatus::NullPointer, format!("{what} is null"))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    non_null(path, "path")?;
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(CrydetStatus::InvalidArgument, "path is not UTF-8"),
    }
}

unsafe fn clip_arg(
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
) -> Result<AudioClip, Failure> {
    non_null(samples, "samples")?;
    let data = std::slice::from_raw_parts(samples, n_samples).to_vec();
    Ok(AudioClip::new(data, sample_rate)?)
}

unsafe fn backbone_ref<'a>(net: *const CrydetBackbone) -> Result<&'a CrydetBackbone, Failure> {
    non_null(net, "backbone")?;
    Ok(&*net)
}

unsafe fn head_ref<'a>(head: *const CrydetHead) -> Result<&'a CrydetHead, Failure> {
    non_null(head, "head")?;
    Ok(&*head)
}

fn new_backbone(net: BlazeNet) -> Result<*mut CrydetBackbone, Failure> {
    let front = LogMel::new(MelProfile::blazenet())?;
    Ok(Box::into_raw(Box::new(CrydetBackbone { net, front })))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crydet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crydet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a randomly initialized backbone.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn crydet_backbone_new(
    seed: u64,
    out: *mut *mut CrydetBackbone,
) -> CrydetStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = new_backbone(BlazeNet::new(seed))?;
        Ok(())
    })
}

/// Loads backbone weights from a CRYD file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crydet_backbone_load(
    path: *const c_char,
    out: *mut *mut CrydetBackbone,
) -> CrydetStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let net = BlazeNet::try_from(load_weights(&path)?)?;
        *out = new_backbone(net)?;
        Ok(())
    })
}

/// Writes backbone weights to a CRYD file.
///
/// # Safety
/// `net` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crydet_backbone_save(
    net: *const CrydetBackbone,
    path: *const c_char,
) -> CrydetStatus {
    guard(|| {
        let net = backbone_ref(net)?;
        save_weights(&net.net.weights(), &path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a backbone. NULL is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crydet_backbone_free(net: *mut CrydetBackbone) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of trainable parameters, or 0 for NULL.
///
/// # Safety
/// `net` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn crydet_backbone_param_count(net: *const CrydetBackbone) -> usize {
    net.as_ref().map_or(0, |n| n.net.param_count())
}

/// Runs the backbone on one 64×64 row-major log-Mel spectrogram.
/// `feature_out` receives 224 values; `logits_out` (may be NULL) receives
/// the two class logits, cry second.
///
/// # Safety
/// `spec` must hold 4096 floats, `feature_out` room for 224 and
/// `logits_out`, when not NULL, room for 2.
#[no_mangle]
pub unsafe extern "C" fn crydet_backbone_forward(
    net: *const CrydetBackbone,
    spec: *const f32,
    feature_out: *mut f32,
    logits_out: *mut f32,
) -> CrydetStatus {
    guard(|| {
        let net = backbone_ref(net)?;
        non_null(spec, "spec")?;
        non_null(feature_out, "feature_out")?;
        let data = std::slice::from_raw_parts(spec, INPUT_SIZE * INPUT_SIZE).to_vec();
        let spec = Spectrogram::new(
            Tensor::new(&[INPUT_SIZE, INPUT_SIZE], data)?,
            MelProfile::blazenet(),
        )?;
        let out = net.net.forward(&spec)?;
        std::slice::from_raw_parts_mut(feature_out, FEATURE_DIM).copy_from_slice(&out.feature);
        if !logits_out.is_null() {
            std::slice::from_raw_parts_mut(logits_out, 2).copy_from_slice(&out.logits);
        }
        Ok(())
    })
}

/// Cry probability of every non-overlapping one-second window of a clip at
/// any sample rate. `n_frames_out` always receives the window count; if
/// `capacity` is smaller, nothing else is written and
/// `CRYDET_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `samples` must hold `n_samples` floats, `scores_out` room for
/// `capacity` floats (may be NULL when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn crydet_backbone_score_clip(
    net: *const CrydetBackbone,
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
    scores_out: *mut f32,
    capacity: usize,
    n_frames_out: *mut usize,
) -> CrydetStatus {
    guard(|| {
        let net = backbone_ref(net)?;
        non_null(n_frames_out, "n_frames_out")?;
        let clip = clip_arg(samples, n_samples, sample_rate)?;
        let specs = spectrograms_for_clip(&clip, &net.front)?;
        *n_frames_out = specs.len();
        if specs.len() > capacity {
            return fail(
                CrydetStatus::BufferTooSmall,
                format!("{} windows, capacity {capacity}", specs.len()),
            );
        }
        if specs.is_empty() {
            return Ok(());
        }
        non_null(scores_out, "scores_out")?;
        let refs: Vec<&Spectrogram> = specs.iter().collect();
        let out = std::slice::from_raw_parts_mut(scores_out, specs.len());
        for (o, r) in out.iter_mut().zip(net.net.forward_batch(&refs)?) {
            *o = r.cry_score();
        }
        Ok(())
    })
}

/// Log-Mel spectrogram of exactly one example window. The clip is
/// resampled to the profile rate first and must then be one window long.
/// Writes frames×mels row-major values; `frames_out`/`mels_out` always
/// receive the shape.
///
/// # Safety
/// `samples` must hold `n_samples` floats and `out` room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn crydet_log_mel(
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
    profile: CrydetProfile,
    out: *mut f32,
    capacity: usize,
    frames_out: *mut usize,
    mels_out: *mut usize,
) -> CrydetStatus {
    guard(|| {
        non_null(frames_out, "frames_out")?;
        non_null(mels_out, "mels_out")?;
        let profile = profile.profile();
        let (frames, mels) = profile.target_shape;
        *frames_out = frames;
        *mels_out = mels;
        if frames * mels > capacity {
            return fail(
                CrydetStatus::BufferTooSmall,
                format!("need {} floats, capacity {capacity}", frames * mels),
            );
        }
        non_null(out, "out")?;
        let clip = resample(
            &clip_arg(samples, n_samples, sample_rate)?,
            profile.sample_rate,
        )?;
        let spec = log_mel(&clip, &profile)?;
        std::slice::from_raw_parts_mut(out, frames * mels).copy_from_slice(spec.data().data());
        Ok(())
    })
}

/// Loads anomaly-head weights from a CRYD file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crydet_head_load(
    path: *const c_char,
    out: *mut *mut CrydetHead,
) -> CrydetStatus {
    guard(|| {
        non_null(out, "out")?;
        let head = AnomalyHead::try_from(load_weights(&path_arg(path)?)?)?;
        *out = Box::into_raw(Box::new(CrydetHead { head }));
        Ok(())
    })
}

/// Creates a randomly initialized head for `input_dim`-wide features.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crydet_head_new(
    input_dim: usize,
    seed: u64,
    out: *mut *mut CrydetHead,
) -> CrydetStatus {
    guard(|| {
        non_null(out, "out")?;
        let head = AnomalyHead::new(input_dim, seed)?;
        *out = Box::into_raw(Box::new(CrydetHead { head }));
        Ok(())
    })
}

/// Releases a head. NULL is ignored.
///
/// # Safety
/// `head` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crydet_head_free(head: *mut CrydetHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Feature width the head accepts, or 0 for NULL.
///
/// # Safety
/// `head` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn crydet_head_input_dim(head: *const CrydetHead) -> usize {
    head.as_ref().map_or(0, |h| h.head.input_dim())
}

/// Scores `n_rows` row-major feature vectors of width `dim`. Writes one
/// score in (0, 1) per row and, when `magnitudes_out` is not NULL, the
/// refined-feature L2 norm per row.
///
/// # Safety
/// `features` must hold `n_rows * dim` floats; the outputs room for
/// `n_rows` floats each.
#[no_mangle]
pub unsafe extern "C" fn crydet_head_score(
    head: *const CrydetHead,
    features: *const f32,
    n_rows: usize,
    dim: usize,
    scores_out: *mut f32,
    magnitudes_out: *mut f32,
) -> CrydetStatus {
    guard(|| {
        let head = head_ref(head)?;
        non_null(features, "features")?;
        non_null(scores_out, "scores_out")?;
        let len = n_rows.checked_mul(dim).ok_or_else(|| {
            Failure(
                CrydetStatus::InvalidArgument,
                "n_rows * dim overflows".into(),
            )
        })?;
        let data = std::slice::from_raw_parts(features, len).to_vec();
        let out = head.head.forward(&Tensor::new(&[n_rows, dim], data)?)?;
        std::slice::from_raw_parts_mut(scores_out, n_rows).copy_from_slice(&out.scores);
        if !magnitudes_out.is_null() {
            std::slice::from_raw_parts_mut(magnitudes_out, n_rows).copy_from_slice(&out.magnitudes);
        }
        Ok(())
    })
}
