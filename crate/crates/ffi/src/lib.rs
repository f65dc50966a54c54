//! C ABI over the promptfx engine.
//!
//! Every fallible call returns a [`PfxStatus`]; on failure the message is
//! kept per thread and can be fetched with [`pfx_last_error_message`].
//! Objects are opaque handles released with their matching `*_free`.
//! Strings returned by this library are released with [`pfx_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use promptfx::audio::{resample, save_audio, BitDepth};
use promptfx::fx::{chains_schema, mapped_from_json};
use promptfx::{
    build_prompts, load_audio, optimize, AudioBuffer, Embedder, Error, FxChain, FxRenderer, OptimizationConfig,
    OptimizationResult,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Decode = 5,
    EmptyPrompt = 6,
    UnknownChain = 7,
    DegeneratePromptPair = 8,
    Schema = 9,
    Backend = 10,
    Panic = 11,
}

impl From<&Error> for PfxStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => PfxStatus::Io,
            Error::Decode { .. } | Error::UnsupportedFormat(_) | Error::EmptyAudio | Error::NonFiniteAudio => {
                PfxStatus::Decode
            }
            Error::EmptyPrompt => PfxStatus::EmptyPrompt,
            Error::UnknownChain(_) => PfxStatus::UnknownChain,
            Error::DegeneratePromptPair => PfxStatus::DegeneratePromptPair,
            Error::Schema { .. } | Error::Json(_) | Error::ParamLength { .. } => PfxStatus::Schema,
            Error::Backend(_) | Error::BackendUnavailable(_) | Error::NonDifferentiableBackend(_) => {
                PfxStatus::Backend
            }
            _ => PfxStatus::InvalidArgument,
        }
    }
}

/// Embedding backend plus effect renderer.
pub struct PfxEngine {
    embedder: Embedder,
    renderer: FxRenderer,
}

/// Mono audio buffer.
pub struct PfxAudio(AudioBuffer);

/// Outcome of one optimization.
pub struct PfxResult(OptimizationResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PfxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PfxStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PfxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfxStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PfxStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PfxStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PfxStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(PfxStatus::NullPointer, format!("{name} is null")))
}

fn out_ptr<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(PfxStatus::NullPointer, "output pointer is null".into()));
    }
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn pfx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the calling thread's last error message, or NULL if none.
#[no_mangle]
pub extern "C" fn pfx_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn pfx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parameter schema of every chain as JSON.
#[no_mangle]
pub extern "C" fn pfx_chains_json() -> *mut c_char {
    into_c_string(chains_schema().to_string())
}

/// `backend` is "surrogate" or "pretrained"; NULL means surrogate.
///
/// # Safety
/// `backend` must be NULL or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pfx_engine_new(
    backend: *const c_char,
    noise_seed: u64,
    out: *mut *mut PfxEngine,
) -> PfxStatus {
    guard(|| {
        out_ptr(out)?;
        let name = opt_str_arg(backend, "backend")?.unwrap_or("surrogate");
        let engine = PfxEngine {
            embedder: Embedder::from_name(name)?,
            renderer: FxRenderer::new(noise_seed),
        };
        *out = Box::into_raw(Box::new(engine));
        Ok(())
    })
}

/// # Safety
/// `engine` must be NULL or a handle from `pfx_engine_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn pfx_engine_free(engine: *mut PfxEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Sample rate the engine optimizes and renders at.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pfx_engine_sample_rate(engine: *const PfxEngine) -> u32 {
    engine
        .as_ref()
        .map_or(0, |e| e.embedder.descriptor().input_sample_rate)
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pfx_audio_load(path: *const c_char, out: *mut *mut PfxAudio) -> PfxStatus {
    guard(|| {
        out_ptr(out)?;
        let audio = load_audio(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PfxAudio(audio)));
        Ok(())
    })
}

/// Copies `len` samples into a new buffer.
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pfx_audio_from_samples(
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut *mut PfxAudio,
) -> PfxStatus {
    guard(|| {
        out_ptr(out)?;
        if samples.is_null() {
            return Err(Failure(PfxStatus::NullPointer, "samples is null".into()));
        }
        let data = std::slice::from_raw_parts(samples, len).to_vec();
        *out = Box::into_raw(Box::new(PfxAudio(AudioBuffer::new(data, sample_rate)?)));
        Ok(())
    })
}

/// # Safety
/// `audio` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pfx_audio_len(audio: *const PfxAudio) -> usize {
    audio.as_ref().map_or(0, |a| a.0.len())
}

/// # Safety
/// `audio` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pfx_audio_sample_rate(audio: *const PfxAudio) -> u32 {
    audio.as_ref().map_or(0, |a| a.0.sample_rate())
}

/// Copies up to `capacity` samples into `dst` and returns the count copied.
///
/// # Safety
/// `audio` must be a live handle; `dst` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn pfx_audio_copy_samples(audio: *const PfxAudio, dst: *mut f64, capacity: usize) -> usize {
    let Some(a) = audio.as_ref() else { return 0 };
    if dst.is_null() {
        return 0;
    }
    let n = a.0.len().min(capacity);
    ptr::copy_nonoverlapping(a.0.samples().as_ptr(), dst, n);
    n
}

/// Writes a mono WAV; `float32` nonzero selects 32-bit float, else PCM16.
///
/// # Safety
/// `audio` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pfx_audio_save(audio: *const PfxAudio, path: *const c_char, float32: i32) -> PfxStatus {
    guard(|| {
        let a = handle(audio, "audio")?;
        let depth = if float32 != 0 { BitDepth::Float32 } else { BitDepth::Pcm16 };
        save_audio(&a.0, str_arg(path, "path")?, depth)?;
        Ok(())
    })
}

/// # Safety
/// `audio` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn pfx_audio_free(audio: *mut PfxAudio) {
    if !audio.is_null() {
        drop(Box::from_raw(audio));
    }
}

/// Searches effect parameters for `prompt`.
///
/// `contrast` may be NULL (defaults to "NOT <prompt>"). `chain` is "eq",
/// "reverb" or "eq-reverb". `config_json` may be NULL for the defaults, or a
/// JSON object overriding any of variant, learning_rate, iterations, runs,
/// max_shift_ms, seed. The input is resampled to the engine rate.
///
/// # Safety
/// Handles must be live; strings valid or NULL where allowed; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pfx_optimize(
    engine: *const PfxEngine,
    audio: *const PfxAudio,
    prompt: *const c_char,
    contrast: *const c_char,
    chain: *const c_char,
    config_json: *const c_char,
    out: *mut *mut PfxResult,
) -> PfxStatus {
    guard(|| {
        out_ptr(out)?;
        let engine = handle(engine, "engine")?;
        let audio = handle(audio, "audio")?;
        let prompts = build_prompts(str_arg(prompt, "prompt")?, opt_str_arg(contrast, "contrast")?)?;
        let chain: FxChain = str_arg(chain, "chain")?.parse()?;
        let config: OptimizationConfig = match opt_str_arg(config_json, "config_json")? {
            Some(text) => serde_json::from_str(text)
                .map_err(|e| Failure(PfxStatus::InvalidArgument, format!("config_json: {e}")))?,
            None => OptimizationConfig::default(),
        };
        let input = resample(&audio.0, engine.embedder.descriptor().input_sample_rate)?;
        let result = optimize(&input, &prompts, &chain, &config, &engine.embedder, &engine.renderer)?;
        *out = Box::into_raw(Box::new(PfxResult(result)));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pfx_result_chosen_run(result: *const PfxResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.chosen_run)
}

/// Shift-free final loss of the chosen run (NaN for a NULL handle).
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pfx_result_final_loss(result: *const PfxResult) -> f64 {
    result
        .as_ref()
        .map_or(f64::NAN, |r| r.0.final_losses()[r.0.chosen_run])
}

/// Mapped parameters in the params.json schema; NULL on failure.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pfx_result_params_json(result: *const PfxResult) -> *mut c_char {
    let mut text = None;
    let status = guard(|| {
        let r = handle(result, "result")?;
        text = Some(r.0.params_json()?.to_string());
        Ok(())
    });
    match (status, text) {
        (PfxStatus::Ok, Some(t)) => into_c_string(t),
        _ => ptr::null_mut(),
    }
}

/// Run metadata (settings, seeds, per-run losses) as JSON.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pfx_result_meta_json(result: *const PfxResult) -> *mut c_char {
    match result.as_ref() {
        Some(r) => into_c_string(r.0.run_meta().to_string()),
        None => {
            set_error("result is null".into());
            ptr::null_mut()
        }
    }
}

/// New audio handle holding the effected input.
///
/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pfx_result_effected_audio(result: *const PfxResult, out: *mut *mut PfxAudio) -> PfxStatus {
    guard(|| {
        out_ptr(out)?;
        let r = handle(result, "result")?;
        *out = Box::into_raw(Box::new(PfxAudio(r.0.effected_audio.clone())));
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle from `pfx_optimize`, freed once.
#[no_mangle]
pub unsafe extern "C" fn pfx_result_free(result: *mut PfxResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Renders `audio` (resampled to the engine rate) through a params.json
/// document.
///
/// # Safety
/// Handles must be live; `params_json` a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pfx_render(
    engine: *const PfxEngine,
    audio: *const PfxAudio,
    params_json: *const c_char,
    out: *mut *mut PfxAudio,
) -> PfxStatus {
    guard(|| {
        out_ptr(out)?;
        let engine = handle(engine, "engine")?;
        let audio = handle(audio, "audio")?;
        let doc: serde_json::Value = serde_json::from_str(str_arg(params_json, "params_json")?).map_err(|e| {
            Error::Schema {
                field: "$".into(),
                reason: format!("invalid JSON: {e}"),
            }
        })?;
        let (chain, mapped) = mapped_from_json(&doc)?;
        let input = resample(&audio.0, engine.embedder.descriptor().input_sample_rate)?;
        let rendered = engine.renderer.render_mapped(&input, &mapped, &chain)?;
        *out = Box::into_raw(Box::new(PfxAudio(rendered)));
        Ok(())
    })
}
