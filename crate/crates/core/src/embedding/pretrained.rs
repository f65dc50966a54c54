//! Adapter for an off-the-shelf joint text/audio checkpoint.
//!
//! The model runs in a Python helper process (bundled script, JSON lines on
//! stdin/stdout). The helper reports its own dimension and input rate, so
//! nothing about the checkpoint is hard-coded here. Audio gradients come back
//! from the helper as vector-Jacobian products.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{AudioPullback, BackendDescriptor, EmbeddingBackend};
use crate::error::{Error, Result};

/// Directory (or hub id) of the checkpoint to load.
pub const CHECKPOINT_ENV: &str = "PROMPTFX_CLAP_CHECKPOINT";
/// Python interpreter used for the helper; defaults to `python3`.
pub const PYTHON_ENV: &str = "PROMPTFX_PYTHON";

const HELPER_SOURCE: &str = include_str!("../../python/embed_helper.py");

struct Pipe {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct PretrainedBackend {
    descriptor: BackendDescriptor,
    pipe: Mutex<Pipe>,
    child: Mutex<Child>,
    _script: tempfile::TempPath,
}

#[derive(Deserialize)]
struct Describe {
    dimension: usize,
    sample_rate: u32,
    max_seconds: f64,
}

impl PretrainedBackend {
    pub fn from_env() -> Result<Self> {
        let checkpoint = std::env::var_os(CHECKPOINT_ENV).ok_or_else(|| {
            Error::BackendUnavailable(format!("set {CHECKPOINT_ENV} to a checkpoint directory"))
        })?;
        let python = std::env::var(PYTHON_ENV).unwrap_or_else(|_| "python3".into());
        Self::spawn(Path::new(&checkpoint), &python)
    }

    pub fn spawn(checkpoint: &Path, python: &str) -> Result<Self> {
        let mut script = tempfile::Builder::new()
            .suffix(".py")
            .tempfile()
            .map_err(|e| Error::io("<helper script>", e))?;
        script
            .write_all(HELPER_SOURCE.as_bytes())
            .map_err(|e| Error::io(script.path(), e))?;
        let script = script.into_temp_path();
        let mut child = Command::new(python)
            .arg(&script as &Path)
            .arg(checkpoint)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BackendUnavailable(format!("cannot start {python}: {e}")))?;
        let pipe = Pipe {
            stdin: child.stdin.take().expect("piped stdin"),
            stdout: BufReader::new(child.stdout.take().expect("piped stdout")),
        };
        let mut backend = PretrainedBackend {
            descriptor: BackendDescriptor {
                name: "pretrained".into(),
                dimension: 0,
                input_sample_rate: 1,
                max_input_seconds: 0.0,
                differentiable_audio: true,
            },
            pipe: Mutex::new(pipe),
            child: Mutex::new(child),
            _script: script,
        };
        let d: Describe = serde_json::from_value(backend.request(json!({"op": "describe"}))?)?;
        backend.descriptor.dimension = d.dimension;
        backend.descriptor.input_sample_rate = d.sample_rate;
        backend.descriptor.max_input_seconds = d.max_seconds;
        log::info!(
            "pretrained backend ready: dim {}, {} Hz, {} s max ({})",
            d.dimension,
            d.sample_rate,
            d.max_seconds,
            PathBuf::from(checkpoint).display()
        );
        Ok(backend)
    }

    fn request(&self, body: Value) -> Result<Value> {
        let mut pipe = self.pipe.lock().expect("helper pipe poisoned");
        let line = serde_json::to_string(&body)?;
        writeln!(pipe.stdin, "{line}")
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| Error::Backend(format!("helper write failed: {e}")))?;
        let mut reply = String::new();
        let n = pipe
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Backend(format!("helper read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Backend("helper exited".into()));
        }
        let value: Value = serde_json::from_str(&reply)?;
        if let Some(err) = value.get("error") {
            return Err(Error::Backend(err.to_string()));
        }
        Ok(value)
    }

    fn vector(value: &Value, key: &str) -> Result<Vec<f64>> {
        serde_json::from_value(value.get(key).cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::Backend(format!("bad `{key}` in helper reply: {e}")))
    }
}

impl Drop for PretrainedBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct HelperPullback<'a> {
    backend: &'a PretrainedBackend,
    samples: Vec<f64>,
}

impl AudioPullback for HelperPullback<'_> {
    fn pull(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        let reply = self.backend.request(json!({
            "op": "audio_vjp",
            "samples": self.samples,
            "cotangent": cotangent,
        }))?;
        let grad = PretrainedBackend::vector(&reply, "grad")?;
        if grad.len() != self.samples.len() {
            return Err(Error::Backend("gradient length mismatch".into()));
        }
        Ok(grad)
    }
}

impl EmbeddingBackend for PretrainedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn text_features(&self, text: &str) -> Result<Vec<f64>> {
        let reply = self.request(json!({"op": "text", "text": text}))?;
        Self::vector(&reply, "embedding")
    }

    fn audio_features(&self, samples: &[f64]) -> Result<Vec<f64>> {
        let reply = self.request(json!({"op": "audio", "samples": samples}))?;
        Self::vector(&reply, "embedding")
    }

    fn audio_features_with_pullback<'a>(
        &'a self,
        samples: &[f64],
    ) -> Result<(Vec<f64>, Box<dyn AudioPullback + 'a>)> {
        let features = self.audio_features(samples)?;
        Ok((
            features,
            Box::new(HelperPullback {
                backend: self,
                samples: samples.to_vec(),
            }),
        ))
    }
}
