//! Joint text/audio embedding backends.
//!
//! Backends produce raw feature vectors; [`Embedder`] is the boundary that
//! validates inputs, crops long audio and normalizes every vector to unit
//! length, so the losses always compare unit vectors. The audio path also
//! returns a pullback that maps a cotangent on the normalized embedding back
//! to the input samples.

mod pretrained;
mod surrogate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use pretrained::{PretrainedBackend, CHECKPOINT_ENV, PYTHON_ENV};
pub use surrogate::{SurrogateBackend, SURROGATE_DIM, SURROGATE_SAMPLE_RATE};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
}

/// Unit-norm vector in the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    modality: Modality,
}

impl Embedding {
    /// Normalizes `values`; rejects non-finite or all-zero input.
    pub fn normalized(values: Vec<f64>, modality: Modality) -> Result<Self> {
        let (values, _) = normalize(values)?;
        Ok(Embedding { values, modality })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(dot(&self.values, &other.values))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(mut values: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Backend("embedding contains non-finite values".into()));
    }
    let norm = dot(&values, &values).sqrt();
    if norm == 0.0 {
        return Err(Error::Backend("embedding has zero norm".into()));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok((values, norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub dimension: usize,
    pub input_sample_rate: u32,
    pub max_input_seconds: f64,
    pub differentiable_audio: bool,
}

/// Maps a cotangent on the backend's raw audio features to a gradient on
/// the samples that produced them.
pub trait AudioPullback: Send {
    fn pull(&self, cotangent: &[f64]) -> Result<Vec<f64>>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn text_features(&self, text: &str) -> Result<Vec<f64>>;

    fn audio_features(&self, samples: &[f64]) -> Result<Vec<f64>>;

    /// Features plus their pullback. Backends without audio gradients
    /// return [`Error::NonDifferentiableBackend`].
    fn audio_features_with_pullback<'a>(
        &'a self,
        samples: &[f64],
    ) -> Result<(Vec<f64>, Box<dyn AudioPullback + 'a>)>;
}

/// Normalizing front end shared by the optimizer, CLI and service.
#[derive(Clone)]
pub struct Embedder {
    backend: Arc<dyn EmbeddingBackend>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("backend", self.descriptor())
            .finish()
    }
}

/// Gradient route from a normalized audio embedding to input samples.
pub struct AudioGrad<'a> {
    inner: Box<dyn AudioPullback + 'a>,
    unit: Vec<f64>,
    norm: f64,
    crop_start: usize,
    input_len: usize,
}

impl AudioGrad<'_> {
    /// d <cotangent, embedding> / d samples, full input length (zero outside
    /// any crop window).
    pub fn pull(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.unit.len() {
            return Err(Error::DimensionMismatch(cotangent.len(), self.unit.len()));
        }
        let along = dot(cotangent, &self.unit);
        let raw_cot: Vec<f64> = cotangent
            .iter()
            .zip(&self.unit)
            .map(|(g, e)| (g - e * along) / self.norm)
            .collect();
        let cropped = self.inner.pull(&raw_cot)?;
        if cropped.len() == self.input_len {
            return Ok(cropped);
        }
        let mut full = vec![0.0; self.input_len];
        full[self.crop_start..self.crop_start + cropped.len()].copy_from_slice(&cropped);
        Ok(full)
    }
}

impl Embedder {
    pub fn new(backend: Arc<dyn EmbeddingBackend>) -> Self {
        Embedder { backend }
    }

    pub fn surrogate() -> Self {
        Embedder::new(Arc::new(SurrogateBackend::new()))
    }

    /// `surrogate`, or `pretrained` (checkpoint located through the environment).
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "surrogate" => Ok(Embedder::surrogate()),
            "pretrained" => Ok(Embedder::new(Arc::new(PretrainedBackend::from_env()?))),
            other => Err(Error::Config(format!(
                "unknown backend `{other}` (expected surrogate or pretrained)"
            ))),
        }
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        self.backend.descriptor()
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let raw = self.backend.text_features(text)?;
        self.check_dim(raw.len())?;
        Embedding::normalized(raw, Modality::Text)
    }

    pub fn embed_audio(&self, buf: &AudioBuffer) -> Result<Embedding> {
        let (start, len) = self.crop_window(buf)?;
        let raw = self.backend.audio_features(&buf.samples()[start..start + len])?;
        self.check_dim(raw.len())?;
        Embedding::normalized(raw, Modality::Audio)
    }

    pub fn embed_audio_with_grad(&self, buf: &AudioBuffer) -> Result<(Embedding, AudioGrad<'_>)> {
        if !self.descriptor().differentiable_audio {
            return Err(Error::NonDifferentiableBackend(self.descriptor().name.clone()));
        }
        let (start, len) = self.crop_window(buf)?;
        let (raw, pullback) = self
            .backend
            .audio_features_with_pullback(&buf.samples()[start..start + len])?;
        self.check_dim(raw.len())?;
        let (unit, norm) = normalize(raw)?;
        let grad = AudioGrad {
            inner: pullback,
            unit: unit.clone(),
            norm,
            crop_start: start,
            input_len: buf.len(),
        };
        Ok((
            Embedding {
                values: unit,
                modality: Modality::Audio,
            },
            grad,
        ))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        let expected = self.descriptor().dimension;
        if got != expected {
            return Err(Error::DimensionMismatch(got, expected));
        }
        Ok(())
    }

    /// Centre crop to the backend's maximum duration.
    fn crop_window(&self, buf: &AudioBuffer) -> Result<(usize, usize)> {
        if buf.is_empty() {
            return Err(Error::EmptyAudio);
        }
        let desc = self.descriptor();
        if buf.sample_rate() != desc.input_sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: desc.input_sample_rate,
                got: buf.sample_rate(),
            });
        }
        let max = (desc.max_input_seconds * desc.input_sample_rate as f64).floor() as usize;
        if buf.len() <= max {
            Ok((0, buf.len()))
        } else {
            Ok(((buf.len() - max) / 2, max))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_contract() {
        let e = Embedding::normalized(vec![3.0, 4.0], Modality::Text).unwrap();
        assert_eq!(e.values(), &[0.6, 0.8]);
        assert!(Embedding::normalized(vec![0.0, 0.0], Modality::Text).is_err());
        assert!(Embedding::normalized(vec![f64::NAN], Modality::Text).is_err());
    }

    #[test]
    fn dot_dimension_mismatch() {
        let a = Embedding::normalized(vec![1.0, 0.0], Modality::Text).unwrap();
        let b = Embedding::normalized(vec![1.0, 0.0, 0.0], Modality::Audio).unwrap();
        assert!(matches!(a.dot(&b), Err(Error::DimensionMismatch(2, 3))));
    }

    #[test]
    fn empty_text_and_audio_rejected() {
        let e = Embedder::surrogate();
        assert!(matches!(e.embed_text("  "), Err(Error::EmptyPrompt)));
        let empty = AudioBuffer::new(vec![], SURROGATE_SAMPLE_RATE).unwrap();
        assert!(matches!(e.embed_audio(&empty), Err(Error::EmptyAudio)));
    }

    #[test]
    fn wrong_rate_rejected() {
        let e = Embedder::surrogate();
        let b = AudioBuffer::new(vec![0.1; 1000], 16000).unwrap();
        assert!(matches!(e.embed_audio(&b), Err(Error::SampleRateMismatch { .. })));
    }

    #[test]
    fn unknown_backend_name() {
        assert!(matches!(Embedder::from_name("nope"), Err(Error::Config(_))));
    }
}
