//! Deterministic, weight-free stand-in for a pretrained text/audio model.
//!
//! Audio side: 32 log-spaced band energies (per-Hz density) accumulated over
//! non-overlapping 50 ms Hann frames, logged and mean-subtracted. Text side:
//! a small lexicon of spectral-shape prototypes in the same 32-band space;
//! words outside the lexicon map to a hash-seeded random direction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::{AudioPullback, BackendDescriptor, EmbeddingBackend};
use crate::error::{Error, Result};
use crate::spectral::{bin_weight, irfft, rfft_padded};

pub const SURROGATE_DIM: usize = 32;
pub const SURROGATE_SAMPLE_RATE: u32 = 44_100;
const FRAME_SECONDS: f64 = 0.05;
const LOW_HZ: f64 = 250.0;
const HIGH_HZ: f64 = 16_000.0;
const MAX_SECONDS: f64 = 30.0;
const ENERGY_FLOOR: f64 = 1e-12;
/// Bands covered by the "tinny" prototype.
const TINNY_BANDS: (usize, usize) = (20, 28);

struct Band {
    first_bin: usize,
    weights: Vec<f64>,
    total: f64,
}

pub struct SurrogateBackend {
    descriptor: BackendDescriptor,
    frame_len: usize,
    window: Vec<f64>,
    bands: Vec<Band>,
}

impl Default for SurrogateBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl SurrogateBackend {
    pub fn new() -> Self {
        let sr = SURROGATE_SAMPLE_RATE as f64;
        let frame_len = (FRAME_SECONDS * sr).round() as usize;
        let window: Vec<f64> = (0..frame_len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame_len as f64).cos())
            .collect();

        // Triangular filters on a log-frequency axis.
        let ratio = (HIGH_HZ / LOW_HZ).powf(1.0 / (SURROGATE_DIM - 1) as f64);
        let center = |b: isize| LOW_HZ * ratio.powi(b as i32);
        let bin_hz = sr / frame_len as f64;
        let n_bins = frame_len / 2 + 1;
        let bands = (0..SURROGATE_DIM as isize)
            .map(|b| {
                let (lo, mid, hi) = (center(b - 1).ln(), center(b).ln(), center(b + 1).ln());
                let mut first = None;
                let mut weights = Vec::new();
                for k in 1..n_bins {
                    let lf = (k as f64 * bin_hz).ln();
                    let w = if lf > lo && lf <= mid {
                        (lf - lo) / (mid - lo)
                    } else if lf > mid && lf < hi {
                        (hi - lf) / (hi - mid)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                let first_bin = first.expect("every band spans at least one bin");
                let total = weights.iter().sum();
                Band {
                    first_bin,
                    weights,
                    total,
                }
            })
            .collect();

        SurrogateBackend {
            descriptor: BackendDescriptor {
                name: "surrogate".into(),
                dimension: SURROGATE_DIM,
                input_sample_rate: SURROGATE_SAMPLE_RATE,
                max_input_seconds: MAX_SECONDS,
                differentiable_audio: true,
            },
            frame_len,
            window,
            bands,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    /// Per-frame windowed spectra; the signal is zero-padded to whole frames.
    fn spectra(&self, samples: &[f64]) -> Vec<Vec<Complex64>> {
        samples
            .chunks(self.frame_len)
            .map(|chunk| {
                let framed: Vec<f64> = chunk.iter().zip(&self.window).map(|(s, w)| s * w).collect();
                rfft_padded(&framed, self.frame_len)
            })
            .collect()
    }

    /// Summed band power over all frames (absolute, before density scaling).
    fn band_energies(&self, spectra: &[Vec<Complex64>]) -> Vec<f64> {
        let mut power = vec![0.0; self.frame_len / 2 + 1];
        for spec in spectra {
            for (p, x) in power.iter_mut().zip(spec) {
                *p += x.norm_sqr();
            }
        }
        self.bands
            .iter()
            .map(|band| {
                band.weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * power[band.first_bin + i])
                    .sum()
            })
            .collect()
    }

    fn features_from_energies(&self, energies: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = energies
            .iter()
            .zip(&self.bands)
            .map(|(e, band)| (e / band.total + ENERGY_FLOOR).ln())
            .collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        logs.iter().map(|l| l - mean).collect()
    }
}

struct SurrogatePullback<'a> {
    backend: &'a SurrogateBackend,
    spectra: Vec<Vec<Complex64>>,
    energies: Vec<f64>,
    len: usize,
}

impl AudioPullback for SurrogatePullback<'_> {
    fn pull(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        let be = self.backend;
        if cotangent.len() != SURROGATE_DIM {
            return Err(Error::DimensionMismatch(cotangent.len(), SURROGATE_DIM));
        }
        // Mean subtraction, then the log.
        let mean = cotangent.iter().sum::<f64>() / SURROGATE_DIM as f64;
        let mut bin_cot = vec![0.0; be.frame_len / 2 + 1];
        for ((c, e), band) in cotangent.iter().zip(&self.energies).zip(&be.bands) {
            let d_energy = (c - mean) / (e + ENERGY_FLOOR * band.total);
            for (i, w) in band.weights.iter().enumerate() {
                bin_cot[band.first_bin + i] += d_energy * w;
            }
        }
        // d|X_k|^2 / dx_n = 2 h_n Re(X_k e^{+i 2 pi k n / F}).
        let f = be.frame_len;
        let mut grad = Vec::with_capacity(self.len);
        for (frame, spec) in self.spectra.iter().enumerate() {
            let weighted: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(k, x)| x * (bin_cot[k] / bin_weight(k, f)))
                .collect();
            let z = irfft(&weighted, f);
            let take = (self.len - frame * f).min(f);
            grad.extend((0..take).map(|n| 2.0 * be.window[n] * f as f64 * z[n]));
        }
        Ok(grad)
    }
}

impl EmbeddingBackend for SurrogateBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn text_features(&self, text: &str) -> Result<Vec<f64>> {
        Ok(text_vector(text))
    }

    fn audio_features(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        let energies = self.band_energies(&self.spectra(samples));
        Ok(self.features_from_energies(&energies))
    }

    fn audio_features_with_pullback<'a>(
        &'a self,
        samples: &[f64],
    ) -> Result<(Vec<f64>, Box<dyn AudioPullback + 'a>)> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        let spectra = self.spectra(samples);
        let energies = self.band_energies(&spectra);
        let features = self.features_from_energies(&energies);
        Ok((
            features,
            Box::new(SurrogatePullback {
                backend: self,
                spectra,
                energies,
                len: samples.len(),
            }),
        ))
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Rising (positive) or falling (negative) tilt over band index.
    Tilt(f64),
    /// Raised-cosine bump over the "tinny" band range.
    Tinny,
}

const LEXICON: &[(&str, Shape)] = &[
    ("bright", Shape::Tilt(1.0)),
    ("crisp", Shape::Tilt(1.0)),
    ("sharp", Shape::Tilt(1.0)),
    ("shrill", Shape::Tilt(1.0)),
    ("brilliant", Shape::Tilt(1.0)),
    ("airy", Shape::Tilt(1.0)),
    ("light", Shape::Tilt(1.0)),
    ("thin", Shape::Tilt(1.0)),
    ("harsh", Shape::Tilt(1.0)),
    ("piercing", Shape::Tilt(1.0)),
    ("breezy", Shape::Tilt(1.0)),
    ("blaring", Shape::Tilt(1.0)),
    ("high", Shape::Tilt(1.0)),
    ("muffled", Shape::Tilt(-1.0)),
    ("deep", Shape::Tilt(-1.0)),
    ("dark", Shape::Tilt(-1.0)),
    ("warm", Shape::Tilt(-1.0)),
    ("bassy", Shape::Tilt(-1.0)),
    ("boomy", Shape::Tilt(-1.0)),
    ("booming", Shape::Tilt(-1.0)),
    ("mellow", Shape::Tilt(-1.0)),
    ("heavy", Shape::Tilt(-1.0)),
    ("muddy", Shape::Tilt(-1.0)),
    ("dull", Shape::Tilt(-1.0)),
    ("thick", Shape::Tilt(-1.0)),
    ("tinny", Shape::Tinny),
    ("telephone", Shape::Tinny),
    ("radio", Shape::Tinny),
    ("nasal", Shape::Tinny),
];

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "as", "at", "be", "but", "by", "for", "from", "in", "into", "is", "it",
    "like", "of", "on", "or", "so", "sound", "sounds", "that", "the", "this", "through", "to",
    "under", "very", "with", "yet", "more", "make", "coming", "delivered",
];

const NEGATIONS: &[&str] = &["not", "no", "without", "non"];

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn shape_vector(shape: Shape) -> Vec<f64> {
    match shape {
        Shape::Tilt(sign) => unit((0..SURROGATE_DIM).map(|b| sign * b as f64).collect()),
        Shape::Tinny => {
            let (lo, hi) = TINNY_BANDS;
            let width = (hi - lo) as f64;
            unit(
                (0..SURROGATE_DIM)
                    .map(|b| {
                        if (lo..=hi).contains(&b) {
                            let x = (b - lo) as f64 / width;
                            0.5 - 0.5 * (2.0 * std::f64::consts::PI * x).cos()
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )
        }
    }
}

fn hashed_vector(key: &str) -> Vec<f64> {
    let digest = Sha256::digest(key.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    unit((0..SURROGATE_DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
}

/// Sum of word prototypes; words after a negation contribute with flipped
/// sign. Falls back to a hash of the whole text when no content word remains.
fn text_vector(text: &str) -> Vec<f64> {
    let lowered = text.to_lowercase();
    let mut acc = vec![0.0; SURROGATE_DIM];
    let mut sign = 1.0;
    let mut any = false;
    for word in lowered.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        if NEGATIONS.contains(&word) {
            sign = -sign;
            continue;
        }
        if STOPWORDS.contains(&word) {
            continue;
        }
        let v = match LEXICON.iter().find(|(w, _)| *w == word) {
            Some(&(_, shape)) => shape_vector(shape),
            None => hashed_vector(word),
        };
        acc.iter_mut().zip(&v).for_each(|(a, x)| *a += sign * x);
        any = true;
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !any || norm < 1e-9 {
        return hashed_vector(&lowered);
    }
    acc
}
