//! WAV decoding/encoding and sample-rate conversion.
//!
//! Everything inside the engine is mono `f64`. Multichannel files are
//! downmixed by arithmetic mean on load; no loudness normalization is applied.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
    pub source_path: Option<String>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteAudio);
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
            source_path: None,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Same rate and provenance, new sample data.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
            source_path: self.source_path.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    Pcm16,
    Float32,
}

/// What happened while writing a file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaveReport {
    pub clipped_samples: usize,
}

pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let mut buf = decode_wav(reader).map_err(|e| match e {
        Error::Decode { reason, .. } => Error::Decode {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })?;
    buf.source_path = Some(path.display().to_string());
    Ok(buf)
}

/// Decodes a WAV stream held in memory (service uploads).
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer> {
    let reader = WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| Error::Decode {
        path: "<memory>".into(),
        reason: e.to_string(),
    })?;
    decode_wav(reader)
}

fn decode_wav<R: std::io::Read>(reader: WavReader<R>) -> Result<AudioBuffer> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedFormat("zero channels".into()));
    }
    let decode_err = |e: hound::Error| Error::Decode {
        path: "<stream>".into(),
        reason: e.to_string(),
    };
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(decode_err)?,
        (SampleFormat::Int, 24) => reader
            .into_samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(decode_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(decode_err)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!("{fmt:?} {bits}-bit")));
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    if mono.is_empty() {
        return Err(Error::EmptyAudio);
    }
    AudioBuffer::new(mono, spec.sample_rate)
}

const PCM16_MAX: f64 = 32767.0 / 32768.0;

/// Writes a mono WAV. Samples outside [-1, 1] are clamped and counted in the
/// returned report (a warning is logged).
pub fn save_audio(buf: &AudioBuffer, path: impl AsRef<Path>, depth: BitDepth) -> Result<SaveReport> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let report = write_wav(buf, std::io::BufWriter::new(file), depth).map_err(|e| match e {
        Error::Decode { reason, .. } => Error::io(path, std::io::Error::other(reason)),
        other => other,
    })?;
    if report.clipped_samples > 0 {
        log::warn!(
            "{}: clamped {} samples outside [-1, 1]",
            path.display(),
            report.clipped_samples
        );
    }
    Ok(report)
}

/// Encodes a WAV into memory. Deterministic for identical input.
pub fn encode_wav_bytes(buf: &AudioBuffer, depth: BitDepth) -> Result<(Vec<u8>, SaveReport)> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    let report = write_wav(buf, &mut cursor, depth)?;
    Ok((cursor.into_inner(), report))
}

fn write_wav<W: std::io::Write + std::io::Seek>(
    buf: &AudioBuffer,
    sink: W,
    depth: BitDepth,
) -> Result<SaveReport> {
    let spec = match depth {
        BitDepth::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: buf.sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        BitDepth::Float32 => WavSpec {
            channels: 1,
            sample_rate: buf.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let to_err = |e: hound::Error| Error::Decode {
        path: "<stream>".into(),
        reason: e.to_string(),
    };
    let mut writer = WavWriter::new(sink, spec).map_err(to_err)?;
    let mut report = SaveReport::default();
    for &s in &buf.samples {
        match depth {
            BitDepth::Pcm16 => {
                let clamped = s.clamp(-1.0, PCM16_MAX);
                if clamped != s {
                    report.clipped_samples += 1;
                }
                writer
                    .write_sample((clamped * 32768.0).round() as i16)
                    .map_err(to_err)?;
            }
            BitDepth::Float32 => {
                let clamped = s.clamp(-1.0, 1.0);
                if clamped != s {
                    report.clipped_samples += 1;
                }
                writer.write_sample(clamped as f32).map_err(to_err)?;
            }
        }
    }
    writer.finalize().map_err(to_err)?;
    Ok(report)
}

// Windowed-sinc resampler. Kaiser beta 9 gives roughly 90 dB of stopband
// rejection; the passband edge sits at 0.45 of the lower of the two rates.
const KAISER_BETA: f64 = 9.0;
const HALF_TAPS: usize = 64;
const CUTOFF: f64 = 0.45;
const MAX_CACHED_PHASES: u64 = 4096;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

struct SincKernel {
    /// Normalized cutoff in cycles per input sample.
    fc: f64,
    /// Half-width of the kernel in input samples.
    half_width: f64,
    i0_beta: f64,
}

impl SincKernel {
    fn tap(&self, t: f64) -> f64 {
        if t.abs() >= self.half_width {
            return 0.0;
        }
        let x = 2.0 * self.fc * t;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        let r = t / self.half_width;
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / self.i0_beta;
        2.0 * self.fc * sinc * window
    }
}

/// Band-limited sample-rate conversion. The output holds
/// `round(len * target / source)` samples; identical rates return the input.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidSampleRate(target_rate));
    }
    let source_rate = buf.sample_rate;
    if source_rate == target_rate {
        return Ok(buf.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    // Output sample n sits at input position n * step_num / step_den.
    let step_num = (source_rate as u64) / g;
    let step_den = (target_rate as u64) / g;
    let out_len = ((buf.len() as f64) * target_rate as f64 / source_rate as f64).round() as usize;

    let ratio = target_rate as f64 / source_rate as f64;
    let fc = CUTOFF * ratio.min(1.0);
    let kernel = SincKernel {
        fc,
        half_width: HALF_TAPS as f64 / ratio.min(1.0),
        i0_beta: bessel_i0(KAISER_BETA),
    };
    let reach = kernel.half_width.ceil() as i64;
    let x = &buf.samples;
    let n_in = x.len() as i64;

    let mut phase_cache: HashMap<u64, Vec<f64>> = HashMap::new();
    let cache_phases = step_den <= MAX_CACHED_PHASES;

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos_num = n * step_num;
        let base = (pos_num / step_den) as i64;
        let phase = pos_num % step_den;
        let frac = phase as f64 / step_den as f64;
        let compute = || {
            (-reach..=reach + 1)
                .map(|k| kernel.tap(frac - k as f64))
                .collect::<Vec<f64>>()
        };
        let owned;
        let taps: &[f64] = if cache_phases {
            phase_cache.entry(phase).or_insert_with(compute)
        } else {
            owned = compute();
            &owned
        };
        let mut acc = 0.0;
        for (i, &w) in taps.iter().enumerate() {
            let idx = base - reach + i as i64;
            if (0..n_in).contains(&idx) {
                acc += w * x[idx as usize];
            }
        }
        out.push(acc);
    }
    Ok(buf.with_samples(out).retimed(target_rate))
}

impl AudioBuffer {
    fn retimed(mut self, rate: u32) -> Self {
        self.sample_rate = rate;
        self
    }
}
