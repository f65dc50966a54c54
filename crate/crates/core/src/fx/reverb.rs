//! Noise-shaped reverb.
//!
//! The impulse response is a fixed white-noise sequence split into eleven
//! octave bands. Each band gets its own gain and exponential T60 decay, the
//! bands are summed and the result is scaled to unit energy. Output is a
//! wet/dry blend of the input and its convolution with that response.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::params::{ParamSpec, Scale};
use crate::spectral::{irfft, linear_fft_len, rfft_padded};

pub const REVERB_BANDS: usize = 11;
pub const REVERB_PARAM_COUNT: usize = 2 * REVERB_BANDS + 1;
pub const IR_SECONDS: f64 = 5.0;
pub const T60_RANGE: (f64, f64) = (0.1, 4.0);
/// ln(10^3): amplitude decays by 60 dB after one T60.
pub const DECAY_60DB: f64 = 6.907_755_278_982_137;

/// Highest band edge; the ten edges sit one octave apart below it.
const TOP_EDGE_HZ: f64 = 18_000.0;
/// Half-width of each raised-cosine crossover, in octaves.
const CROSSOVER_HALF_OCTAVES: f64 = 0.25;
/// Envelope recurrence is re-anchored with an exact `exp` this often.
const ENVELOPE_ANCHOR: usize = 1024;
const ENERGY_FLOOR: f64 = 1e-30;

pub fn band_edges() -> [f64; REVERB_BANDS - 1] {
    std::array::from_fn(|i| TOP_EDGE_HZ / 2f64.powi((REVERB_BANDS - 2 - i) as i32))
}

pub fn reverb_specs() -> Vec<ParamSpec> {
    let gains = (0..REVERB_BANDS)
        .map(|b| ParamSpec::new(format!("band{b}_gain"), "ratio", 0.0, 1.0, Scale::Linear));
    let decays = (0..REVERB_BANDS).map(|b| {
        ParamSpec::new(
            format!("band{b}_decay"),
            "seconds",
            T60_RANGE.0,
            T60_RANGE.1,
            Scale::Logarithmic,
        )
    });
    gains
        .chain(decays)
        .chain(std::iter::once(ParamSpec::new("mix", "ratio", 0.0, 1.0, Scale::Linear)))
        .collect()
}

/// Weight of "above edge" for a raised-cosine crossover in log frequency.
fn crossover(f: f64, edge: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let x = (f / edge).log2();
    let w = CROSSOVER_HALF_OCTAVES;
    if x <= -w {
        0.0
    } else if x >= w {
        1.0
    } else {
        0.5 - 0.5 * (PI * (x + w) / (2.0 * w)).cos()
    }
}

/// Magnitude of filter-bank band `band` at frequency `f`. The eleven
/// responses sum to exactly one at every frequency.
pub fn band_response(band: usize, f: f64) -> f64 {
    let edges = band_edges();
    let above = |i: usize| crossover(f, edges[i]);
    match band {
        0 => 1.0 - above(0),
        b if b == REVERB_BANDS - 1 => above(b - 1),
        b => above(b - 1) - above(b),
    }
}

/// Band-split noise for one (sample rate, seed) pair.
#[derive(Debug)]
pub struct ReverbBands {
    pub sample_rate: u32,
    pub seed: u64,
    bands: Vec<Vec<f64>>,
}

impl ReverbBands {
    pub fn new(sample_rate: u32, seed: u64) -> Self {
        let len = (IR_SECONDS * sample_rate as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let spec = rfft_padded(&noise, len);
        let bands = (0..REVERB_BANDS)
            .map(|b| {
                let shaped: Vec<Complex64> = spec
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let f = k as f64 * sample_rate as f64 / len as f64;
                        c * band_response(b, f)
                    })
                    .collect();
                irfft(&shaped, len)
            })
            .collect();
        ReverbBands {
            sample_rate,
            seed,
            bands,
        }
    }

    pub fn ir_len(&self) -> usize {
        self.bands[0].len()
    }

    pub fn band(&self, b: usize) -> &[f64] {
        &self.bands[b]
    }
}

/// exp(-DECAY_60DB * t / t60) for t in samples.
fn envelope(t60: f64, sample_rate: f64, len: usize) -> impl Iterator<Item = f64> {
    let k = DECAY_60DB / (sample_rate * t60);
    let rho = (-k).exp();
    let mut cur = 1.0;
    (0..len).map(move |t| {
        if t % ENVELOPE_ANCHOR == 0 {
            cur = (-k * t as f64).exp();
        } else {
            cur *= rho;
        }
        cur
    })
}

struct Settings<'a> {
    gains: &'a [f64],
    t60: &'a [f64],
    mix: f64,
}

fn split(values: &[f64]) -> Settings<'_> {
    debug_assert_eq!(values.len(), REVERB_PARAM_COUNT);
    Settings {
        gains: &values[..REVERB_BANDS],
        t60: &values[REVERB_BANDS..2 * REVERB_BANDS],
        mix: values[2 * REVERB_BANDS],
    }
}

/// Unit-energy impulse response and the pre-normalization norm.
pub(crate) fn synthesize_ir(bands: &ReverbBands, values: &[f64]) -> (Vec<f64>, f64) {
    let s = split(values);
    let len = bands.ir_len();
    let sr = bands.sample_rate as f64;
    let mut ir = vec![0.0; len];
    for b in 0..REVERB_BANDS {
        let g = s.gains[b];
        if g == 0.0 {
            continue;
        }
        for ((acc, &n), env) in ir.iter_mut().zip(bands.band(b)).zip(envelope(s.t60[b], sr, len)) {
            *acc += g * n * env;
        }
    }
    let norm = (ir.iter().map(|v| v * v).sum::<f64>() + ENERGY_FLOOR).sqrt();
    ir.iter_mut().for_each(|v| *v /= norm);
    (ir, norm)
}

pub(crate) struct ReverbTape {
    n: usize,
    fft_len: usize,
    mix: f64,
    values: Vec<f64>,
    x: Vec<f64>,
    wet: Vec<f64>,
    ir: Vec<f64>,
    norm: f64,
    x_spec: Vec<Complex64>,
    ir_spec: Vec<Complex64>,
}

impl ReverbTape {
    pub(crate) fn forward(x: &[f64], values: &[f64], bands: &ReverbBands) -> (Vec<f64>, ReverbTape) {
        let n = x.len();
        let mix = split(values).mix;
        let (ir, norm) = synthesize_ir(bands, values);
        // Output is truncated to the input length, so only the first n
        // response samples can reach it.
        let used = ir.len().min(n);
        let fft_len = linear_fft_len(n);
        let x_spec = rfft_padded(x, fft_len);
        let ir_spec = rfft_padded(&ir[..used], fft_len);
        let prod: Vec<Complex64> = x_spec.iter().zip(&ir_spec).map(|(a, b)| a * b).collect();
        let mut wet = irfft(&prod, fft_len);
        wet.truncate(n);
        let y = x
            .iter()
            .zip(&wet)
            .map(|(&d, &w)| (1.0 - mix) * d + mix * w)
            .collect();
        (
            y,
            ReverbTape {
                n,
                fft_len,
                mix,
                values: values.to_vec(),
                x: x.to_vec(),
                wet,
                ir,
                norm,
                x_spec,
                ir_spec,
            },
        )
    }

    /// Returns (d loss / d input, d loss / d the 23 mapped values).
    pub(crate) fn backward(&self, grad_out: &[f64], bands: &ReverbBands) -> (Vec<f64>, Vec<f64>) {
        let m = self.fft_len;
        let mut dparams = vec![0.0; REVERB_PARAM_COUNT];
        dparams[2 * REVERB_BANDS] = grad_out
            .iter()
            .zip(self.wet.iter().zip(&self.x))
            .map(|(g, (w, d))| g * (w - d))
            .sum();

        let gw: Vec<f64> = grad_out.iter().map(|g| g * self.mix).collect();
        let gw_spec = rfft_padded(&gw, m);

        let through_ir: Vec<Complex64> = gw_spec.iter().zip(&self.ir_spec).map(|(g, h)| g * h.conj()).collect();
        let corr_ir = irfft(&through_ir, m);
        let dx: Vec<f64> = grad_out
            .iter()
            .zip(&corr_ir)
            .map(|(g, c)| (1.0 - self.mix) * g + c)
            .collect();

        let used = self.ir.len().min(self.n);
        let through_x: Vec<Complex64> = gw_spec.iter().zip(&self.x_spec).map(|(g, x)| g * x.conj()).collect();
        let mut d_ir = irfft(&through_x, m);
        d_ir.truncate(used);

        // Back through the energy normalization: IR = r / |r|.
        let dot: f64 = d_ir.iter().zip(&self.ir).map(|(a, b)| a * b).sum();
        let len = self.ir.len();
        let inv_norm = 1.0 / self.norm;
        let d_raw: Vec<f64> = (0..len)
            .map(|t| {
                let direct = if t < used { d_ir[t] } else { 0.0 };
                (direct - self.ir[t] * dot) * inv_norm
            })
            .collect();

        let s = split(&self.values);
        let sr = bands.sample_rate as f64;
        for b in 0..REVERB_BANDS {
            let t60 = s.t60[b];
            let rate = DECAY_60DB / (sr * t60 * t60);
            let mut d_gain = 0.0;
            let mut d_t60 = 0.0;
            for (t, ((&dr, &n), env)) in d_raw
                .iter()
                .zip(bands.band(b))
                .zip(envelope(t60, sr, len))
                .enumerate()
            {
                let base = dr * n * env;
                d_gain += base;
                d_t60 += base * rate * t as f64;
            }
            dparams[b] = d_gain;
            dparams[REVERB_BANDS + b] = d_t60 * s.gains[b];
        }
        (dx, dparams)
    }
}
