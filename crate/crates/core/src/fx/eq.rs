//! Six-band parametric EQ: low shelf, four peaking sections, high shelf.
//!
//! The cascade is applied by sampling its frequency response on the FFT grid
//! and multiplying, so the output is a smooth function of every band setting.

use std::f64::consts::{LN_10, PI};

use rustfft::num_complex::Complex64;

use super::params::{MappedValue, ParamSpec, Scale};
use crate::audio::AudioBuffer;
use crate::dual::Dual3;
use crate::error::{Error, Result};
use crate::spectral::{bin_weight, irfft, linear_fft_len, rfft_padded};

pub const EQ_PARAM_COUNT: usize = 18;
const BANDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BandKind {
    LowShelf,
    Peak,
    HighShelf,
}

const LAYOUT: [(&str, BandKind, f64, f64); BANDS] = [
    ("low_shelf", BandKind::LowShelf, 20.0, 450.0),
    ("peak1", BandKind::Peak, 200.0, 2000.0),
    ("peak2", BandKind::Peak, 600.0, 4000.0),
    ("peak3", BandKind::Peak, 1500.0, 8000.0),
    ("peak4", BandKind::Peak, 4000.0, 12000.0),
    ("high_shelf", BandKind::HighShelf, 6000.0, 18000.0),
];

pub const GAIN_RANGE_DB: (f64, f64) = (-18.0, 18.0);
pub const Q_RANGE: (f64, f64) = (0.3, 6.0);

/// Parameter layout per band: gain (dB), centre/corner frequency (Hz), Q.
pub fn eq_specs() -> Vec<ParamSpec> {
    LAYOUT
        .iter()
        .flat_map(|&(band, _, fmin, fmax)| {
            [
                ParamSpec::new(
                    format!("{band}_gain"),
                    "dB",
                    GAIN_RANGE_DB.0,
                    GAIN_RANGE_DB.1,
                    Scale::Linear,
                ),
                ParamSpec::new(format!("{band}_freq"), "Hz", fmin, fmax, Scale::Logarithmic),
                ParamSpec::new(format!("{band}_q"), "ratio", Q_RANGE.0, Q_RANGE.1, Scale::Logarithmic),
            ]
        })
        .collect()
}

/// Biquad coefficients `[b0, b1, b2, a0, a1, a2]` with derivatives
/// w.r.t. (gain dB, frequency Hz, Q).
#[derive(Debug, Clone, Copy)]
struct Section {
    c: [Dual3; 6],
}

impl Section {
    fn design(kind: BandKind, gain_db: f64, freq: f64, q: f64, sample_rate: f64) -> Self {
        // Corner frequencies above the usable band are pinned just under Nyquist.
        let limit = 0.49 * sample_rate;
        let f = if freq < limit {
            Dual3::var(freq, 1)
        } else {
            Dual3::constant(limit)
        };
        let g = Dual3::var(gain_db, 0);
        let q = Dual3::var(q, 2);

        let a = (g * (LN_10 / 40.0)).exp();
        let w0 = f * (2.0 * PI / sample_rate);
        let (cw, sw) = (w0.cos(), w0.sin());
        let alpha = sw / (q * 2.0);
        let c = match kind {
            BandKind::Peak => [
                1.0 + alpha * a,
                cw * -2.0,
                1.0 - alpha * a,
                1.0 + alpha / a,
                cw * -2.0,
                1.0 - alpha / a,
            ],
            BandKind::LowShelf => {
                let ap = a + 1.0;
                let am = a - 1.0;
                let k = a.sqrt() * alpha * 2.0;
                [
                    a * (ap - am * cw + k),
                    a * (am - ap * cw) * 2.0,
                    a * (ap - am * cw - k),
                    ap + am * cw + k,
                    (am + ap * cw) * -2.0,
                    ap + am * cw - k,
                ]
            }
            BandKind::HighShelf => {
                let ap = a + 1.0;
                let am = a - 1.0;
                let k = a.sqrt() * alpha * 2.0;
                [
                    a * (ap + am * cw + k),
                    a * (am + ap * cw) * -2.0,
                    a * (ap + am * cw - k),
                    ap - am * cw + k,
                    (am - ap * cw) * 2.0,
                    ap - am * cw - k,
                ]
            }
        };
        Section { c }
    }

    /// Response and its three partials at `z1 = e^{-iw}`, `z2 = e^{-2iw}`.
    #[inline]
    fn eval(&self, z1: Complex64, z2: Complex64) -> (Complex64, [Complex64; 3]) {
        let c = &self.c;
        let num = z1 * c[1].v + z2 * c[2].v + c[0].v;
        let den = z1 * c[4].v + z2 * c[5].v + c[3].v;
        let inv_den = den.inv();
        let h = num * inv_den;
        let mut dh = [Complex64::new(0.0, 0.0); 3];
        for (s, out) in dh.iter_mut().enumerate() {
            let dnum = z1 * c[1].d[s] + z2 * c[2].d[s] + c[0].d[s];
            let dden = z1 * c[4].d[s] + z2 * c[5].d[s] + c[3].d[s];
            *out = (dnum - h * dden) * inv_den;
        }
        (h, dh)
    }

    #[inline]
    fn eval_value(&self, z1: Complex64, z2: Complex64) -> Complex64 {
        let c = &self.c;
        (z1 * c[1].v + z2 * c[2].v + c[0].v) / (z1 * c[4].v + z2 * c[5].v + c[3].v)
    }
}

fn sections(values: &[f64], sample_rate: f64) -> [Section; BANDS] {
    debug_assert_eq!(values.len(), EQ_PARAM_COUNT);
    std::array::from_fn(|b| {
        let v = &values[3 * b..3 * b + 3];
        Section::design(LAYOUT[b].1, v[0], v[1], v[2], sample_rate)
    })
}

fn unit_delays(omega: f64) -> (Complex64, Complex64) {
    (
        Complex64::from_polar(1.0, -omega),
        Complex64::from_polar(1.0, -2.0 * omega),
    )
}

fn values_of(mapped: &[MappedValue]) -> Result<Vec<f64>> {
    if mapped.len() != EQ_PARAM_COUNT {
        return Err(Error::ParamLength {
            expected: EQ_PARAM_COUNT,
            got: mapped.len(),
        });
    }
    Ok(mapped.iter().map(|m| m.value).collect())
}

/// Complex response of the cascade on an arbitrary frequency grid.
pub fn eq_response(mapped: &[MappedValue], freqs: &[f64], sample_rate: u32) -> Result<Vec<Complex64>> {
    let values = values_of(mapped)?;
    let sr = sample_rate as f64;
    let nyquist = sr / 2.0;
    let secs = sections(&values, sr);
    freqs
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::FrequencyOutOfRange { freq: f, nyquist });
            }
            let (z1, z2) = unit_delays(2.0 * PI * f / sr);
            Ok(secs.iter().map(|s| s.eval_value(z1, z2)).product())
        })
        .collect()
}

/// Magnitude response in dB on a frequency grid.
pub fn eq_response_db(mapped: &[MappedValue], freqs: &[f64], sample_rate: u32) -> Result<Vec<f64>> {
    Ok(eq_response(mapped, freqs, sample_rate)?
        .iter()
        .map(|h| 20.0 * h.norm().log10())
        .collect())
}

pub fn render_eq(audio: &AudioBuffer, mapped: &[MappedValue]) -> Result<AudioBuffer> {
    let values = values_of(mapped)?;
    let (y, _) = EqTape::forward(audio.samples(), &values, audio.sample_rate() as f64);
    Ok(audio.with_samples(y))
}

/// Forward pass state retained for the adjoint.
pub(crate) struct EqTape {
    fft_len: usize,
    n: usize,
    x_spec: Vec<Complex64>,
    h: Vec<Complex64>,
    sections: [Section; BANDS],
}

impl EqTape {
    pub(crate) fn forward(x: &[f64], values: &[f64], sample_rate: f64) -> (Vec<f64>, EqTape) {
        let n = x.len();
        let fft_len = linear_fft_len(n);
        let secs = sections(values, sample_rate);
        let x_spec = rfft_padded(x, fft_len);
        let h: Vec<Complex64> = (0..x_spec.len())
            .map(|k| {
                let (z1, z2) = unit_delays(2.0 * PI * k as f64 / fft_len as f64);
                secs.iter().map(|s| s.eval_value(z1, z2)).product()
            })
            .collect();
        let y_spec: Vec<Complex64> = x_spec.iter().zip(&h).map(|(x, h)| x * h).collect();
        let mut y = irfft(&y_spec, fft_len);
        y.truncate(n);
        (
            y,
            EqTape {
                fft_len,
                n,
                x_spec,
                h,
                sections: secs,
            },
        )
    }

    /// Returns (d loss / d input, d loss / d mapped values).
    pub(crate) fn backward(&self, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(grad_out.len(), self.n);
        let m = self.fft_len;
        let g_spec = rfft_padded(grad_out, m);

        let dx_spec: Vec<Complex64> = g_spec.iter().zip(&self.h).map(|(g, h)| g * h.conj()).collect();
        let mut dx = irfft(&dx_spec, m);
        dx.truncate(self.n);

        let mut dparams = vec![0.0; EQ_PARAM_COUNT];
        let inv_m = 1.0 / m as f64;
        for k in 0..g_spec.len() {
            let w = self.x_spec[k] * g_spec[k].conj() * (bin_weight(k, m) * inv_m);
            if w == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (z1, z2) = unit_delays(2.0 * PI * k as f64 / m as f64);
            let evals: [(Complex64, [Complex64; 3]); BANDS] =
                std::array::from_fn(|b| self.sections[b].eval(z1, z2));
            for b in 0..BANDS {
                let others: Complex64 = evals
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != b)
                    .map(|(_, e)| e.0)
                    .product();
                let scale = w * others;
                for s in 0..3 {
                    dparams[3 * b + s] += (scale * evals[b].1[s]).re;
                }
            }
        }
        (dx, dparams)
    }
}
