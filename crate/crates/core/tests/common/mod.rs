#![allow(dead_code)]

use promptfx::AudioBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

pub const SR: u32 = 44_100;

pub fn white(seconds: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR as f64) as usize;
    (0..n).map(|_| { let x: f64 = StandardNormal.sample(&mut rng); 0.1 * x }).collect::<Vec<f64>>()
}

/// Paul Kellet's economy pink filter on white noise.
pub fn pink(seconds: f64, seed: u64) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    white(seconds, seed)
        .into_iter()
        .map(|w| {
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            0.3 * (b0 + b1 + b2 + w * 0.1848)
        })
        .collect()
}

/// Exponential sweep 40 Hz .. 16 kHz.
pub fn sweep(seconds: f64) -> Vec<f64> {
    let n = (seconds * SR as f64) as usize;
    let (f0, f1) = (40.0f64, 16_000.0f64);
    let k = (f1 / f0).ln();
    (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let phase = 2.0 * PI * f0 * seconds / k * ((t / seconds * k).exp() - 1.0);
            0.3 * phase.sin()
        })
        .collect()
}

/// Band-limited sawtooth at 110 Hz.
pub fn harmonics(seconds: f64) -> Vec<f64> {
    let n = (seconds * SR as f64) as usize;
    let f = 110.0;
    let count = (18_000.0 / f) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            (1..=count).map(|h| (2.0 * PI * f * h as f64 * t).sin() / h as f64).sum::<f64>() * 0.15
        })
        .collect()
}

/// Noise bursts with a slow amplitude envelope, a rough speech stand-in.
pub fn bursts(seconds: f64, seed: u64) -> Vec<f64> {
    pink(seconds, seed)
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let t = i as f64 / SR as f64;
            x * (0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin()).powi(2)
        })
        .collect()
}

pub fn buffer(samples: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(samples, SR).unwrap()
}

pub fn five_signals(seconds: f64) -> Vec<(&'static str, AudioBuffer)> {
    vec![
        ("white", buffer(white(seconds, 1))),
        ("pink", buffer(pink(seconds, 2))),
        ("sweep", buffer(sweep(seconds))),
        ("harmonics", buffer(harmonics(seconds))),
        ("bursts", buffer(bursts(seconds, 3))),
    ]
}

pub fn snr_db(reference: &[f64], test: &[f64]) -> f64 {
    let signal: f64 = reference.iter().map(|x| x * x).sum();
    let noise: f64 = reference.iter().zip(test).map(|(a, b)| (a - b).powi(2)).sum();
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Relative errors of the analytic gradient against central differences,
/// at `points` random raw vectors.
pub fn gradient_errors(
    audio: &AudioBuffer,
    chain: &promptfx::FxChain,
    variant: promptfx::Variant,
    points: usize,
    seed: u64,
) -> Vec<f64> {
    use promptfx::optimizer::{init_params, Objective};
    let embedder = promptfx::Embedder::surrogate();
    let renderer = promptfx::FxRenderer::default();
    let prompts = promptfx::build_prompts("bright", None).unwrap();
    let obj = Objective::new(audio, &prompts, chain, variant, &embedder, &renderer).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut errors = Vec::new();
    for _ in 0..points {
        let raw = init_params(chain.param_count(), &mut rng);
        let (_, grad) = obj
            .loss_and_grad(&promptfx::RawParams::new(raw.clone()).unwrap(), 0)
            .unwrap();
        for i in 0..raw.len() {
            let eval = |d: f64| {
                let mut p = raw.clone();
                p[i] += d;
                obj.loss(&promptfx::RawParams::new(p).unwrap()).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1e-10);
            errors.push((grad[i] - fd).abs() / scale);
        }
    }
    errors
}
