mod common;

use common::*;
use promptfx::embedding::SURROGATE_DIM;
use promptfx::{Embedder, Error};

fn lowpass(x: &[f64], cutoff: f64, passes: usize) -> Vec<f64> {
    let a = (-2.0 * std::f64::consts::PI * cutoff / SR as f64).exp();
    let mut y = x.to_vec();
    for _ in 0..passes {
        let mut s = 0.0;
        for v in y.iter_mut() {
            s = (1.0 - a) * *v + a * s;
            *v = s;
        }
    }
    y
}

#[test]
fn embeddings_are_unit_and_sized() {
    let e = Embedder::surrogate();
    let a = e.embed_audio(&buffer(pink(0.5, 4))).unwrap();
    let t = e.embed_text("this sound is bright").unwrap();
    for v in [&a, &t] {
        assert_eq!(v.dim(), SURROGATE_DIM);
        let n: f64 = v.values().iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gain_invariant() {
    let e = Embedder::surrogate();
    let x = pink(0.5, 8);
    let a = e.embed_audio(&buffer(x.clone())).unwrap();
    let b = e.embed_audio(&buffer(x.iter().map(|v| 2.0 * v).collect())).unwrap();
    let diff = a.values().iter().zip(b.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn silence_shorter_than_a_hop_is_invisible() {
    let e = Embedder::surrogate();
    let hop = (0.05 * SR as f64) as usize;
    for len in [SR as usize / 2, SR as usize / 2 + 1000] {
        let x = pink(len as f64 / SR as f64, 8);
        let mut padded = x.clone();
        padded.extend(std::iter::repeat_n(0.0, hop - 1));
        let a = e.embed_audio(&buffer(x)).unwrap();
        let b = e.embed_audio(&buffer(padded)).unwrap();
        let diff = a.values().iter().zip(b.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }
}

#[test]
fn bright_is_the_normalized_ramp() {
    let ramp: Vec<f64> = (0..SURROGATE_DIM).map(|i| i as f64 - (SURROGATE_DIM - 1) as f64 / 2.0).collect();
    let norm = ramp.iter().map(|x| x * x).sum::<f64>().sqrt();
    let t = Embedder::surrogate().embed_text("this sound is bright").unwrap();
    for (a, b) in t.values().iter().zip(&ramp) {
        assert!((a - b / norm).abs() < 1e-12);
    }
}

#[test]
fn brightness_ordering() {
    let e = Embedder::surrogate();
    let bright = e.embed_text("this sound is bright").unwrap();
    let noise = white(1.0, 12);
    let dull = lowpass(&noise, 500.0, 4);
    let s_white = e.embed_audio(&buffer(noise)).unwrap().dot(&bright).unwrap();
    let s_dull = e.embed_audio(&buffer(dull)).unwrap().dot(&bright).unwrap();
    assert!(s_white > s_dull, "{s_white} vs {s_dull}");
}

#[test]
fn negation_is_antipodal_and_unknown_words_are_stable() {
    let e = Embedder::surrogate();
    let p = e.embed_text("this sound is warm").unwrap();
    let n = e.embed_text("this sound is NOT warm").unwrap();
    assert!((p.dot(&n).unwrap() + 1.0).abs() < 1e-9);
    let a = e.embed_text("ethereal").unwrap();
    let b = e.embed_text("ethereal").unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn silence_is_rejected() {
    let e = Embedder::surrogate();
    assert!(e.embed_audio(&buffer(vec![0.0; 4410])).is_err());
}

#[test]
fn wrong_sample_rate_is_rejected() {
    let e = Embedder::surrogate();
    let buf = promptfx::AudioBuffer::new(pink(0.5, 1), 48_000).unwrap();
    let err = e.embed_audio(&buf);
    assert!(matches!(err, Err(Error::SampleRateMismatch { expected: 44_100, got: 48_000 })));
}

#[test]
fn audio_gradient_matches_differences() {
    let e = Embedder::surrogate();
    let x = pink(0.3, 21);
    let (emb, grad) = e.embed_audio_with_grad(&buffer(x.clone())).unwrap();
    let cot: Vec<f64> = (0..emb.dim()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let g = grad.pull(&cot).unwrap();
    assert_eq!(g.len(), x.len());
    let f = |s: &[f64]| {
        let v = e.embed_audio(&buffer(s.to_vec())).unwrap();
        v.values().iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
    };
    let h = 1e-6;
    let mut errors = Vec::new();
    for k in 0..10 {
        let i = 1000 + k * 1201;
        let mut p = x.clone();
        p[i] += h;
        let mut m = x.clone();
        m[i] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        errors.push((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-10));
    }
    assert!(median(errors.clone()) < 1e-4, "{errors:?}");
}
