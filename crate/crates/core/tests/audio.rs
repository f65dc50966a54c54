use proptest::prelude::*;
use promptfx::audio::{decode_wav_bytes, encode_wav_bytes, load_audio, resample, save_audio, BitDepth};
use promptfx::AudioBuffer;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn float32_roundtrip_is_exact(samples in prop::collection::vec(-1.0f32..1.0, 1..2000), rate in 8_000u32..96_000) {
        let values: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
        let buf = AudioBuffer::new(values.clone(), rate).unwrap();
        let (bytes, report) = encode_wav_bytes(&buf, BitDepth::Float32).unwrap();
        prop_assert_eq!(report.clipped_samples, 0);
        let back = decode_wav_bytes(&bytes).unwrap();
        prop_assert_eq!(back.samples(), &values[..]);
        prop_assert_eq!(back.sample_rate(), rate);
    }

    #[test]
    fn pcm16_roundtrip_within_one_step(samples in prop::collection::vec(-1.0f64..0.99996, 1..2000)) {
        let buf = AudioBuffer::new(samples.clone(), 44_100).unwrap();
        let back = decode_wav_bytes(&encode_wav_bytes(&buf, BitDepth::Pcm16).unwrap().0).unwrap();
        for (a, b) in samples.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn resampled_length_follows_ratio(len in 1usize..5000, from in prop::sample::select(vec![16_000u32, 22_050, 44_100, 48_000]), to in prop::sample::select(vec![16_000u32, 22_050, 44_100, 48_000])) {
        let buf = AudioBuffer::new(vec![0.1; len], from).unwrap();
        let out = resample(&buf, to).unwrap();
        let expected = (len as f64 * to as f64 / from as f64).round() as usize;
        prop_assert_eq!(out.len(), expected);
        prop_assert_eq!(out.sample_rate(), to);
    }
}

#[test]
fn pcm16_clamps_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.wav");
    let buf = AudioBuffer::new(vec![1.5, -2.0, 0.25], 16_000).unwrap();
    let report = save_audio(&buf, &path, BitDepth::Pcm16).unwrap();
    assert_eq!(report.clipped_samples, 2);
    let back = load_audio(&path).unwrap();
    assert_eq!(back.samples()[0], 32767.0 / 32768.0);
    assert_eq!(back.samples()[1], -1.0);
    assert_eq!(back.samples()[2], 0.25);
}

#[test]
fn sine_peak_survives_upsampling() {
    let x: Vec<f64> = (0..16_000).map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin()).collect();
    let up = resample(&AudioBuffer::new(x, 16_000).unwrap(), 48_000).unwrap();
    assert_eq!(up.len(), 48_000);
    // One second of audio: FFT bin k is k Hz.
    let mut spec: Vec<Complex64> = up.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(spec.len()).process(&mut spec);
    let peak = (1..24_000).max_by(|&a, &b| spec[a].norm().total_cmp(&spec[b].norm())).unwrap();
    assert!((439..=441).contains(&peak), "{peak}");
}
