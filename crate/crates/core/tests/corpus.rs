mod common;

use std::fs;

use common::*;
use promptfx::audio::{save_audio, BitDepth};
use promptfx::corpus::{generate_conditions, load_prompt_corpus, random_condition, run_batch, BatchOptions, ManifestRow, PromptCategory};
use promptfx::{Embedder, FxChain, FxRenderer, OptimizationConfig};
use sha2::{Digest, Sha256};

fn small_config(seed: u64) -> OptimizationConfig {
    OptimizationConfig {
        iterations: 6,
        runs: 1,
        seed,
        ..OptimizationConfig::default()
    }
}

#[test]
fn table_counts_and_tags() {
    let corpus = load_prompt_corpus();
    assert_eq!(corpus.entries().len(), 60);
    for chain in corpus.chains() {
        let list = corpus.for_chain(chain);
        assert_eq!(list.len(), 20, "{chain}");
        assert_eq!(list.iter().filter(|e| e.category.is_single()).count(), 10, "{chain}");
    }
    for chain in ["eq", "reverb"] {
        let printed: Vec<_> = corpus.printed().iter().filter(|e| e.chain == chain).collect();
        let concrete = printed.iter().filter(|e| e.category == PromptCategory::SingleConcrete).count();
        let abstract_ = printed.iter().filter(|e| e.category == PromptCategory::SingleAbstract).count();
        assert_eq!(abstract_, 3, "{chain}");
        // The reverb row prints "dry" twice under a header of seven.
        assert_eq!(concrete, if chain == "reverb" { 8 } else { 7 }, "{chain}");
    }
    assert!(corpus.contains("eq", "tinny") && corpus.contains("eq", "muffled"));
    assert!(corpus.contains("reverb", "coming from a cathedral"));
    assert!(corpus.contains("eq-reverb", "like a shrill Victorian ghost"));
}

#[test]
fn conditions_share_shape_and_differ_by_variant() {
    let audio = buffer(white(0.5, 17));
    let set = generate_conditions(&audio, "bright", &FxChain::eq(), &small_config(2), &Embedder::surrogate(), &FxRenderer::default()).unwrap();
    assert_eq!(set.nofx.samples(), audio.samples());
    for out in [&set.cosine.effected_audio, &set.directional.effected_audio, &set.random.1] {
        assert_eq!(out.len(), audio.len());
        assert_eq!(out.sample_rate(), audio.sample_rate());
    }
    let linf = set
        .cosine
        .mapped_params
        .values()
        .iter()
        .zip(set.directional.mapped_params.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(linf > 0.0);
    let again = random_condition(&audio, &FxChain::eq(), 2, &FxRenderer::default()).unwrap();
    assert_eq!(again.0, set.random.0);
    assert_eq!(again.1.samples(), set.random.1.samples());
}

#[test]
fn random_draws_look_standard_normal() {
    let audio = buffer(pink(0.05, 1));
    let mut draws = Vec::new();
    for seed in 0..15 {
        draws.extend_from_slice(random_condition(&audio, &FxChain::eq_reverb(), seed, &FxRenderer::default()).unwrap().0.as_slice());
    }
    assert!(draws.len() >= 500);
    let n = draws.len() as f64;
    let mu = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mu.abs() < 0.2 && (sd - 1.0).abs() < 0.2, "{mu} {sd}");
}

fn checksum(path: &std::path::Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

#[test]
fn batch_grid_rerun_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, samples) in [pink(0.3, 1), bursts(0.3, 2)].into_iter().enumerate() {
        let p = dir.path().join(format!("in{i}.wav"));
        save_audio(&buffer(samples), &p, BitDepth::Float32).unwrap();
        paths.push(p.to_string_lossy().into_owned());
    }
    let rows: Vec<ManifestRow> = paths
        .iter()
        .flat_map(|p| {
            ["warm", "bright"].map(|prompt| ManifestRow {
                audio_path: p.clone(),
                prompt: prompt.into(),
                chain: "eq".into(),
                variants: "all".into(),
            })
        })
        .collect();
    let out = dir.path().join("out");
    let e = Embedder::surrogate();
    let fx = FxRenderer::default();
    let opts = BatchOptions { workers: 2 };
    let first = run_batch(&rows, &out, &small_config(5), &opts, &e, &fx).unwrap();
    assert_eq!(first.rows.len(), 4);
    assert_eq!(first.failed(), 0);
    let cell = out.join(&first.rows[0].output_dir);
    for name in ["cosine.wav", "cosine_params.json", "cosine_losses.csv", "directional.wav", "random.wav", "nofx.wav"] {
        assert!(cell.join(name).exists(), "{name}");
    }
    let sum = checksum(&first.index_path);
    let stamp = fs::metadata(cell.join("cosine.wav")).unwrap().modified().unwrap();

    let second = run_batch(&rows, &out, &small_config(5), &opts, &e, &fx).unwrap();
    assert_eq!(checksum(&second.index_path), sum);
    assert_eq!(fs::metadata(cell.join("cosine.wav")).unwrap().modified().unwrap(), stamp);

    let mut broken = rows.clone();
    broken.push(ManifestRow {
        audio_path: dir.path().join("missing.wav").to_string_lossy().into_owned(),
        prompt: "warm".into(),
        chain: "eq".into(),
        variants: "cosine".into(),
    });
    let third = run_batch(&broken, &out, &small_config(5), &opts, &e, &fx).unwrap();
    assert_eq!(third.rows.len(), 5);
    assert_eq!(third.failed(), 1);
    assert_eq!(third.rows[4].status, "failed");
    assert!(!third.rows[4].error.is_empty());
}
