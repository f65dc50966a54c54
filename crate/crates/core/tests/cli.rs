mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use promptfx::audio::{load_audio, save_audio, BitDepth};
use promptfx::fx::{eq_specs, mapped_to_json, MappedParams};
use promptfx::FxChain;
use serde_json::Value;

fn promptfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptfx"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_input(dir: &Path) -> String {
    let path = dir.join("in.wav");
    save_audio(&buffer(pink(0.5, 21)), &path, BitDepth::Float32).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn quick_run(input: &str, out: &Path, variant: &str, chain: &str) -> Output {
    promptfx(&[
        "run", input, "--prompt", "bright", "--chain", chain, "--variant", variant,
        "--iters", "15", "--runs", "2", "--seed", "7", "--out", out.to_str().unwrap(),
    ])
}

#[test]
fn chains_lists_parameter_counts() {
    let out = promptfx(&["chains"]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["eq"]["parameter_count"], 18);
    assert_eq!(doc["reverb"]["parameter_count"], 23);
    assert_eq!(doc["eq-reverb"]["parameter_count"], 41);
    assert_eq!(doc["eq"]["effects"][0]["params"].as_array().unwrap().len(), 18);
}

#[test]
fn missing_prompt_is_usage_error() {
    let out = promptfx(&["run", "in.wav", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_chain_is_usage_error() {
    let out = promptfx(&["run", "in.wav", "--prompt", "warm", "--chain", "flanger", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = quick_run("/no/such/file.wav", dir.path(), "cosine", "eq");
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn degenerate_pair_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let out = promptfx(&[
        "run", &input, "--prompt", "bright", "--contrast", "bright", "--variant", "directional",
        "--iters", "2", "--runs", "1", "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn run_writes_artifacts_and_render_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let out_dir = dir.path().join("run");
    let out = quick_run(&input, &out_dir, "cosine", "eq-reverb");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let meta = read_json(&out_dir.join("run_meta.json"));
    assert_eq!(meta["iterations"], 15);
    assert_eq!(meta["runs"], 2);
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["variant"], "cosine");
    assert_eq!(meta["chain"], "eq-reverb");

    let csv = std::fs::read_to_string(out_dir.join("losses.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "run,iteration,loss");
    assert_eq!(lines.len(), 1 + 2 * 15);

    let rendered = dir.path().join("rendered.wav");
    let out = promptfx(&[
        "render", &input, "--params", out_dir.join("params.json").to_str().unwrap(),
        "--out", rendered.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = load_audio(out_dir.join("effected.wav")).unwrap();
    let b = load_audio(&rendered).unwrap();
    assert!(snr_db(a.samples(), b.samples()) >= 90.0);
}

#[test]
fn variants_give_different_params() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let (c, d) = (dir.path().join("c"), dir.path().join("d"));
    assert!(quick_run(&input, &c, "cosine", "eq").status.success());
    assert!(quick_run(&input, &d, "directional", "eq").status.success());
    assert_ne!(read_json(&c.join("params.json")), read_json(&d.join("params.json")));
}

#[test]
fn out_of_range_gain_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let values: Vec<f64> = eq_specs().iter().map(|s| if s.unit == "dB" { 0.0 } else { (s.min * s.max).sqrt() }).collect();
    let mapped = MappedParams::from_values(&eq_specs(), &values).unwrap();
    let mut doc = mapped_to_json(&FxChain::eq(), &mapped).unwrap();
    doc["parametric_eq"]["peak3_gain"]["value"] = serde_json::json!(24.0);
    let params = dir.path().join("bad.json");
    std::fs::write(&params, doc.to_string()).unwrap();
    let out = promptfx(&[
        "render", &input, "--params", params.to_str().unwrap(),
        "--out", dir.path().join("o.wav").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parametric_eq.peak3_gain.value"));
}

#[test]
fn identity_params_render_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let values: Vec<f64> = eq_specs().iter().map(|s| if s.unit == "dB" { 0.0 } else { (s.min * s.max).sqrt() }).collect();
    let mapped = MappedParams::from_values(&eq_specs(), &values).unwrap();
    let params = dir.path().join("id.json");
    std::fs::write(&params, mapped_to_json(&FxChain::eq(), &mapped).unwrap().to_string()).unwrap();
    let rendered = dir.path().join("o.wav");
    let out = promptfx(&[
        "render", &input, "--params", params.to_str().unwrap(), "--out", rendered.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let a = load_audio(&input).unwrap();
    let b = load_audio(&rendered).unwrap();
    assert!(snr_db(a.samples(), b.samples()) >= 60.0);
}

#[test]
fn batch_manifest_and_corpus_flags_conflict() {
    let out = promptfx(&["batch", "--manifest", "m.csv", "--corpus-audio", "a.wav", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}
