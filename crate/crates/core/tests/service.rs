mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use common::*;
use promptfx::audio::{decode_wav_bytes, encode_wav_bytes, BitDepth};
use promptfx::fx::{eq_specs, mapped_to_json, MappedParams};
use promptfx::service::{router, AppState, ServiceConfig};
use promptfx::{Embedder, FxChain};

const BOUNDARY: &str = "promptfx-test-boundary";

enum Part<'a> {
    Text(&'a str, &'a str),
    File(&'a str, &'a [u8]),
}

fn multipart(parts: &[Part]) -> Vec<u8> {
    let mut body = Vec::new();
    for part in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match part {
            Part::Text(name, value) => {
                body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes());
            }
            Part::File(name, bytes) => {
                body.extend_from_slice(
                    format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"a.wav\"\r\nContent-Type: audio/wav\r\n\r\n").as_bytes(),
                );
                body.extend_from_slice(bytes);
                body.extend_from_slice(b"\r\n");
            }
        }
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

fn post(uri: &str, parts: &[Part]) -> Request<Body> {
    Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn app(workers: usize, max_upload_bytes: usize) -> (Router, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        workers,
        max_upload_bytes,
        ..ServiceConfig::default()
    };
    let state = AppState::start(config, Embedder::surrogate()).unwrap();
    (router(state), dir)
}

fn wav(samples: Vec<f64>) -> Vec<u8> {
    encode_wav_bytes(&buffer(samples), BitDepth::Float32).unwrap().0
}

async fn wait_done(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (_, job) = get_json(app, &format!("/v1/jobs/{id}")).await;
        if job["status"] == "done" || job["status"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}

async fn create(app: &Router, audio: &[u8], fields: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut parts: Vec<Part> = fields.iter().map(|(k, v)| Part::Text(k, v)).collect();
    parts.push(Part::File("audio", audio));
    let (s, b) = send(app, post("/v1/jobs", &parts)).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test(flavor = "multi_thread")]
async fn chains_schema_has_units_and_ranges() {
    let (app, _d) = app(1, 1 << 20);
    let (status, doc) = get_json(&app, "/v1/chains").await;
    assert_eq!(status, StatusCode::OK);
    let params = doc["eq"]["effects"][0]["params"].as_array().unwrap();
    assert_eq!(params.len(), 18);
    for chain in ["eq", "reverb", "eq-reverb"] {
        for effect in doc[chain]["effects"].as_array().unwrap() {
            for p in effect["params"].as_array().unwrap() {
                assert!(["dB", "Hz", "seconds", "ratio"].contains(&p["unit"].as_str().unwrap()));
                assert!(p["min"].as_f64().unwrap() < p["max"].as_f64().unwrap());
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn job_lifecycle_and_render_roundtrip() {
    let (app, _d) = app(1, 8 << 20);
    let input = wav(pink(0.5, 31));
    let (status, body) = create(&app, &input, &[("prompt", "warm"), ("chain", "eq"), ("iterations", "12"), ("runs", "2"), ("seed", "3")]).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = body["id"].as_str().unwrap().to_string();

    let (_, first) = get_json(&app, &format!("/v1/jobs/{id}")).await;
    assert!(["queued", "running", "done"].contains(&first["status"].as_str().unwrap()));

    let job = wait_done(&app, &id).await;
    assert_eq!(job["status"], "done", "{job}");
    let traces = job["result"]["loss_traces"].as_array().unwrap();
    assert_eq!(traces.len(), 2);
    assert!(traces.iter().all(|t| t.as_array().unwrap().len() == 12));
    assert!(job["progress"]["iteration"].as_u64().unwrap() <= 12);

    let art = |name: &str| Request::get(format!("/v1/jobs/{id}/artifacts/{name}")).body(Body::empty()).unwrap();
    let (s, effected) = send(&app, art("effected.wav")).await;
    assert_eq!(s, StatusCode::OK);
    let (_, params) = send(&app, art("params.json")).await;
    let (s, csv) = send(&app, art("losses.csv")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 24);
    let (s, _) = send(&app, art("../job.json")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let params = String::from_utf8(params).unwrap();
    let (s, rendered) = send(&app, post("/v1/render", &[Part::Text("params", &params), Part::File("audio", &input)])).await;
    assert_eq!(s, StatusCode::OK);
    let a = decode_wav_bytes(&effected).unwrap();
    let b = decode_wav_bytes(&rendered).unwrap();
    assert!(snr_db(a.samples(), b.samples()) >= 90.0);
    assert_eq!(rendered, effected, "render is byte-stable against the job output");

    // Resubmitting the same request is the same job.
    let (_, again) = create(&app, &input, &[("prompt", "warm"), ("chain", "eq"), ("iterations", "12"), ("runs", "2"), ("seed", "3")]).await;
    assert_eq!(again["id"], id.as_str());
}

#[tokio::test(flavor = "multi_thread")]
async fn validation_errors() {
    let (app, _d) = app(1, 1 << 20);
    let input = wav(pink(0.2, 1));
    let (s, body) = create(&app, &input, &[("prompt", "warm"), ("chain", "flanger")]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(body.to_string().contains("eq-reverb"));
    let (s, _) = create(&app, &input, &[("prompt", ""), ("chain", "eq")]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = create(&app, &input, &[("prompt", "warm"), ("variant", "sideways")]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = create(&app, &input, &[("prompt", "warm"), ("iterations", "0")]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = create(&app, b"not a wav", &[("prompt", "warm")]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, body) = create(&app, &input, &[("prompt", "bright"), ("contrast", "bright"), ("variant", "directional")]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "degenerate_prompt_pair");
    let (s, _) = get_json(&app, "/v1/jobs/nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn oversize_upload_is_413() {
    let (app, _d) = app(1, 4096);
    let (s, _) = create(&app, &wav(pink(0.5, 1)), &[("prompt", "warm")]).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test(flavor = "multi_thread")]
async fn render_schema_errors_name_the_field() {
    let (app, _d) = app(1, 1 << 20);
    let input = wav(pink(0.3, 5));
    let values: Vec<f64> = eq_specs().iter().map(|s| if s.unit == "dB" { 0.0 } else { (s.min * s.max).sqrt() }).collect();
    let mapped = MappedParams::from_values(&eq_specs(), &values).unwrap();
    let mut doc = mapped_to_json(&FxChain::eq(), &mapped).unwrap();

    let (s, out) = send(&app, post("/v1/render", &[Part::Text("params", &doc.to_string()), Part::File("audio", &input)])).await;
    assert_eq!(s, StatusCode::OK);
    let a = decode_wav_bytes(&input).unwrap();
    assert!(snr_db(a.samples(), decode_wav_bytes(&out).unwrap().samples()) >= 60.0);

    doc["parametric_eq"]["low_shelf_gain"]["value"] = serde_json::json!("loud");
    let (s, body) = send(&app, post("/v1/render", &[Part::Text("params", &doc.to_string()), Part::File("audio", &input)])).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["error"]["field"], "parametric_eq.low_shelf_gain.value");
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_optimization_is_reported_not_500() {
    let (app, _d) = app(1, 1 << 20);
    // Digital silence has no spectral shape, so the embedding is undefined.
    let (s, body) = create(&app, &wav(vec![0.0; 4410]), &[("prompt", "warm"), ("iterations", "3"), ("runs", "1")]).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = wait_done(&app, body["id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "failed");
    assert!(job["error"]["code"].is_string());
}

#[tokio::test(flavor = "multi_thread")]
async fn single_worker_runs_jobs_in_fifo_order() {
    let (app, _d) = app(1, 1 << 20);
    let mut ids = Vec::new();
    for seed in 0..3 {
        let (s, body) = create(&app, &wav(pink(0.3, 9)), &[("prompt", "warm"), ("iterations", "25"), ("runs", "1"), ("seed", &seed.to_string())]).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        ids.push(body["id"].as_str().unwrap().to_string());
    }
    loop {
        let mut statuses = Vec::new();
        for id in &ids {
            statuses.push(get_json(&app, &format!("/v1/jobs/{id}")).await.1["status"].as_str().unwrap().to_string());
        }
        assert!(statuses.iter().filter(|s| *s == "running").count() <= 1, "{statuses:?}");
        for k in 0..ids.len() {
            if statuses[k] != "queued" {
                assert!(statuses[..k].iter().all(|s| s == "done"), "{statuses:?}");
            }
        }
        if statuses.iter().all(|s| s == "done") {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn cors_headers_present() {
    let (app, _d) = app(1, 1 << 20);
    let req = Request::get("/v1/chains").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
