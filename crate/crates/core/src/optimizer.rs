//! Prompt-guided search over effect parameters.
//!
//! Each run starts from standard-normal raw parameters and takes Adam steps
//! on render -> random circular shift -> embed -> loss. After the loop every
//! run is re-scored without the shift and the lowest-loss run wins.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audio::AudioBuffer;
use crate::embedding::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::fx::{map_params, mapped_to_json, FxChain, FxRenderer, MappedParams, RawParams};
use crate::loss::{cosine_loss_grad, directional_loss_grad_from_deltas, text_direction};

pub const DEFAULT_PREFIX: &str = "this sound is";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub target_text: String,
    pub contrast_text: String,
    pub prefix: String,
}

impl PromptSpec {
    pub fn target(&self) -> String {
        join_prefix(&self.prefix, &self.target_text)
    }

    pub fn contrast(&self) -> String {
        join_prefix(&self.prefix, &self.contrast_text)
    }
}

fn join_prefix(prefix: &str, text: &str) -> String {
    if prefix.is_empty() {
        text.to_string()
    } else {
        format!("{prefix} {text}")
    }
}

/// Contrast defaults to `NOT <target>`.
pub fn build_prompts(target: &str, contrast: Option<&str>) -> Result<PromptSpec> {
    let target = target.trim();
    if target.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let contrast = match contrast.map(str::trim) {
        Some("") => return Err(Error::EmptyPrompt),
        Some(c) => c.to_string(),
        None => format!("NOT {target}"),
    };
    Ok(PromptSpec {
        target_text: target.to_string(),
        contrast_text: contrast,
        prefix: DEFAULT_PREFIX.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cosine,
    Directional,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cosine => "cosine",
            Variant::Directional => "directional",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Variant::Cosine),
            "directional" => Ok(Variant::Directional),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected cosine or directional)"
            ))),
        }
    }
}

/// Stop a run once the training loss has not improved by `min_delta` for
/// `patience` iterations. The trace is then shorter than `iterations`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub iterations: usize,
    pub runs: usize,
    pub max_shift_ms: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        OptimizationConfig {
            variant: Variant::Cosine,
            learning_rate: 1e-2,
            iterations: 600,
            runs: 3,
            max_shift_ms: 1500.0,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop: None,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if !(self.max_shift_ms >= 0.0 && self.max_shift_ms.is_finite()) {
            return bad("max_shift_ms must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, config: &OptimizationConfig) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Largest shift in samples for `max_ms` at `sample_rate`.
pub fn max_shift_samples(max_ms: f64, sample_rate: u32) -> usize {
    (max_ms.max(0.0) * sample_rate as f64 / 1000.0).round() as usize
}

fn draw_shift(max: usize, rng: &mut impl Rng) -> i64 {
    if max == 0 {
        0
    } else {
        rng.gen_range(-(max as i64)..=max as i64)
    }
}

/// `out[(n + k) mod N] = x[n]`.
pub fn rotate(x: &[f64], k: i64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.rem_euclid(n as i64) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&x[n - k..]);
    out.extend_from_slice(&x[..n - k]);
    out
}

/// Circular shift by a uniform draw from [-max_ms, +max_ms].
pub fn random_shift(buf: &AudioBuffer, max_ms: f64, rng: &mut impl Rng) -> AudioBuffer {
    let k = draw_shift(max_shift_samples(max_ms, buf.sample_rate()), rng);
    buf.with_samples(rotate(buf.samples(), k))
}

/// Index of the smallest loss; NaN never wins, ties go to the earlier run.
pub fn select_run(final_losses: &[f64]) -> usize {
    final_losses
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &l)| {
            let l = if l.is_nan() { f64::INFINITY } else { l };
            match best {
                Some((_, b)) if b <= l => best,
                _ => Some((i, l)),
            }
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub fn init_params(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

enum Target {
    Cosine(Embedding),
    Directional { a1: Vec<f64>, delta_text: Vec<f64> },
}

/// Loss on one (audio, prompt, chain) triple as a function of raw
/// parameters. Text embeddings and A1 are computed once here.
pub struct Objective<'a> {
    audio: &'a AudioBuffer,
    chain: &'a FxChain,
    embedder: &'a Embedder,
    renderer: &'a FxRenderer,
    target: Target,
}

impl<'a> Objective<'a> {
    pub fn new(
        audio: &'a AudioBuffer,
        prompts: &PromptSpec,
        chain: &'a FxChain,
        variant: Variant,
        embedder: &'a Embedder,
        renderer: &'a FxRenderer,
    ) -> Result<Self> {
        let desc = embedder.descriptor();
        if !desc.differentiable_audio {
            return Err(Error::NonDifferentiableBackend(desc.name.clone()));
        }
        if audio.sample_rate() != desc.input_sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: desc.input_sample_rate,
                got: audio.sample_rate(),
            });
        }
        let t2 = embedder.embed_text(&prompts.target())?;
        let target = match variant {
            Variant::Cosine => Target::Cosine(t2),
            Variant::Directional => {
                let t1 = embedder.embed_text(&prompts.contrast())?;
                let delta_text = text_direction(&t1, &t2)?;
                let a1 = embedder.embed_audio(audio)?.values().to_vec();
                Target::Directional { a1, delta_text }
            }
        };
        Ok(Objective {
            audio,
            chain,
            embedder,
            renderer,
            target,
        })
    }

    pub fn param_count(&self) -> usize {
        self.chain.param_count()
    }

    /// Loss and its gradient w.r.t. raw parameters, with the effected audio
    /// circularly shifted by `shift` samples before embedding.
    pub fn loss_and_grad(&self, raw: &RawParams, shift: i64) -> Result<(f64, Vec<f64>)> {
        let tape = self.renderer.forward(self.audio, raw, self.chain)?;
        let shifted = self.audio.with_samples(rotate(tape.output(), shift));
        let (emb, pull) = self.embedder.embed_audio_with_grad(&shifted)?;
        let (loss, d_emb) = match &self.target {
            Target::Cosine(t) => cosine_loss_grad(&emb, t)?,
            Target::Directional { a1, delta_text } => {
                let da: Vec<f64> = emb.values().iter().zip(a1).map(|(a, b)| a - b).collect();
                directional_loss_grad_from_deltas(&da, delta_text)?
            }
        };
        if !loss.is_finite() {
            return Err(Error::Backend("loss is not finite".into()));
        }
        let d_shifted = pull.pull(&d_emb)?;
        let d_out = rotate(&d_shifted, -shift);
        Ok((loss, tape.backward(&d_out)))
    }

    pub fn loss(&self, raw: &RawParams) -> Result<f64> {
        let rendered = self.renderer.render_chain(self.audio, raw, self.chain)?;
        let emb = self.embedder.embed_audio(&rendered)?;
        let loss = match &self.target {
            Target::Cosine(t) => crate::loss::cosine_loss(&emb, t)?,
            Target::Directional { a1, delta_text } => {
                let da: Vec<f64> = emb.values().iter().zip(a1).map(|(a, b)| a - b).collect();
                crate::loss::directional_loss_from_deltas(&da, delta_text)?
            }
        };
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub run: usize,
    /// Completed iterations in this run, 1-based.
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub raw_params: RawParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Training loss (with shift) per iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub chosen_run: usize,
    pub raw_params: RawParams,
    pub mapped_params: MappedParams,
    pub runs: Vec<RunOutcome>,
    pub effected_audio: AudioBuffer,
    pub config: OptimizationConfig,
    pub prompts: PromptSpec,
    pub chain: FxChain,
    pub backend: String,
    pub reverb_noise_seed: u64,
}

impl OptimizationResult {
    pub fn final_losses(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_loss).collect()
    }

    pub fn initial_losses(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.initial_loss).collect()
    }

    pub fn loss_traces(&self) -> Vec<&[f64]> {
        self.runs.iter().map(|r| r.trace.as_slice()).collect()
    }

    /// Parameter document in the chain's JSON schema.
    pub fn params_json(&self) -> Result<Value> {
        mapped_to_json(&self.chain, &self.mapped_params)
    }

    pub fn run_meta(&self) -> Value {
        let c = &self.config;
        json!({
            "variant": c.variant,
            "chain": self.chain,
            "target_prompt": self.prompts.target(),
            "contrast_prompt": self.prompts.contrast(),
            "backend": self.backend,
            "sample_rate": self.effected_audio.sample_rate(),
            "learning_rate": c.learning_rate,
            "iterations": c.iterations,
            "runs": c.runs,
            "max_shift_ms": c.max_shift_ms,
            "init": "standard_normal",
            "optimizer": {
                "name": "adam",
                "beta1": c.adam_beta1,
                "beta2": c.adam_beta2,
                "eps": c.adam_eps,
            },
            "early_stop": c.early_stop,
            "seed": c.seed,
            "run_seeds": self.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "reverb_noise_seed": self.reverb_noise_seed,
            "chosen_run": self.chosen_run,
            "initial_losses": self.initial_losses(),
            "final_losses": self.final_losses(),
        })
    }

    /// CSV with columns run, iteration, loss (iteration is 1-based).
    pub fn write_loss_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run", "iteration", "loss"])?;
        for (r, run) in self.runs.iter().enumerate() {
            for (i, loss) in run.trace.iter().enumerate() {
                w.serialize((r, i + 1, loss))?;
            }
        }
        w.flush().map_err(|e| Error::io("<loss csv>", e))?;
        Ok(())
    }
}

pub fn optimize(
    audio: &AudioBuffer,
    prompts: &PromptSpec,
    chain: &FxChain,
    config: &OptimizationConfig,
    embedder: &Embedder,
    renderer: &FxRenderer,
) -> Result<OptimizationResult> {
    optimize_with_progress(audio, prompts, chain, config, embedder, renderer, &|_| {})
}

/// As [`optimize`], reporting every iteration. Runs execute in parallel, so
/// the callback may be invoked from several threads.
pub fn optimize_with_progress(
    audio: &AudioBuffer,
    prompts: &PromptSpec,
    chain: &FxChain,
    config: &OptimizationConfig,
    embedder: &Embedder,
    renderer: &FxRenderer,
    on_progress: &(dyn Fn(Progress) + Sync),
) -> Result<OptimizationResult> {
    config.validate()?;
    let objective = Objective::new(audio, prompts, chain, config.variant, embedder, renderer)?;
    let max_shift = max_shift_samples(config.max_shift_ms, audio.sample_rate());

    let runs = (0..config.runs)
        .into_par_iter()
        .map(|r| run_once(&objective, config, r, max_shift, on_progress))
        .collect::<Result<Vec<_>>>()?;

    let finals: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
    let chosen_run = select_run(&finals);
    let raw_params = runs[chosen_run].raw_params.clone();
    let mapped_params = map_params(&raw_params, &chain.param_specs())?;
    let effected_audio = renderer.render_chain(audio, &raw_params, chain)?;
    log::info!(
        "{} / {}: final losses {:?}, chose run {}",
        chain,
        config.variant,
        finals,
        chosen_run
    );
    Ok(OptimizationResult {
        chosen_run,
        raw_params,
        mapped_params,
        runs,
        effected_audio,
        config: config.clone(),
        prompts: prompts.clone(),
        chain: chain.clone(),
        backend: embedder.descriptor().name.clone(),
        reverb_noise_seed: renderer.noise_seed(),
    })
}

fn run_once(
    objective: &Objective<'_>,
    config: &OptimizationConfig,
    run: usize,
    max_shift: usize,
    on_progress: &(dyn Fn(Progress) + Sync),
) -> Result<RunOutcome> {
    let seed = config.run_seed(run);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = objective.param_count();
    let mut raw = RawParams::new(init_params(n, &mut rng))?;
    let initial_loss = objective.loss(&raw)?;
    let mut adam = Adam::new(n, config);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for it in 0..config.iterations {
        let shift = draw_shift(max_shift, &mut rng);
        let (loss, grad) = objective.loss_and_grad(&raw, shift)?;
        adam.step(raw.as_mut_slice(), &grad);
        trace.push(loss);
        on_progress(Progress {
            run,
            iteration: it + 1,
            loss,
        });
        if let Some(stop) = config.early_stop {
            if loss < best - stop.min_delta {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= stop.patience {
                    log::debug!("run {run}: early stop after {} iterations", it + 1);
                    break;
                }
            }
        }
    }

    let final_loss = objective.loss(&raw)?;
    Ok(RunOutcome {
        seed,
        raw_params: raw,
        initial_loss,
        final_loss,
        trace,
    })
}
