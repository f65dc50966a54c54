use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use promptfx::audio::{load_audio, resample, save_audio, BitDepth};
use promptfx::corpus::{corpus_manifest, load_prompt_corpus, read_manifest, run_batch, BatchOptions};
use promptfx::embedding::{Embedder, SURROGATE_SAMPLE_RATE};
use promptfx::fx::{chains_schema, mapped_from_json, FxChain, FxRenderer, DEFAULT_NOISE_SEED};
use promptfx::optimizer::{build_prompts, optimize_with_progress, OptimizationConfig, Progress, Variant};
use promptfx::service::{serve, AppState, ServiceConfig};
use promptfx::Error;

/// Exit codes: 0 ok, 1 other failure, 2 usage, 3 I/O, 4 degenerate prompt
/// pair, 5 parameter file schema violation.
#[derive(Parser)]
#[command(name = "promptfx", version, about = "Text-prompted audio effect parameter search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize effect parameters for one input and prompt.
    Run(RunArgs),
    /// Render an input through a saved params.json.
    Render(RenderArgs),
    /// Run a manifest of (audio, prompt, chain) cells.
    Batch(BatchArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Print the parameter schema of every chain as JSON.
    Chains,
}

#[derive(Args)]
struct RunArgs {
    input: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value = "eq", value_parser = parse_chain)]
    chain: FxChain,
    #[arg(long, default_value = "cosine", value_parser = parse_variant)]
    variant: Variant,
    /// Contrast prompt for the directional loss (default: NOT <prompt>).
    #[arg(long)]
    contrast: Option<String>,
    #[arg(long, default_value_t = 600)]
    iters: usize,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 1500.0)]
    max_shift_ms: f64,
    /// Defaults to OS entropy; always recorded in run_meta.json.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_NOISE_SEED)]
    noise_seed: u64,
    #[arg(long, default_value = "surrogate")]
    backend: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    input: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Processing rate; must match the rate the parameters were found at.
    #[arg(long, default_value_t = SURROGATE_SAMPLE_RATE)]
    sample_rate: u32,
    #[arg(long, default_value_t = DEFAULT_NOISE_SEED)]
    noise_seed: u64,
    #[arg(long, default_value = "float32", value_parser = parse_depth)]
    bit_depth: BitDepth,
}

#[derive(Args)]
struct BatchArgs {
    /// CSV with columns audio_path, prompt, chain, variants.
    #[arg(long, conflicts_with = "corpus_audio", required_unless_present = "corpus_audio")]
    manifest: Option<PathBuf>,
    /// Run every corpus prompt on these files instead of a manifest.
    #[arg(long, num_args = 1..)]
    corpus_audio: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    iters: usize,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_NOISE_SEED)]
    noise_seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "surrogate")]
    backend: String,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value = "promptfx-jobs")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 64)]
    max_upload_mb: usize,
    /// Allowed CORS origin (default: any).
    #[arg(long)]
    cors_origin: Option<String>,
    #[arg(long, default_value_t = DEFAULT_NOISE_SEED)]
    noise_seed: u64,
    #[arg(long, default_value = "surrogate")]
    backend: String,
}

fn parse_chain(s: &str) -> Result<FxChain, String> {
    match s.parse::<FxChain>() {
        Ok(c) if !c.is_empty() => Ok(c),
        _ => Err("expected eq, reverb or eq-reverb".into()),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_depth(s: &str) -> Result<BitDepth, String> {
    match s {
        "pcm16" => Ok(BitDepth::Pcm16),
        "float32" => Ok(BitDepth::Float32),
        _ => Err("expected pcm16 or float32".into()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Decode { .. }
        | Error::UnsupportedFormat(_)
        | Error::EmptyAudio
        | Error::NonFiniteAudio => 3,
        Error::DegeneratePromptPair => 4,
        Error::Schema { .. } | Error::Json(_) | Error::ParamLength { .. } => 5,
        Error::EmptyPrompt | Error::UnknownChain(_) | Error::Config(_) | Error::Manifest(_) => 2,
        _ => 1,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> promptfx::Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_run(a: RunArgs) -> promptfx::Result<()> {
    let embedder = Embedder::from_name(&a.backend)?;
    let renderer = FxRenderer::new(a.noise_seed);
    let prompts = build_prompts(&a.prompt, a.contrast.as_deref())?;
    let config = OptimizationConfig {
        variant: a.variant,
        learning_rate: a.lr,
        iterations: a.iters,
        runs: a.runs,
        max_shift_ms: a.max_shift_ms,
        seed: a.seed.unwrap_or_else(rand::random),
        ..OptimizationConfig::default()
    };
    config.validate()?;
    let audio = load_audio(&a.input)?;
    let audio = resample(&audio, embedder.descriptor().input_sample_rate)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;

    let last = Mutex::new(Instant::now());
    let progress = |p: Progress| {
        let mut last = last.lock().expect("progress clock poisoned");
        if last.elapsed() >= Duration::from_secs(2) {
            *last = Instant::now();
            log::info!("run {} iteration {}/{}: loss {:.5}", p.run, p.iteration, config.iterations, p.loss);
        }
    };
    let result = optimize_with_progress(&audio, &prompts, &a.chain, &config, &embedder, &renderer, &progress)?;

    let report = save_audio(&result.effected_audio, a.out.join("effected.wav"), BitDepth::Float32)?;
    if report.clipped_samples > 0 {
        log::warn!("{} samples clipped in effected.wav", report.clipped_samples);
    }
    write_file(&a.out.join("params.json"), &serde_json::to_vec_pretty(&result.params_json()?)?)?;
    write_file(&a.out.join("run_meta.json"), &serde_json::to_vec_pretty(&result.run_meta())?)?;
    let csv_path = a.out.join("losses.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    result.write_loss_csv(file)?;

    log::info!(
        "chose run {} (final losses {:?}); wrote {}",
        result.chosen_run,
        result.final_losses(),
        a.out.display()
    );
    if !std::io::stdout().is_terminal() {
        println!("{}", serde_json::json!({ "out": a.out, "chosen_run": result.chosen_run, "final_losses": result.final_losses() }));
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> promptfx::Result<()> {
    let text = std::fs::read_to_string(&a.params).map_err(|e| Error::Io {
        path: a.params.clone(),
        source: e,
    })?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Schema {
        field: "$".into(),
        reason: format!("invalid JSON: {e}"),
    })?;
    let (chain, mapped) = mapped_from_json(&doc)?;
    let audio = resample(&load_audio(&a.input)?, a.sample_rate)?;
    let out = FxRenderer::new(a.noise_seed).render_mapped(&audio, &mapped, &chain)?;
    let report = save_audio(&out, &a.out, a.bit_depth)?;
    if report.clipped_samples > 0 {
        log::warn!("{} samples clipped", report.clipped_samples);
    }
    Ok(())
}

fn cmd_batch(a: BatchArgs) -> promptfx::Result<()> {
    let rows = match &a.manifest {
        Some(path) => read_manifest(path)?,
        None => corpus_manifest(&load_prompt_corpus(), &a.corpus_audio),
    };
    let embedder = Embedder::from_name(&a.backend)?;
    let renderer = FxRenderer::new(a.noise_seed);
    let config = OptimizationConfig {
        iterations: a.iters,
        runs: a.runs,
        seed: a.seed.unwrap_or_else(rand::random),
        ..OptimizationConfig::default()
    };
    config.validate()?;
    let mut options = BatchOptions::default();
    if let Some(w) = a.workers {
        options.workers = w;
    }
    log::info!("batch: {} cells, seed {}", rows.len(), config.seed);
    let summary = run_batch(&rows, &a.out, &config, &options, &embedder, &renderer)?;
    log::info!(
        "{} cells, {} failed; index at {}",
        summary.rows.len(),
        summary.failed(),
        summary.index_path.display()
    );
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> promptfx::Result<()> {
    let embedder = Embedder::from_name(&a.backend)?;
    let config = ServiceConfig {
        data_dir: a.data_dir,
        workers: a.workers,
        max_upload_bytes: a.max_upload_mb * 1024 * 1024,
        cors_origin: a.cors_origin,
        noise_seed: a.noise_seed,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from("<runtime>"),
        source: e,
    })?;
    runtime.block_on(async move {
        let io = |e| Error::Io {
            path: config.data_dir.clone(),
            source: e,
        };
        let state = AppState::start(config.clone(), embedder).map_err(io)?;
        serve(a.addr, state).await.map_err(io)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Render(a) => cmd_render(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Chains => {
            let mut out = std::io::stdout().lock();
            let text = serde_json::to_string_pretty(&chains_schema()).expect("schema serializes");
            let _ = writeln!(out, "{text}");
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
