use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),

    #[error("audio contains no samples")]
    EmptyAudio,

    #[error("audio contains non-finite samples")]
    NonFiniteAudio,

    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),

    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },

    #[error("frequency {freq} Hz outside (0, {nyquist}) Hz")]
    FrequencyOutOfRange { freq: f64, nyquist: f64 },

    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("target and contrast prompts embed identically (degenerate prompt pair)")]
    DegeneratePromptPair,

    #[error("empty prompt text")]
    EmptyPrompt,

    #[error("embedding backend {0} does not expose audio gradients")]
    NonDifferentiableBackend(String),

    #[error("audio sample rate {got} Hz does not match backend rate {expected} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },

    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("embedding backend failure: {0}")]
    Backend(String),

    #[error("invalid parameter file at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("unknown chain `{0}` (supported: eq, reverb, eq-reverb)")]
    UnknownChain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Stable snake_case identifier for API responses.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Decode { .. } => "decode",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::EmptyAudio => "empty_audio",
            Error::NonFiniteAudio => "non_finite_audio",
            Error::InvalidSampleRate(_) => "invalid_sample_rate",
            Error::ParamLength { .. } => "param_length",
            Error::FrequencyOutOfRange { .. } => "frequency_out_of_range",
            Error::DimensionMismatch(..) => "dimension_mismatch",
            Error::DegeneratePromptPair => "degenerate_prompt_pair",
            Error::EmptyPrompt => "empty_prompt",
            Error::NonDifferentiableBackend(_) => "non_differentiable_backend",
            Error::SampleRateMismatch { .. } => "sample_rate_mismatch",
            Error::BackendUnavailable(_) => "backend_unavailable",
            Error::Backend(_) => "backend",
            Error::Schema { .. } => "schema",
            Error::UnknownChain(_) => "unknown_chain",
            Error::Config(_) => "config",
            Error::Manifest(_) => "manifest",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
