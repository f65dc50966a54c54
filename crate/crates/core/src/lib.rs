//! Search for audio effect parameters that move a recording toward a text
//! description, using gradients through a joint text/audio embedding.
//!
//! The pipeline: raw parameters are mapped into effect ranges
//! ([`fx`]), the chain is rendered, the result is embedded ([`embedding`]) and
//! scored against the prompt ([`loss`]). [`optimizer::optimize`] runs Adam on
//! that score with random restarts.

pub mod audio;
pub mod corpus;
mod dual;
pub mod embedding;
pub mod error;
pub mod fx;
pub mod loss;
pub mod optimizer;
pub mod service;
mod spectral;

pub use audio::{load_audio, save_audio, AudioBuffer, BitDepth};
pub use embedding::{Embedder, Embedding};
pub use error::{Error, Result};
pub use fx::{FxChain, FxRenderer, MappedParams, RawParams};
pub use optimizer::{build_prompts, optimize, OptimizationConfig, OptimizationResult, PromptSpec, Variant};
