//! Embedding-space objectives.
//!
//! `cosine_loss` pulls the effected-audio embedding toward the prompt
//! embedding. `directional_loss` instead aligns the displacement of the audio
//! embedding (effected minus input) with the displacement between the
//! contrast and target prompt embeddings.

use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};

pub const DIRECTIONAL_EPS: f64 = 1e-8;

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(a, b));
    }
    Ok(())
}

/// `1 - <audio, text>`, in [0, 2] for unit vectors.
pub fn cosine_loss(audio: &Embedding, text: &Embedding) -> Result<f64> {
    Ok(1.0 - audio.dot(text)?)
}

/// Loss and its gradient w.r.t. the audio embedding.
pub fn cosine_loss_grad(audio: &Embedding, text: &Embedding) -> Result<(f64, Vec<f64>)> {
    let loss = cosine_loss(audio, text)?;
    Ok((loss, text.values().iter().map(|t| -t).collect()))
}

fn delta(a: &Embedding, b: &Embedding) -> Result<Vec<f64>> {
    same_dim(a.dim(), b.dim())?;
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect())
}

/// Text displacement `t2 - t1`; errors when the two prompts coincide.
pub fn text_direction(contrast: &Embedding, target: &Embedding) -> Result<Vec<f64>> {
    let d = delta(target, contrast)?;
    if dot(&d, &d).sqrt() < DIRECTIONAL_EPS {
        return Err(Error::DegeneratePromptPair);
    }
    Ok(d)
}

/// `1 - <dA, dT> / (|dA| |dT| + eps)` for precomputed displacements.
pub fn directional_loss_from_deltas(delta_audio: &[f64], delta_text: &[f64]) -> Result<f64> {
    Ok(directional_parts(delta_audio, delta_text)?.0)
}

/// Returns (loss, d loss / d delta_audio).
pub fn directional_loss_grad_from_deltas(delta_audio: &[f64], delta_text: &[f64]) -> Result<(f64, Vec<f64>)> {
    directional_parts(delta_audio, delta_text)
}

// dT is normalized first and eps guards |dA| only, so scaling dT changes
// nothing. Equals the textbook form with eps replaced by eps * |dT|.
fn directional_parts(da: &[f64], dt: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_dim(da.len(), dt.len())?;
    let norm_t = dot(dt, dt).sqrt();
    if norm_t < DIRECTIONAL_EPS {
        return Err(Error::DegeneratePromptPair);
    }
    let u: Vec<f64> = dt.iter().map(|t| t / norm_t).collect();
    let norm_a = dot(da, da).sqrt();
    let inner = dot(da, &u);
    let denom = norm_a + DIRECTIONAL_EPS;
    let loss = 1.0 - inner / denom;
    let radial = if norm_a > 0.0 {
        inner / (norm_a * denom * denom)
    } else {
        0.0
    };
    let grad = da
        .iter()
        .zip(&u)
        .map(|(a, u)| -u / denom + radial * a)
        .collect();
    Ok((loss, grad))
}

/// A1 input audio, A2 effected audio, T1 contrast prompt, T2 target prompt.
pub fn directional_loss(a1: &Embedding, a2: &Embedding, t1: &Embedding, t2: &Embedding) -> Result<f64> {
    let dt = text_direction(t1, t2)?;
    let da = delta(a2, a1)?;
    directional_loss_from_deltas(&da, &dt)
}
