//! Differentiable effect chains.
//!
//! A chain is an ordered list of effects. Rendering takes a raw (unbounded)
//! parameter vector, maps each coordinate into its effect range and runs the
//! stages in order. [`FxRenderer::forward`] keeps what the adjoint needs so
//! the optimizer can pull a loss gradient back to the raw vector.

pub mod eq;
pub mod params;
pub mod reverb;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use eq::{eq_response, eq_response_db, eq_specs, render_eq, EQ_PARAM_COUNT};
pub use params::{map_params, MappedParams, MappedValue, ParamSpec, RawParams, Scale};
pub use reverb::{reverb_specs, ReverbBands, REVERB_BANDS, REVERB_PARAM_COUNT};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use eq::EqTape;
use reverb::ReverbTape;

/// Reverb noise seed used when none is configured. Recorded in run metadata.
pub const DEFAULT_NOISE_SEED: u64 = 0x7e57_5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Effect {
    #[serde(rename = "parametric_eq")]
    ParametricEq6,
    #[serde(rename = "noise_shaped_reverb")]
    NoiseShapedReverb,
}

impl Effect {
    pub fn name(self) -> &'static str {
        match self {
            Effect::ParametricEq6 => "parametric_eq",
            Effect::NoiseShapedReverb => "noise_shaped_reverb",
        }
    }

    pub fn from_name(name: &str) -> Option<Effect> {
        match name {
            "parametric_eq" => Some(Effect::ParametricEq6),
            "noise_shaped_reverb" => Some(Effect::NoiseShapedReverb),
            _ => None,
        }
    }

    pub fn param_specs(self) -> Vec<ParamSpec> {
        match self {
            Effect::ParametricEq6 => eq_specs(),
            Effect::NoiseShapedReverb => reverb_specs(),
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            Effect::ParametricEq6 => EQ_PARAM_COUNT,
            Effect::NoiseShapedReverb => REVERB_PARAM_COUNT,
        }
    }

    fn short_name(self) -> &'static str {
        match self {
            Effect::ParametricEq6 => "eq",
            Effect::NoiseShapedReverb => "reverb",
        }
    }
}

/// Ordered effect stages. The empty chain is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FxChain {
    stages: Vec<Effect>,
}

impl FxChain {
    pub fn new(stages: Vec<Effect>) -> Self {
        FxChain { stages }
    }

    pub fn eq() -> Self {
        FxChain::new(vec![Effect::ParametricEq6])
    }

    pub fn reverb() -> Self {
        FxChain::new(vec![Effect::NoiseShapedReverb])
    }

    pub fn eq_reverb() -> Self {
        FxChain::new(vec![Effect::ParametricEq6, Effect::NoiseShapedReverb])
    }

    /// The three chains exposed on the command line and over HTTP.
    pub fn named() -> [(&'static str, FxChain); 3] {
        [
            ("eq", FxChain::eq()),
            ("reverb", FxChain::reverb()),
            ("eq-reverb", FxChain::eq_reverb()),
        ]
    }

    pub fn stages(&self) -> &[Effect] {
        &self.stages
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(|e| e.param_count()).sum()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.stages.iter().flat_map(|e| e.param_specs()).collect()
    }

    /// (effect, first raw index) per stage.
    fn layout(&self) -> impl Iterator<Item = (Effect, usize)> + '_ {
        self.stages.iter().scan(0, |offset, &e| {
            let start = *offset;
            *offset += e.param_count();
            Some((e, start))
        })
    }

    /// JSON object key for each stage; repeated effects get `_2`, `_3`, ...
    fn stage_keys(&self) -> Vec<String> {
        let mut seen: HashMap<Effect, usize> = HashMap::new();
        self.stages
            .iter()
            .map(|&e| {
                let count = seen.entry(e).or_insert(0);
                *count += 1;
                if *count == 1 {
                    e.name().to_string()
                } else {
                    format!("{}_{}", e.name(), count)
                }
            })
            .collect()
    }

    /// Schema document listing every parameter of every stage.
    pub fn schema(&self) -> Value {
        let effects: Vec<Value> = self
            .stage_keys()
            .into_iter()
            .zip(&self.stages)
            .map(|(key, e)| json!({ "effect": key, "params": e.param_specs() }))
            .collect();
        json!({ "parameter_count": self.param_count(), "effects": effects })
    }
}

/// Schema for all named chains, keyed by chain name.
pub fn chains_schema() -> Value {
    let mut map = Map::new();
    for (name, chain) in FxChain::named() {
        map.insert(name.to_string(), chain.schema());
    }
    Value::Object(map)
}

impl fmt::Display for FxChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.stages.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.stages.iter().map(|e| e.short_name()).collect();
        f.write_str(&names.join("-"))
    }
}

impl FromStr for FxChain {
    type Err = Error;

    /// Accepts `none` or a `-`-separated list of `eq` / `reverb`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(FxChain::default());
        }
        s.split('-')
            .map(|part| match part {
                "eq" => Ok(Effect::ParametricEq6),
                "reverb" => Ok(Effect::NoiseShapedReverb),
                _ => Err(Error::UnknownChain(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()
            .map(FxChain::new)
    }
}

impl Serialize for FxChain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FxChain {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical JSON: `{effect: {param: {value, unit, min, max}}}` in chain order.
pub fn mapped_to_json(chain: &FxChain, mapped: &MappedParams) -> Result<Value> {
    if mapped.len() != chain.param_count() {
        return Err(Error::ParamLength {
            expected: chain.param_count(),
            got: mapped.len(),
        });
    }
    let mut root = Map::new();
    for (key, (effect, start)) in chain.stage_keys().into_iter().zip(chain.layout()) {
        let mut obj = Map::new();
        for entry in mapped.slice(start, effect.param_count()) {
            obj.insert(
                entry.spec.name.clone(),
                json!({
                    "value": entry.value,
                    "unit": entry.spec.unit,
                    "min": entry.spec.min,
                    "max": entry.spec.max,
                }),
            );
        }
        root.insert(key, Value::Object(obj));
    }
    Ok(Value::Object(root))
}

/// Parses and validates a parameter document, recovering the chain from the
/// effect keys. Errors name the offending field path.
pub fn mapped_from_json(doc: &Value) -> Result<(FxChain, MappedParams)> {
    let schema_err = |field: String, reason: &str| Error::Schema {
        field,
        reason: reason.to_string(),
    };
    let root = doc
        .as_object()
        .ok_or_else(|| schema_err("$".into(), "expected an object of effects"))?;
    let mut stages = Vec::new();
    let mut entries = Vec::new();
    for (key, body) in root {
        let base = match key.rsplit_once('_') {
            Some((head, tail)) if tail.parse::<u32>().is_ok() => head,
            _ => key.as_str(),
        };
        let effect = Effect::from_name(base).ok_or_else(|| schema_err(key.clone(), "unknown effect"))?;
        let obj = body
            .as_object()
            .ok_or_else(|| schema_err(key.clone(), "expected an object of parameters"))?;
        let specs = effect.param_specs();
        for name in obj.keys() {
            if !specs.iter().any(|s| &s.name == name) {
                return Err(schema_err(format!("{key}.{name}"), "unknown parameter"));
            }
        }
        for spec in specs {
            let field = format!("{key}.{}", spec.name);
            let param = obj
                .get(&spec.name)
                .ok_or_else(|| schema_err(field.clone(), "missing parameter"))?;
            let value = param
                .get("value")
                .ok_or_else(|| schema_err(format!("{field}.value"), "missing value"))?
                .as_f64()
                .ok_or_else(|| schema_err(format!("{field}.value"), "expected a number"))?;
            if !spec.contains(value) {
                return Err(Error::Schema {
                    field: format!("{field}.value"),
                    reason: format!("{value} outside [{}, {}]", spec.min, spec.max),
                });
            }
            entries.push(MappedValue { spec, value });
        }
        stages.push(effect);
    }
    Ok((FxChain::new(stages), MappedParams { entries }))
}

enum StageTape {
    Eq(EqTape),
    Reverb(ReverbTape, Arc<ReverbBands>),
}

/// Intermediate state of one chain render, for the adjoint pass.
pub(crate) struct ChainTape {
    output: Vec<f64>,
    stages: Vec<(StageTape, usize, usize)>,
    raw: Vec<f64>,
    specs: Vec<ParamSpec>,
}

impl ChainTape {
    pub(crate) fn output(&self) -> &[f64] {
        &self.output
    }

    /// Gradient of the loss w.r.t. the raw parameters, given its gradient
    /// w.r.t. the rendered output.
    pub(crate) fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut draw = vec![0.0; self.raw.len()];
        let mut g = grad_out.to_vec();
        for (tape, start, count) in self.stages.iter().rev() {
            let (dx, dmapped) = match tape {
                StageTape::Eq(t) => t.backward(&g),
                StageTape::Reverb(t, bands) => t.backward(&g, bands),
            };
            for i in 0..*count {
                let idx = start + i;
                draw[idx] = dmapped[i] * self.specs[idx].map_derivative(self.raw[idx]);
            }
            g = dx;
        }
        draw
    }
}

/// Renders chains. Holds the reverb noise seed and caches the band-split
/// noise per sample rate; otherwise stateless.
#[derive(Debug)]
pub struct FxRenderer {
    noise_seed: u64,
    bands: Mutex<HashMap<u32, Arc<ReverbBands>>>,
}

impl Default for FxRenderer {
    fn default() -> Self {
        FxRenderer::new(DEFAULT_NOISE_SEED)
    }
}

impl FxRenderer {
    pub fn new(noise_seed: u64) -> Self {
        FxRenderer {
            noise_seed,
            bands: Mutex::new(HashMap::new()),
        }
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    pub fn reverb_bands(&self, sample_rate: u32) -> Arc<ReverbBands> {
        let mut cache = self.bands.lock().expect("reverb cache poisoned");
        cache
            .entry(sample_rate)
            .or_insert_with(|| Arc::new(ReverbBands::new(sample_rate, self.noise_seed)))
            .clone()
    }

    pub fn render_chain(&self, audio: &AudioBuffer, raw: &RawParams, chain: &FxChain) -> Result<AudioBuffer> {
        let mapped = map_params(raw, &chain.param_specs())?;
        self.render_mapped(audio, &mapped, chain)
    }

    pub fn render_mapped(&self, audio: &AudioBuffer, mapped: &MappedParams, chain: &FxChain) -> Result<AudioBuffer> {
        if mapped.len() != chain.param_count() {
            return Err(Error::ParamLength {
                expected: chain.param_count(),
                got: mapped.len(),
            });
        }
        let values = mapped.values();
        let sr = audio.sample_rate();
        let mut x = audio.samples().to_vec();
        for (effect, start) in chain.layout() {
            let v = &values[start..start + effect.param_count()];
            x = match effect {
                Effect::ParametricEq6 => EqTape::forward(&x, v, sr as f64).0,
                Effect::NoiseShapedReverb => ReverbTape::forward(&x, v, &self.reverb_bands(sr)).0,
            };
        }
        Ok(audio.with_samples(x))
    }

    pub fn render_reverb(&self, audio: &AudioBuffer, mapped: &[MappedValue]) -> Result<AudioBuffer> {
        if mapped.len() != REVERB_PARAM_COUNT {
            return Err(Error::ParamLength {
                expected: REVERB_PARAM_COUNT,
                got: mapped.len(),
            });
        }
        let values: Vec<f64> = mapped.iter().map(|m| m.value).collect();
        let bands = self.reverb_bands(audio.sample_rate());
        let (y, _) = ReverbTape::forward(audio.samples(), &values, &bands);
        Ok(audio.with_samples(y))
    }

    pub(crate) fn forward(&self, audio: &AudioBuffer, raw: &RawParams, chain: &FxChain) -> Result<ChainTape> {
        let specs = chain.param_specs();
        let mapped = map_params(raw, &specs)?.values();
        let sr = audio.sample_rate();
        let mut x = audio.samples().to_vec();
        let mut stages = Vec::with_capacity(chain.stages.len());
        for (effect, start) in chain.layout() {
            let count = effect.param_count();
            let v = &mapped[start..start + count];
            let (y, tape) = match effect {
                Effect::ParametricEq6 => {
                    let (y, t) = EqTape::forward(&x, v, sr as f64);
                    (y, StageTape::Eq(t))
                }
                Effect::NoiseShapedReverb => {
                    let bands = self.reverb_bands(sr);
                    let (y, t) = ReverbTape::forward(&x, v, &bands);
                    (y, StageTape::Reverb(t, bands))
                }
            };
            stages.push((tape, start, count));
            x = y;
        }
        Ok(ChainTape {
            output: x,
            stages,
            raw: raw.as_slice().to_vec(),
            specs,
        })
    }
}

/// Reverb render with an explicit noise seed.
pub fn render_reverb(audio: &AudioBuffer, mapped: &[MappedValue], noise_seed: u64) -> Result<AudioBuffer> {
    FxRenderer::new(noise_seed).render_reverb(audio, mapped)
}
