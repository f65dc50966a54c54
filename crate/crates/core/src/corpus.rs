//! Evaluation prompts, the four listening-test conditions, and a batch
//! runner over (audio, prompt, chain) grids.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::audio::{load_audio, resample, save_audio, AudioBuffer, BitDepth};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::fx::{map_params, mapped_to_json, FxChain, FxRenderer, RawParams};
use crate::optimizer::{
    build_prompts, init_params, optimize, OptimizationConfig, OptimizationResult, Variant,
};

pub const CORPUS_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptCategory {
    SingleConcrete,
    SingleAbstract,
    MultiCombination,
    MultiImagery,
}

impl PromptCategory {
    pub fn is_single(self) -> bool {
        matches!(self, PromptCategory::SingleConcrete | PromptCategory::SingleAbstract)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusEntry {
    pub chain: &'static str,
    pub category: PromptCategory,
    pub text: &'static str,
}

use PromptCategory::*;

const EQ_PROMPTS: &[(PromptCategory, &str)] = &[
    (SingleConcrete, "tinny"),
    (SingleConcrete, "muffled"),
    (SingleConcrete, "light"),
    (SingleConcrete, "deep"),
    (SingleConcrete, "crisp"),
    (SingleConcrete, "bright"),
    (SingleConcrete, "mellow"),
    (SingleAbstract, "ethereal"),
    (SingleAbstract, "eerie"),
    (SingleAbstract, "grand"),
    (MultiCombination, "soft yet vibrant"),
    (MultiCombination, "in-your-face and bold"),
    (MultiCombination, "shrill and sharp"),
    (MultiCombination, "quiet and gentle"),
    (MultiCombination, "cool and smooth"),
    (MultiImagery, "coming through an old telephone"),
    (MultiImagery, "coming from a speaker under a blanket"),
    (MultiImagery, "booming like a thunderstorm"),
    (MultiImagery, "delivered with a softer feel"),
    (MultiImagery, "like a hazy surreal dream"),
];

// Printed with "dry" twice; kept as printed.
const REVERB_PROMPTS: &[(PromptCategory, &str)] = &[
    (SingleConcrete, "boomy"),
    (SingleConcrete, "spacious"),
    (SingleConcrete, "dry"),
    (SingleConcrete, "cavernous"),
    (SingleConcrete, "echoey"),
    (SingleConcrete, "underwater"),
    (SingleConcrete, "dry"),
    (SingleConcrete, "reverberant"),
    (SingleAbstract, "empty"),
    (SingleAbstract, "long"),
    (SingleAbstract, "bold"),
    (MultiCombination, "booming and vast"),
    (MultiCombination, "clear but distant"),
    (MultiCombination, "cozy and enveloping"),
    (MultiCombination, "heavy and dramatic"),
    (MultiCombination, "hollow and far-away"),
    (MultiImagery, "coming from a cathedral"),
    (MultiImagery, "coming from a long hallway"),
    (MultiImagery, "coming from a small and intimate sound booth"),
    (MultiImagery, "like an explosion in a canyon"),
    (MultiImagery, "accompanied by a faint atmospheric haze in the background"),
];

const EQ_REVERB_PROMPTS: &[(PromptCategory, &str)] = &[
    (SingleConcrete, "metallic"),
    (SingleConcrete, "harsh"),
    (SingleConcrete, "cold"),
    (SingleConcrete, "blaring"),
    (SingleConcrete, "bassy"),
    (SingleConcrete, "grainy"),
    (SingleConcrete, "breezy"),
    (SingleAbstract, "dramatic"),
    (SingleAbstract, "fluffy"),
    (SingleAbstract, "powerful"),
    (MultiCombination, "barren and detached"),
    (MultiCombination, "warm and full-bodied"),
    (MultiCombination, "vibrant and powerful"),
    (MultiCombination, "resonant and harmonious"),
    (MultiCombination, "high and tinny"),
    (MultiImagery, "coming from a small cavern with a muffled echo"),
    (MultiImagery, "coming from underwater in a swimming pool"),
    (MultiImagery, "coming from a broken speaker in an empty warehouse"),
    (MultiImagery, "like a shrill Victorian ghost"),
    (MultiImagery, "like a distant radio broadcast with a warm lingering presence"),
];

#[derive(Debug, Clone)]
pub struct PromptCorpus {
    printed: Vec<CorpusEntry>,
}

pub fn load_prompt_corpus() -> PromptCorpus {
    let tables = [
        ("eq", EQ_PROMPTS),
        ("reverb", REVERB_PROMPTS),
        ("eq-reverb", EQ_REVERB_PROMPTS),
    ];
    let printed = tables
        .iter()
        .flat_map(|&(chain, rows)| {
            rows.iter().map(move |&(category, text)| CorpusEntry {
                chain,
                category,
                text,
            })
        })
        .collect();
    PromptCorpus { printed }
}

impl PromptCorpus {
    pub fn version(&self) -> &'static str {
        CORPUS_VERSION
    }

    pub fn chains(&self) -> [&'static str; 3] {
        ["eq", "reverb", "eq-reverb"]
    }

    /// Rows exactly as printed, duplicates included.
    pub fn printed(&self) -> &[CorpusEntry] {
        &self.printed
    }

    /// Unique prompts for one chain, first occurrence kept.
    pub fn for_chain(&self, chain: &str) -> Vec<CorpusEntry> {
        let mut seen = BTreeSet::new();
        self.printed
            .iter()
            .filter(|e| e.chain == chain && seen.insert(e.text))
            .copied()
            .collect()
    }

    /// Deduplicated view across all chains.
    pub fn entries(&self) -> Vec<CorpusEntry> {
        self.chains().iter().flat_map(|c| self.for_chain(c)).collect()
    }

    pub fn contains(&self, chain: &str, text: &str) -> bool {
        self.printed.iter().any(|e| e.chain == chain && e.text == text)
    }
}

#[derive(Debug, Clone)]
pub struct ConditionSet {
    pub cosine: OptimizationResult,
    pub directional: OptimizationResult,
    pub random: (RawParams, AudioBuffer),
    pub nofx: AudioBuffer,
}

/// Stream id separating random-condition draws from optimizer draws.
const RANDOM_STREAM: u64 = 0x52414e44;

pub fn random_condition(
    audio: &AudioBuffer,
    chain: &FxChain,
    seed: u64,
    renderer: &FxRenderer,
) -> Result<(RawParams, AudioBuffer)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RANDOM_STREAM);
    let raw = RawParams::new(init_params(chain.param_count(), &mut rng))?;
    let out = renderer.render_chain(audio, &raw, chain)?;
    Ok((raw, out))
}

pub fn generate_conditions(
    audio: &AudioBuffer,
    prompt: &str,
    chain: &FxChain,
    config: &OptimizationConfig,
    embedder: &Embedder,
    renderer: &FxRenderer,
) -> Result<ConditionSet> {
    let prompts = build_prompts(prompt, None)?;
    let with = |variant| OptimizationConfig {
        variant,
        ..config.clone()
    };
    Ok(ConditionSet {
        cosine: optimize(audio, &prompts, chain, &with(Variant::Cosine), embedder, renderer)?,
        directional: optimize(audio, &prompts, chain, &with(Variant::Directional), embedder, renderer)?,
        random: random_condition(audio, chain, config.seed, renderer)?,
        nofx: audio.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Cosine,
    Directional,
    Random,
    Nofx,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Cosine,
        Condition::Directional,
        Condition::Random,
        Condition::Nofx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Cosine => "cosine",
            Condition::Directional => "directional",
            Condition::Random => "random",
            Condition::Nofx => "nofx",
        }
    }

    fn parse_list(s: &str) -> Result<Vec<Condition>> {
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(Condition::ALL.to_vec());
        }
        let mut out = BTreeSet::new();
        for part in s.split([';', '|', ' ']).filter(|p| !p.is_empty()) {
            let c = Condition::ALL
                .into_iter()
                .find(|c| c.name() == part)
                .ok_or_else(|| Error::Manifest(format!("unknown variant `{part}`")))?;
            out.insert(c);
        }
        Ok(out.into_iter().collect())
    }
}

/// One manifest row. `variants` is a `;`-separated subset of
/// cosine/directional/random/nofx, or `all`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub audio_path: String,
    pub prompt: String,
    pub chain: String,
    #[serde(default)]
    pub variants: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display()))))
        .collect()
}

/// Every corpus prompt against every audio file, all four conditions.
pub fn corpus_manifest(corpus: &PromptCorpus, audio_paths: &[String]) -> Vec<ManifestRow> {
    let mut rows = Vec::new();
    for chain in corpus.chains() {
        for audio in audio_paths {
            for entry in corpus.for_chain(chain) {
                rows.push(ManifestRow {
                    audio_path: audio.clone(),
                    prompt: entry.text.to_string(),
                    chain: chain.to_string(),
                    variants: "all".into(),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub cell_id: String,
    pub status: String,
    pub audio_path: String,
    pub prompt: String,
    pub chain: String,
    pub variants: String,
    pub final_loss_cosine: Option<f64>,
    pub final_loss_directional: Option<f64>,
    pub output_dir: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub workers: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub index_path: PathBuf,
    pub rows: Vec<IndexRow>,
}

impl BatchSummary {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.status == "failed").count()
    }
}

pub const INDEX_FILE: &str = "index.csv";
const DONE_FILE: &str = "cell.json";

/// Content hash of everything that determines a cell's outputs.
pub fn cell_id(row: &ManifestRow, config: &OptimizationConfig, backend: &str, noise_seed: u64) -> String {
    let mut h = Sha256::new();
    let key = json!({
        "audio_path": row.audio_path,
        "prompt": row.prompt,
        "chain": row.chain,
        "variants": row.variants,
        "config": config,
        "backend": backend,
        "noise_seed": noise_seed,
    });
    h.update(key.to_string().as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Runs every manifest row into `out_dir/cells/<cell id>/` and writes
/// `out_dir/index.csv`. Completed cells are skipped on rerun; failed rows are
/// recorded and retried next time.
pub fn run_batch(
    rows: &[ManifestRow],
    out_dir: impl AsRef<Path>,
    config: &OptimizationConfig,
    options: &BatchOptions,
    embedder: &Embedder,
    renderer: &FxRenderer,
) -> Result<BatchSummary> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("cells")).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let index: Vec<IndexRow> = pool.install(|| {
        rows.par_iter()
            .map(|row| {
                let id = cell_id(row, config, &embedder.descriptor().name, renderer.noise_seed());
                let rel = format!("cells/{id}");
                let base = IndexRow {
                    cell_id: id,
                    status: "done".into(),
                    audio_path: row.audio_path.clone(),
                    prompt: row.prompt.clone(),
                    chain: row.chain.clone(),
                    variants: row.variants.clone(),
                    final_loss_cosine: None,
                    final_loss_directional: None,
                    output_dir: rel.clone(),
                    error: String::new(),
                };
                match run_cell(row, &out_dir.join(&rel), config, embedder, renderer) {
                    Ok((cos, dir)) => IndexRow {
                        final_loss_cosine: cos,
                        final_loss_directional: dir,
                        ..base
                    },
                    Err(e) => {
                        log::warn!("cell {} failed: {e}", base.cell_id);
                        IndexRow {
                            status: "failed".into(),
                            error: e.to_string(),
                            ..base
                        }
                    }
                }
            })
            .collect()
    });

    let index_path = out_dir.join(INDEX_FILE);
    let tmp = out_dir.join(format!("{INDEX_FILE}.tmp"));
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for row in &index {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, &index_path).map_err(|e| Error::io(&index_path, e))?;
    Ok(BatchSummary {
        index_path,
        rows: index,
    })
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    row: ManifestRow,
    final_loss_cosine: Option<f64>,
    final_loss_directional: Option<f64>,
}

type CellLosses = (Option<f64>, Option<f64>);

fn run_cell(
    row: &ManifestRow,
    dir: &Path,
    config: &OptimizationConfig,
    embedder: &Embedder,
    renderer: &FxRenderer,
) -> Result<CellLosses> {
    let done = dir.join(DONE_FILE);
    if let Ok(text) = fs::read_to_string(&done) {
        if let Ok(rec) = serde_json::from_str::<CellRecord>(&text) {
            return Ok((rec.final_loss_cosine, rec.final_loss_directional));
        }
    }
    let chain: FxChain = row.chain.parse()?;
    let conditions = Condition::parse_list(&row.variants)?;
    let prompts = build_prompts(&row.prompt, None)?;
    let audio = load_audio(&row.audio_path)?;
    let audio = resample(&audio, embedder.descriptor().input_sample_rate)?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_json = |name: &str, value: &serde_json::Value| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&path, e))
    };

    let mut losses = (None, None);
    for cond in conditions {
        let name = cond.name();
        match cond {
            Condition::Cosine | Condition::Directional => {
                let variant = if cond == Condition::Cosine {
                    Variant::Cosine
                } else {
                    Variant::Directional
                };
                let cfg = OptimizationConfig {
                    variant,
                    ..config.clone()
                };
                let result = optimize(&audio, &prompts, &chain, &cfg, embedder, renderer)?;
                save_audio(&result.effected_audio, dir.join(format!("{name}.wav")), BitDepth::Float32)?;
                write_json(&format!("{name}_params.json"), &result.params_json()?)?;
                write_json(&format!("{name}_meta.json"), &result.run_meta())?;
                let csv_path = dir.join(format!("{name}_losses.csv"));
                let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
                result.write_loss_csv(file)?;
                let best = Some(result.final_losses()[result.chosen_run]);
                if variant == Variant::Cosine {
                    losses.0 = best;
                } else {
                    losses.1 = best;
                }
            }
            Condition::Random => {
                let (raw, out) = random_condition(&audio, &chain, config.seed, renderer)?;
                save_audio(&out, dir.join("random.wav"), BitDepth::Float32)?;
                let mapped = map_params(&raw, &chain.param_specs())?;
                write_json("random_params.json", &mapped_to_json(&chain, &mapped)?)?;
            }
            Condition::Nofx => {
                save_audio(&audio, dir.join("nofx.wav"), BitDepth::Float32)?;
            }
        }
    }
    let record = CellRecord {
        row: row.clone(),
        final_loss_cosine: losses.0,
        final_loss_directional: losses.1,
    };
    let tmp = dir.join(format!("{DONE_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&record)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &done).map_err(|e| Error::io(&done, e))?;
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_per_chain() {
        let c = load_prompt_corpus();
        for chain in c.chains() {
            let rows = c.for_chain(chain);
            assert_eq!(rows.len(), 20, "{chain}");
            assert_eq!(rows.iter().filter(|e| e.category.is_single()).count(), 10);
            assert_eq!(rows.iter().filter(|e| e.category == SingleConcrete).count(), 7);
            assert_eq!(rows.iter().filter(|e| e.category == SingleAbstract).count(), 3);
            assert_eq!(rows.iter().filter(|e| e.category == MultiCombination).count(), 5);
            assert_eq!(rows.iter().filter(|e| e.category == MultiImagery).count(), 5);
        }
        assert_eq!(c.entries().len(), 60);
    }

    #[test]
    fn printed_reverb_row_keeps_duplicate() {
        let c = load_prompt_corpus();
        let dry = c
            .printed()
            .iter()
            .filter(|e| e.chain == "reverb" && e.text == "dry")
            .count();
        assert_eq!(dry, 2);
        assert_eq!(c.printed().len(), 61);
    }

    #[test]
    fn spot_checks() {
        let c = load_prompt_corpus();
        assert!(c.contains("eq", "tinny"));
        assert!(c.contains("eq", "muffled"));
        assert!(c.contains("reverb", "coming from a cathedral"));
        assert!(c.contains("eq-reverb", "like a shrill Victorian ghost"));
    }

    #[test]
    fn variant_lists() {
        assert_eq!(Condition::parse_list("").unwrap(), Condition::ALL);
        assert_eq!(
            Condition::parse_list("nofx;cosine").unwrap(),
            [Condition::Cosine, Condition::Nofx]
        );
        assert!(Condition::parse_list("flanger").is_err());
    }

    #[test]
    fn cell_ids_depend_on_config() {
        let row = ManifestRow {
            audio_path: "a.wav".into(),
            prompt: "warm".into(),
            chain: "eq".into(),
            variants: "all".into(),
        };
        let c = OptimizationConfig::default();
        let a = cell_id(&row, &c, "surrogate", 1);
        assert_eq!(a, cell_id(&row, &c, "surrogate", 1));
        assert_ne!(a, cell_id(&row, &OptimizationConfig { seed: 9, ..c.clone() }, "surrogate", 1));
        assert_eq!(a.len(), 16);
    }
}
