//! Study configuration file (TOML).
//!
//! One document describes one study: raw data paths per language, the
//! sampling protocol, translation provider settings, and the manifest
//! list. Manifest entries may carry expansion fields (`k_grid`,
//! `incremental_sources`) that the run command unfolds into concrete
//! manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use crosscheck_core::adversarial::AdvConfig;
use crosscheck_core::classifier::Hyperparams;
use crosscheck_core::corpus::{SamplingSpec, TsvSchema};
use crosscheck_core::experiments::{
    expand_incremental_sources, expand_k_grid, ExperimentManifest, PoolMode, Setup,
    DEFAULT_SEEDS, DEFAULT_SHOT_SEED,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub schema: SchemaConfig,
    #[serde(default)]
    pub languages: BTreeMap<String, LanguageConfig>,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub sampling_overrides: BTreeMap<String, SamplingConfig>,
    #[serde(default)]
    pub translation: TranslationConfig,
    #[serde(default)]
    pub study: StudyProtocol,
    #[serde(default)]
    pub manifests: Vec<ManifestEntry>,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub text_column: Option<String>,
    pub label_column: Option<String>,
    /// Explicit `id_column = ""` disables the id column.
    pub id_column: Option<String>,
}

impl SchemaConfig {
    pub fn to_tsv_schema(&self) -> TsvSchema {
        let default = TsvSchema::default();
        TsvSchema {
            text_column: self.text_column.clone().unwrap_or(default.text_column),
            label_column: self.label_column.clone().unwrap_or(default.label_column),
            id_column: match &self.id_column {
                Some(s) if s.is_empty() => None,
                Some(s) => Some(s.clone()),
                None => default.id_column,
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    pub train_tsv: PathBuf,
    pub dev_tsv: Option<PathBuf>,
    pub test_tsv: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_positive: usize,
    pub n_negative: usize,
    #[serde(default = "default_sampling_seed")]
    pub seed: u64,
}

fn default_sampling_seed() -> u64 {
    7
}

impl SamplingConfig {
    pub fn to_spec(&self) -> SamplingSpec {
        SamplingSpec { n_positive: self.n_positive, n_negative: self.n_negative, seed: self.seed }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationConfig {
    /// none | dictionary | replay | http
    #[serde(default)]
    pub provider: ProviderKind,
    pub dictionary_path: Option<PathBuf>,
    /// Cache file; defaults to `{output_dir}/translation-cache.jsonl`.
    pub cache_path: Option<PathBuf>,
    /// Provider name whose records a replay provider serves.
    pub replay_provider_name: Option<String>,
    pub endpoint: Option<String>,
    /// Environment variable holding the Authorization header value.
    pub auth_env: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    None,
    Dictionary,
    Replay,
    Http,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyProtocol {
    #[serde(default = "default_seed_list")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_shot_seed")]
    pub shot_seed: u64,
    /// Optional repeat count over shot-sampling seeds (default 1); repeats
    /// run with shot_seed + i and ids suffixed `-shots{i}`.
    #[serde(default = "default_shot_repeats")]
    pub shot_repeats: u64,
    /// Base hyperparameters every manifest starts from.
    #[serde(default)]
    pub hyperparams: Hyperparams,
}

impl Default for StudyProtocol {
    fn default() -> Self {
        Self {
            seeds: default_seed_list(),
            shot_seed: DEFAULT_SHOT_SEED,
            shot_repeats: 1,
            hyperparams: Hyperparams::default(),
        }
    }
}

fn default_seed_list() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_shot_seed() -> u64 {
    DEFAULT_SHOT_SEED
}

fn default_shot_repeats() -> u64 {
    1
}

/// Partial hyperparameters: unset fields inherit the study baseline.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamsPatch {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_sequence_length: Option<usize>,
    pub epochs: Option<usize>,
    pub hidden_units: Option<usize>,
    pub threshold: Option<f64>,
    pub pool_special_tokens: Option<bool>,
}

impl HyperparamsPatch {
    fn apply(&self, base: &Hyperparams) -> Hyperparams {
        Hyperparams {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            max_sequence_length: self.max_sequence_length.unwrap_or(base.max_sequence_length),
            epochs: self.epochs.unwrap_or(base.epochs),
            hidden_units: self.hidden_units.unwrap_or(base.hidden_units),
            threshold: self.threshold.unwrap_or(base.threshold),
            seed: base.seed,
            pool_special_tokens: self.pool_special_tokens.unwrap_or(base.pool_special_tokens),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub setup: Setup,
    pub source_languages: Vec<String>,
    pub target_language: String,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub hyperparams: HyperparamsPatch,
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub allow_seed_override: bool,
    pub few_shot_k: Option<usize>,
    /// Few-shot sweep: expands into one manifest per k.
    pub k_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub positive_majority_shots: bool,
    pub adv: Option<AdvConfig>,
    #[serde(default)]
    pub pool_mode: PoolMode,
    /// Incremental source-language study: expands into one manifest per
    /// non-empty subset of the sources.
    #[serde(default)]
    pub incremental_sources: bool,
    /// Per-manifest sampling override (defaults to the study sampling).
    pub sampling: Option<SamplingConfig>,
}

fn default_backend() -> String {
    "reference-v1".into()
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: StudyConfig = toml::from_str(&text).context("parsing study config")?;
        Ok(config)
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.output_dir.join("prepared")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.output_dir.join("results")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }

    pub fn translated_dir(&self) -> PathBuf {
        self.output_dir.join("translated")
    }

    pub fn cache_path(&self) -> PathBuf {
        self.translation
            .cache_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("translation-cache.jsonl"))
    }

    pub fn sampling_for(&self, language: &str) -> SamplingSpec {
        self.sampling_overrides
            .get(language)
            .map(SamplingConfig::to_spec)
            .unwrap_or_else(|| self.sampling.to_spec())
    }

    /// Unfolds the manifest entries into concrete experiment manifests.
    pub fn expand_manifests(&self) -> Result<Vec<ExperimentManifest>> {
        let mut out = Vec::new();
        for entry in &self.manifests {
            if entry.k_grid.is_some() && entry.setup != Setup::Fs {
                bail!("manifest {}: k_grid is only valid for fs", entry.id);
            }
            if entry.k_grid.is_some() && entry.few_shot_k.is_some() {
                bail!("manifest {}: give either few_shot_k or k_grid, not both", entry.id);
            }
            if entry.incremental_sources && entry.setup != Setup::MultiZs {
                bail!("manifest {}: incremental_sources is only valid for multi_zs", entry.id);
            }
            let seeds = entry.seeds.clone().unwrap_or_else(|| self.study.seeds.clone());
            let base = ExperimentManifest {
                id: entry.id.clone(),
                setup: entry.setup,
                source_languages: entry.source_languages.clone(),
                target_language: entry.target_language.clone(),
                backend_name: entry.backend.clone(),
                hyperparams: entry.hyperparams.apply(&self.study.hyperparams),
                seeds,
                allow_seed_override: entry.allow_seed_override,
                few_shot_k: entry.few_shot_k,
                shot_seed: self.study.shot_seed,
                positive_majority_shots: entry.positive_majority_shots,
                adv: entry.adv.clone(),
                sampling: entry
                    .sampling
                    .as_ref()
                    .map(SamplingConfig::to_spec)
                    .unwrap_or_else(|| self.sampling.to_spec()),
                pool_mode: entry.pool_mode,
                allow_single_source: false,
            };
            let mut expanded = if let Some(ks) = &entry.k_grid {
                expand_k_grid(&base, ks)
            } else if entry.incremental_sources {
                expand_incremental_sources(&base)
            } else {
                vec![base]
            };
            // Few-shot repeat expansion over shot seeds.
            if entry.setup == Setup::Fs && self.study.shot_repeats > 1 {
                let mut repeated = Vec::new();
                for m in expanded {
                    for r in 0..self.study.shot_repeats {
                        let mut m2 = m.clone();
                        if r > 0 {
                            m2.id = format!("{}-shots{r}", m.id);
                            m2.shot_seed = self.study.shot_seed + r;
                        }
                        repeated.push(m2);
                    }
                }
                expanded = repeated;
            }
            out.extend(expanded);
        }
        let mut ids: Vec<&str> = out.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != out.len() {
            bail!("manifest ids must be unique after expansion");
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"

[sampling]
n_positive = 300
n_negative = 1400

[languages.ar]
train_tsv = "raw/ar/train.tsv"
dev_tsv = "raw/ar/dev.tsv"
test_tsv = "raw/ar/test.tsv"

[sampling_overrides.en]
n_positive = 300
n_negative = 612

[[manifests]]
id = "zs-ar-tr"
setup = "zs"
source_languages = ["ar"]
target_language = "tr"

[[manifests]]
id = "fs-ar-tr"
setup = "fs"
source_languages = ["ar"]
target_language = "tr"
k_grid = [2, 4, 8]
[manifests.hyperparams]
epochs = 5
"#;

    #[test]
    fn parses_and_expands() {
        let config: StudyConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(config.sampling_for("en").n_negative, 612);
        assert_eq!(config.sampling_for("ar").n_negative, 1400);
        let manifests = config.expand_manifests().unwrap();
        assert_eq!(manifests.len(), 4); // 1 zs + 3 fs grid points
        assert_eq!(manifests[0].seeds, DEFAULT_SEEDS.to_vec());
        assert_eq!(manifests[1].id, "fs-ar-tr-k2");
        assert_eq!(manifests[1].hyperparams.epochs, 5);
        assert_eq!(manifests[0].hyperparams.epochs, 3); // study default
        for m in &manifests {
            m.validate().unwrap();
        }
    }

    #[test]
    fn rejects_conflicting_expansion_fields() {
        let bad = MINIMAL.replace("k_grid = [2, 4, 8]", "k_grid = [2]\nfew_shot_k = 3");
        let config: StudyConfig = toml::from_str(&bad).unwrap();
        assert!(config.expand_manifests().is_err());
    }

    #[test]
    fn shot_repeats_expand_with_distinct_seeds() {
        let with_repeats = MINIMAL.replace(
            "[sampling]",
            "[study]\nshot_repeats = 3\n\n[sampling]",
        );
        let config: StudyConfig = toml::from_str(&with_repeats).unwrap();
        let manifests = config.expand_manifests().unwrap();
        let fs: Vec<_> = manifests.iter().filter(|m| m.setup == Setup::Fs).collect();
        assert_eq!(fs.len(), 9); // 3 k values × 3 shot seeds
        assert!(fs.iter().any(|m| m.id == "fs-ar-tr-k2-shots2"));
        let base = fs.iter().find(|m| m.id == "fs-ar-tr-k2").unwrap();
        let rep = fs.iter().find(|m| m.id == "fs-ar-tr-k2-shots2").unwrap();
        assert_eq!(rep.shot_seed, base.shot_seed + 2);
    }
}
