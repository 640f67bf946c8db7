//! Experiment configuration: one versioned JSON document naming the corpus,
//! noise, training, and metric settings, plus a content hash for report
//! provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use denoise_core::io::SplitMode;
use denoise_core::metrics::SsimConfig;
use denoise_core::noise::{preset_by_index, NoiseSpec};
use denoise_core::training::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CorpusSource {
    /// Procedural phantoms, no files required.
    Synthetic { count: usize },
    /// Every .pgm/.png file under one directory, sorted by name.
    Directory { root: PathBuf },
    /// A `path<TAB>tag` manifest file; paths resolve relative to it.
    Manifest { path: PathBuf },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic { count: 400 }
    }
}

/// Either a Table 1 preset index (0..=5, or 6 for the sigma-10 variant)
/// or a full inline noise spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSelection {
    Preset { preset: usize },
    Inline(NoiseSpec),
}

impl Default for NoiseSelection {
    fn default() -> Self {
        NoiseSelection::Preset { preset: 0 }
    }
}

impl NoiseSelection {
    pub fn resolve(&self) -> Result<NoiseSpec, String> {
        match self {
            NoiseSelection::Preset { preset } => {
                preset_by_index(*preset).map_err(|e| e.to_string())
            }
            NoiseSelection::Inline(spec) => {
                spec.validate().map_err(|e| e.to_string())?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub corpus: CorpusSource,
    pub noise: NoiseSelection,
    pub train: TrainConfig,
    pub metric: SsimConfig,
    pub split: SplitMode,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            corpus: CorpusSource::default(),
            noise: NoiseSelection::default(),
            train: TrainConfig::default(),
            metric: SsimConfig::default(),
            split: SplitMode::Combined,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!(
                "config schema version {} unsupported, this build reads version {}",
                self.schema_version, CONFIG_SCHEMA_VERSION
            ));
        }
        if let CorpusSource::Synthetic { count } = self.corpus {
            if count == 0 {
                return Err("synthetic corpus count must be at least 1".into());
            }
        }
        self.noise.resolve()?;
        self.metric.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| format!("config parse: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("config {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form with `out_dir` blanked, so the
    /// same experiment hashed from different output locations agrees.
    pub fn content_hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.out_dir = PathBuf::new();
        let canon = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
