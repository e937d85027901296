//! Experiment configuration tying the modules together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::error::{invalid, Result};
use crate::nn::{Arch, ArchConfig, CellKind, TrainConfig};
use crate::pattern::{RecipeConfig, DEFAULT_L};
use crate::scene::{build_default_array, ArrayGeometry, SceneSamplerConfig, Split};
use crate::stft::StftConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_width: usize,
    pub bilstm_hidden: usize,
    pub unilstm_hidden: usize,
    #[serde(default)]
    pub mask_bound: Option<f64>,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::FilmJnf,
            input_width: 64,
            bilstm_hidden: 256,
            unilstm_hidden: 128,
            mask_bound: None,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 16,
            val: 4,
            test: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub stft: StftConfig,
    pub array: ArrayGeometry,
    pub recipe: RecipeConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub sampler: SceneSamplerConfig,
    pub splits: SplitSizes,
    pub l: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            stft: StftConfig::default(),
            array: build_default_array(),
            recipe: RecipeConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            sampler: SceneSamplerConfig::default(),
            splits: SplitSizes::default(),
            l: DEFAULT_L,
            seed: 0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.array.validate()?;
        self.recipe.validate()?;
        self.train.validate()?;
        if self.stft.sample_rate != self.sampler.sample_rate {
            return Err(invalid(format!(
                "STFT sample rate {} differs from the scene sample rate {}",
                self.stft.sample_rate, self.sampler.sample_rate
            )));
        }
        if self.l < 4 {
            return Err(invalid("pattern vectors need at least 4 samples"));
        }
        self.arch_config().validate()
    }

    /// Network dimensions implied by the array, STFT and pattern settings.
    pub fn arch_config(&self) -> ArchConfig {
        ArchConfig {
            arch: self.model.arch,
            q: self.array.num_mics(),
            l: self.l,
            f: self.stft.bins(),
            input_width: self.model.input_width,
            bilstm_hidden: self.model.bilstm_hidden,
            unilstm_hidden: self.model.unilstm_hidden,
            feature_width: 2 * self.model.bilstm_hidden,
            mask_bound: self.model.mask_bound,
            cell: CellKind::Lstm,
        }
    }

    pub fn dataset(&self, split: Split) -> DatasetConfig {
        let (scenes, salt) = match split {
            Split::Train => (self.splits.train, 1),
            Split::Val => (self.splits.val, 2),
            Split::Test => (self.splits.test, 3),
        };
        DatasetConfig {
            split,
            scenes,
            sampler: self.sampler.clone(),
            recipe: self.recipe.clone(),
            l: self.l,
            seed: crate::dataset::derive_seed(self.seed, &[salt]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let arch = cfg.arch_config();
        assert_eq!((arch.q, arch.l, arch.f, arch.feature_width), (4, 72, 257, 512));
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        // partial files fill in defaults
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
    }

    #[test]
    fn inconsistencies_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.sampler.sample_rate = 8000;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.l = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.train.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
