use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::attacks::{AttackKind, DEFAULT_ALPHA};
use crate::data::{Aggregation, FeatureSelection, SynthKind};
use crate::defenses::{DaatConfig, LpatConfig};
use crate::models::{ModelKind, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    /// Walk-forward folds; 0 trains once on the train split.
    #[serde(default)]
    pub cv_folds: usize,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Its `seed` is ignored; training seeds derive from the experiment seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attacks: AttackGrid,
    #[serde(default)]
    pub defenses: DefenseSettings,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Semicolon-separated household power file.
    Electricity { path: PathBuf },
    /// Directory of daily Backblaze CSV files.
    Hdd {
        dir: PathBuf,
        #[serde(default = "default_drive_model")]
        drive_model: String,
        /// RUL labeling horizon; defaults to the look-back.
        #[serde(default)]
        horizon: Option<u32>,
    },
    Synthetic {
        synth: SynthKind,
        /// RUL horizon for degradation surrogates; defaults to the look-back.
        #[serde(default)]
        horizon: Option<u32>,
    },
}

fn default_drive_model() -> String {
    "ST4000DM000".into()
}

impl DatasetConfig {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Electricity { .. } => "electricity",
            Self::Hdd { .. } => "hdd",
            Self::Synthetic {
                synth: SynthKind::Seasonal(_),
                ..
            } => "synthetic-seasonal",
            Self::Synthetic {
                synth: SynthKind::Degradation(_),
                ..
            } => "synthetic-degradation",
        }
    }

    /// Whether the data is per-drive RUL sequences.
    pub fn is_rul(&self) -> bool {
        matches!(
            self,
            Self::Hdd { .. }
                | Self::Synthetic {
                    synth: SynthKind::Degradation(_),
                    ..
                }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub impute: bool,
    /// Daily resampling of the electricity file.
    pub resample: Option<Aggregation>,
    /// Min-max range; RUL data scales features only and defaults to `[0, 255]`.
    pub normalize: Option<(f64, f64)>,
    pub select_features: Option<FeatureSelection>,
    pub min_coverage: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            impute: true,
            resample: Some(Aggregation::Mean),
            normalize: None,
            select_features: None,
            min_coverage: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lookback: usize,
    #[serde(default = "default_units")]
    pub hidden: usize,
    #[serde(default = "default_units")]
    pub relu_units: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_units() -> usize {
    100
}

fn default_dropout() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackGrid {
    pub kinds: Vec<AttackKind>,
    pub epsilons: Vec<f64>,
    pub alpha: f64,
    pub iterations: Option<usize>,
    pub clamp: Option<(f64, f64)>,
    /// Write clean/perturbed CSV pairs for every grid cell.
    pub write_batches: bool,
}

impl Default for AttackGrid {
    fn default() -> Self {
        Self {
            kinds: vec![AttackKind::Fgsm, AttackKind::Bim],
            epsilons: vec![0.05, 0.1, 0.15, 0.2, 0.25],
            alpha: DEFAULT_ALPHA,
            iterations: None,
            clamp: None,
            write_batches: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSettings {
    pub daat: Vec<DaatConfig>,
    pub lpat: Vec<LpatConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lookbacks: Vec<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    /// Makes relative dataset paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Electricity { path } => fix(path),
            DatasetConfig::Hdd { dir, .. } => fix(dir),
            DatasetConfig::Synthetic { .. } => {}
        }
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string_pretty(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        match &self.dataset {
            DatasetConfig::Electricity { path } if !path.is_file() => {
                return bad(format!("electricity file {} does not exist", path.display()))
            }
            DatasetConfig::Hdd { dir, .. } if !dir.is_dir() => {
                return bad(format!("HDD directory {} does not exist", dir.display()))
            }
            _ => {}
        }
        if self.dataset.is_rul() != (self.model.kind == ModelKind::EncoderDecoder) {
            return bad(format!(
                "{} data needs the {} model",
                self.dataset.label(),
                if self.dataset.is_rul() { "encoder-decoder" } else { "vanilla" }
            ));
        }
        if self.model.lookback == 0 || self.model.hidden == 0 || self.model.relu_units == 0 {
            return bad("model dimensions and look-back must be positive".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.model.dropout));
        }
        let s: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(*f > 0.0)) || (s - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be positive and sum to 1", self.split));
        }
        if self.cv_folds == 1 {
            return bad("cv_folds must be 0 or at least 2".into());
        }
        if let Some((lo, hi)) = self.preprocess.normalize {
            if !(lo < hi) {
                return bad(format!("normalization range [{lo}, {hi}] is empty"));
            }
        }
        self.train.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        let g = &self.attacks;
        if g.epsilons.iter().any(|e| !(*e > 0.0)) || g.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("attack grid {:?} must be positive and strictly increasing", g.epsilons));
        }
        if !(g.alpha > 0.0) {
            return bad(format!("attack alpha must be positive, got {}", g.alpha));
        }
        let mut names = Vec::new();
        for d in &self.defenses.daat {
            d.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
            names.push(("DAAT", d.attack));
        }
        for l in &self.defenses.lpat {
            l.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
            names.push((l.label(), l.attack));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return bad(format!("defense {} {} is configured twice", n.1, n.0));
            }
            if !g.kinds.contains(&n.1) {
                return bad(format!("defense {} uses {} but the attack grid does not", n.0, n.1));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.lookbacks.len() < 2 || sw.lookbacks.contains(&0) {
                return bad("a sweep needs at least two positive look-backs".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 3

[dataset]
source = "synthetic"
synth = { kind = "seasonal", n_samples = 200 }

[model]
kind = "vanilla"
lookback = 7
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.model.hidden, 100);
        assert_eq!(c.split, [0.8, 0.1, 0.1]);
        assert_eq!(c.attacks.epsilons.len(), 5);
        assert_eq!(c.train.batch_size, 32);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.content_hash(), c.content_hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut v = c.clone();
        v.schema_version = 2;
        assert!(v.validate().is_err());
        let mut v = c.clone();
        v.dataset = DatasetConfig::Electricity {
            path: "/nonexistent/household.txt".into(),
        };
        assert!(v.validate().is_err());
        let mut v = c.clone();
        v.model.kind = ModelKind::EncoderDecoder;
        assert!(v.validate().is_err());
        let mut v = c;
        v.split = [0.5, 0.1, 0.1];
        assert!(v.validate().is_err());
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
    }
}
