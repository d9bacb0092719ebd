//! The run configuration: every knob of a training run in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::model::{Modality, ModelConfig};
use crate::synth::GeneratorSpec;
use crate::text::NormalizerConfig;
use crate::text_encoder::TextEncoderConfig;
use crate::training::{OptimizerSpec, SplitSpec};
use crate::vision::{AugmentConfig, DEFAULT_MEAN, DEFAULT_STD};
use crate::vision_encoder::VisionEncoderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    /// Stop merging once the vocabulary (specials included) reaches this size.
    pub target_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { target_size: 2000 }
    }
}

/// Per-channel standardization constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            mean: DEFAULT_MEAN,
            std: DEFAULT_STD,
        }
    }
}

/// Unknown keys anywhere in the document are rejected.
///
/// `model.text.vocab_size` is overwritten with the size of the vocabulary
/// actually trained; the snapshot written next to a checkpoint records it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, dropout, batch order and augmentation.
    pub seed: u64,
    pub modality: Modality,
    pub normalizer: NormalizerConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerSpec,
    pub split: SplitSpec,
    pub augment: AugmentConfig,
    pub image: ImageConfig,
    /// Used by `generate` when no flags override it.
    pub generator: GeneratorSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            modality: Modality::Multimodal,
            normalizer: NormalizerConfig::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerSpec::default(),
            split: SplitSpec::default(),
            augment: AugmentConfig::default(),
            image: ImageConfig::default(),
            generator: GeneratorSpec::default(),
        }
    }
}

impl RunConfig {
    /// Small encoders and raised learning rates that train a 4,500-sample
    /// corpus in minutes on one CPU core.
    pub fn desk() -> Self {
        RunConfig {
            vocab: VocabConfig { target_size: 400 },
            model: ModelConfig {
                text: TextEncoderConfig {
                    vocab_size: 400,
                    d_model: 32,
                    n_heads: 4,
                    n_layers: 1,
                    d_ff: 64,
                    max_len: 24,
                    dropout_rate: 0.1,
                },
                vision: VisionEncoderConfig {
                    widths: vec![8, 16, 32],
                    resolution: 16,
                    ..Default::default()
                },
                fusion: FusionConfig {
                    d_text: 32,
                    d_visual: 32,
                    hidden: vec![64],
                    dropout_rate: 0.1,
                    n_classes: 9,
                },
            },
            optimizer: OptimizerSpec {
                lr_encoder: 1e-3,
                lr_fusion: 3e-3,
                max_epochs: 12,
                ..Default::default()
            },
            generator: GeneratorSpec {
                samples: 4500,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.split.validate()?;
        self.augment.validate()?;
        self.generator.validate()?;
        if self.vocab.target_size < 8 {
            return Err(Error::Config(format!(
                "vocab.target_size must be at least 8, got {}",
                self.vocab.target_size
            )));
        }
        if self.image.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("image.std must be positive, got {:?}", self.image.std)));
        }
        if self.model.fusion.n_classes != self.generator.class_names.len() {
            return Err(Error::Config(format!(
                "fusion.n_classes is {} but the generator defines {} classes",
                self.model.fusion.n_classes,
                self.generator.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_losslessly() {
        for cfg in [RunConfig::default(), RunConfig::desk()] {
            cfg.validate().unwrap();
            let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(matches!(RunConfig::from_json(r#"{"sed": 3}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"optimizer": {"learning_rate": 0.1}}"#),
            Err(Error::Config(_))
        ));
        let partial = RunConfig::from_json(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
    }

    #[test]
    fn inconsistent_dims_fail() {
        let mut cfg = RunConfig::desk();
        cfg.model.fusion.d_text = 64;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
