//! Modality-aware model bundle and its checkpoint files.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionConfig, FusionHead, Prediction};
use crate::nn::ForwardCtx;
use crate::params::{Bindings, ParamStore, TensorInfo};
use crate::rng::keyed_rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::text_encoder::{TextEncoder, TextEncoderConfig, TokenBatch};
use crate::vision_encoder::{VisionEncoder, VisionEncoderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Multimodal,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Image, Modality::Multimodal];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Multimodal => "multimodal",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Modality::Image
    }

    pub fn uses_image(self) -> bool {
        self != Modality::Text
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "multimodal" => Ok(Modality::Multimodal),
            _ => Err(Error::Usage(format!(
                "unknown modality {s:?} (expected text, image or multimodal)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub text: TextEncoderConfig,
    pub vision: VisionEncoderConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.vision.validate()?;
        self.fusion.validate()?;
        if self.fusion.d_text != self.text.d_model {
            return Err(Error::Config(format!(
                "fusion.d_text {} does not match text.d_model {}",
                self.fusion.d_text, self.text.d_model
            )));
        }
        if self.fusion.d_visual != self.vision.d_visual() {
            return Err(Error::Config(format!(
                "fusion.d_visual {} does not match the last vision width {}",
                self.fusion.d_visual,
                self.vision.d_visual()
            )));
        }
        Ok(())
    }
}

/// One batch of model inputs; which fields are needed depends on the modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInputs<T: Scalar = f32> {
    pub tokens: Option<TokenBatch>,
    /// Standardized `[N×3×R×R]` images.
    pub images: Option<Tensor<T>>,
}

impl<T: Scalar> ModelInputs<T> {
    pub fn len(&self) -> usize {
        match (&self.tokens, &self.images) {
            (Some(t), _) => t.batch,
            (None, Some(i)) => i.shape()[0],
            (None, None) => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter handles for the active encoders and the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    modality: Modality,
    text: Option<TextEncoder>,
    vision: Option<VisionEncoder>,
    head: FusionHead,
}

impl Architecture {
    /// Registers parameters for `modality` in `store`: text encoder, then
    /// vision encoder, then head, all drawn from one stream.
    pub fn build<T: Scalar, R: Rng>(
        modality: Modality,
        config: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let text = if modality.uses_text() {
            Some(TextEncoder::new(&config.text, store, rng)?)
        } else {
            None
        };
        let vision = if modality.uses_image() {
            Some(VisionEncoder::new(&config.vision, store, rng)?)
        } else {
            None
        };
        let input_dim = text.as_ref().map_or(0, |t| t.output_dim())
            + vision.as_ref().map_or(0, |v| v.output_dim());
        let head = FusionHead::new(&config.fusion, input_dim, store, rng)?;
        Ok(Architecture {
            modality,
            text,
            vision,
            head,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Logits `[B×C]`.
    pub fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Bindings,
        inputs: &ModelInputs<T>,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        let missing = |what: &str| Error::Data(format!("{} model needs {what} inputs", self.modality));
        let f_text = match &self.text {
            Some(enc) => {
                let tokens = inputs.tokens.as_ref().ok_or_else(|| missing("text"))?;
                Some(enc.forward(tape, bind, tokens, ctx)?)
            }
            None => None,
        };
        let f_visual = match &self.vision {
            Some(enc) => {
                let images = inputs.images.as_ref().ok_or_else(|| missing("image"))?;
                let x = tape.constant(images.clone());
                Some(enc.forward(tape, bind, x, ctx)?)
            }
            None => None,
        };
        let joint = match (f_text, f_visual) {
            (Some(t), Some(v)) => fuse(tape, t, v)?,
            (Some(f), None) | (None, Some(f)) => f,
            (None, None) => unreachable!("every modality has an encoder"),
        };
        self.head.forward(tape, bind, joint, ctx)
    }
}

/// JSON metadata written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSidecar {
    pub format: String,
    pub modality: Modality,
    pub config: ModelConfig,
    pub tensors: Vec<TensorInfo>,
}

pub const CHECKPOINT_FORMAT: &str = "MMT1";

/// Sidecar path for a checkpoint: same stem, `.json` extension.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

/// A trainable model with f32 parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub store: ParamStore<f32>,
}

impl Model {
    pub fn new(modality: Modality, config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let arch = Architecture::build(modality, config, &mut store, &mut keyed_rng(&[0x1417, seed]))?;
        Ok(Model {
            config: config.clone(),
            arch,
            store,
        })
    }

    pub fn modality(&self) -> Modality {
        self.arch.modality
    }

    pub fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Bindings,
        inputs: &ModelInputs<T>,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        self.arch.logits(tape, bind, inputs, ctx)
    }

    /// Inference-mode predictions for one batch.
    pub fn predict(&self, inputs: &ModelInputs<f32>) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let logits = self.logits(&mut tape, &bind, inputs, &ForwardCtx::inference())?;
        let c = tape.shape(logits)[1];
        Ok(tape.data(logits).chunks(c).map(Prediction::from_logits).collect())
    }

    pub fn sidecar(&self) -> CheckpointSidecar {
        CheckpointSidecar {
            format: CHECKPOINT_FORMAT.into(),
            modality: self.modality(),
            config: self.config.clone(),
            tensors: self.store.infos(),
        }
    }

    /// Writes the tensor file and its JSON sidecar.
    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.store.save_tensors(checkpoint)?;
        let side = sidecar_path(checkpoint);
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        if !checkpoint.is_file() {
            return Err(Error::Usage(format!(
                "checkpoint {} does not exist",
                checkpoint.display()
            )));
        }
        let side = sidecar_path(checkpoint);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: CheckpointSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", side.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint format {:?}",
                side.display(),
                meta.format
            )));
        }
        let mut model = Model::new(meta.modality, &meta.config, 0)?;
        for (want, have) in meta.tensors.iter().zip(model.store.infos()) {
            if want.shape != have.shape || want.name != have.name {
                return Err(Error::Dimension(format!(
                    "sidecar lists tensor {} {:?} but the config builds {} {:?}",
                    want.name, want.shape, have.name, have.shape
                )));
            }
        }
        model.store.load_tensors(checkpoint)?;
        Ok(model)
    }
}
