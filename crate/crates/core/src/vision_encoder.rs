//! Miniature residual CNN ending in global average pooling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ForwardCtx;
use crate::params::{he_uniform, Bindings, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const RESNET_MINI: &str = "resnet-mini";
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionEncoderConfig {
    pub backbone: String,
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub resolution: usize,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        VisionEncoderConfig {
            backbone: RESNET_MINI.into(),
            widths: vec![16, 32, 64],
            blocks_per_stage: 1,
            resolution: 32,
        }
    }
}

impl VisionEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("vision encoder: {m}")));
        if self.backbone != RESNET_MINI {
            return fail(format!("unknown backbone {:?} (only {RESNET_MINI:?})", self.backbone));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return fail(format!("widths must be non-empty and positive, got {:?}", self.widths));
        }
        if self.widths.windows(2).any(|w| w[1] < w[0]) {
            return fail(format!("widths must be nondecreasing, got {:?}", self.widths));
        }
        if self.blocks_per_stage == 0 {
            return fail("blocks_per_stage must be positive".into());
        }
        let factor = 1usize << self.widths.len();
        if self.resolution == 0 || !self.resolution.is_multiple_of(factor) {
            return fail(format!(
                "resolution {} must be a positive multiple of 2^{} = {factor}",
                self.resolution,
                self.widths.len()
            ));
        }
        Ok(())
    }

    pub fn d_visual(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvNorm {
    conv: ParamId,
    gamma: ParamId,
    beta: ParamId,
    stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    body: ConvNorm,
    /// 1×1 strided projection when the shape changes.
    skip: Option<ParamId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionEncoder {
    config: VisionEncoderConfig,
    stem: ConvNorm,
    blocks: Vec<Block>,
}

fn conv_norm<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    stride: usize,
    rng: &mut R,
) -> ConvNorm {
    ConvNorm {
        conv: store.add(
            format!("{name}.conv"),
            ParamGroup::Encoder,
            he_uniform(&[c_out, c_in, 3, 3], c_in * 9, rng),
        ),
        gamma: store.add(format!("{name}.gamma"), ParamGroup::Encoder, Tensor::full(&[c_out], T::one())),
        beta: store.add(format!("{name}.beta"), ParamGroup::Encoder, Tensor::zeros(&[c_out])),
        stride,
    }
}

impl ConvNorm {
    /// 3×3 conv, per-sample normalization over (C,H,W) with per-channel affine, ReLU.
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Bindings, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, bind.var(self.conv), self.stride, 1)?;
        let y = tape.normalize(y, 1, NORM_EPS)?;
        let y = tape.scale_shift(y, bind.var(self.gamma), bind.var(self.beta), 1)?;
        Ok(tape.relu(y))
    }
}

impl VisionEncoder {
    /// Registers freshly initialized parameters under `vision.*`.
    pub fn new<T: Scalar, R: Rng>(config: &VisionEncoderConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = conv_norm(store, "vision.stem", 3, config.widths[0], 1, rng);
        let mut blocks = Vec::new();
        let mut c_in = config.widths[0];
        for (s, &width) in config.widths.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("vision.stage{s}.block{b}");
                let body = conv_norm(store, &name, c_in, width, stride, rng);
                let skip = (stride != 1 || c_in != width).then(|| {
                    store.add(
                        format!("{name}.skip"),
                        ParamGroup::Encoder,
                        he_uniform(&[width, c_in, 1, 1], c_in, rng),
                    )
                });
                blocks.push(Block { body, skip });
                c_in = width;
            }
        }
        Ok(VisionEncoder {
            config: config.clone(),
            stem,
            blocks,
        })
    }

    pub fn config(&self) -> &VisionEncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.d_visual()
    }

    /// `[N×3×R×R]` standardized images to `[N×d_visual]` features.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Bindings, images: Var, _ctx: &ForwardCtx) -> Result<Var> {
        let r = self.config.resolution;
        let s = tape.shape(images);
        if s.len() != 4 || s[1] != 3 || s[2] != r || s[3] != r {
            return Err(Error::Data(format!(
                "image batch must be [N×3×{r}×{r}], got {s:?}"
            )));
        }
        let mut x = self.stem.forward(tape, bind, images)?;
        for block in &self.blocks {
            let h = block.body.forward(tape, bind, x)?;
            let skip = match block.skip {
                Some(w) => tape.conv2d(x, bind.var(w), block.body.stride, 0)?,
                None => x,
            };
            x = tape.add(h, skip)?;
        }
        tape.global_avg_pool(x)
    }

    /// Single-image convenience wrapper: `[3×R×R]` to `[d_visual]`.
    pub fn encode_image(&self, image: &Tensor<f32>, store: &ParamStore<f32>) -> Result<Tensor<f32>> {
        let s = image.shape();
        if s.len() != 3 {
            return Err(Error::Data(format!("image must be [3×R×R], got {s:?}")));
        }
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = tape.constant(image.clone().reshape(&[1, s[0], s[1], s[2]])?);
        let out = self.forward(&mut tape, &bind, x, &ForwardCtx::inference())?;
        tape.value(out).clone().reshape(&[self.output_dim()])
    }
}
