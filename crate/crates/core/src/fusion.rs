//! Early fusion, dense classification layers, softmax, and cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, ForwardCtx};
use crate::params::{xavier_uniform, Bindings, ParamGroup, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub d_text: usize,
    pub d_visual: usize,
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub n_classes: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d_text: 64,
            d_visual: 64,
            hidden: vec![256],
            dropout_rate: 0.1,
            n_classes: 9,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("fusion head: {m}")));
        if self.n_classes < 2 {
            return fail(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.d_text == 0 || self.d_visual == 0 || self.hidden.contains(&0) {
            return fail("feature and hidden dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0,1), got {}", self.dropout_rate));
        }
        Ok(())
    }
}

/// `[f_text; f_visual]` along the last axis (text first).
pub fn fuse<T: Scalar>(tape: &mut Tape<T>, f_text: Var, f_visual: Var) -> Result<Var> {
    let (a, b) = (tape.shape(f_text).to_vec(), tape.shape(f_visual).to_vec());
    if a.len() != b.len() || a[..a.len() - 1] != b[..b.len() - 1] {
        return Err(Error::Config(format!(
            "cannot fuse text features {a:?} with visual features {b:?}"
        )));
    }
    tape.concat(f_text, f_visual, a.len() - 1)
}

/// Softmax output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Tensor<f32>,
    pub predicted_class: usize,
    pub logits: Tensor<f32>,
}

impl Prediction {
    /// Builds a prediction from raw logits; ties go to the lowest class index.
    pub fn from_logits(logits: &[f32]) -> Self {
        let probs = softmax_f64(logits);
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        let n = logits.len();
        Prediction {
            probabilities: Tensor::new(&[n], probs.iter().map(|&p| p as f32).collect()).expect("length n"),
            predicted_class: best,
            logits: Tensor::new(&[n], logits.to_vec()).expect("length n"),
        }
    }

    /// `−log p[label]` via log-sum-exp over the stored logits.
    pub fn cross_entropy(&self, label: usize) -> Result<f64> {
        let z = self.logits.data();
        if label >= z.len() {
            return Err(Error::Data(format!(
                "label {label} outside 0..{}",
                z.len()
            )));
        }
        let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = m + z.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
        Ok(lse - z[label] as f64)
    }
}

fn softmax_f64(z: &[f32]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let e: Vec<f64> = z.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    config: FusionConfig,
    input_dim: usize,
    hidden: Vec<Dense>,
    output: Dense,
}

const DROPOUT_LAYER_BASE: u64 = 1000;

impl FusionHead {
    /// Registers parameters under `head.*` for inputs of width `input_dim`.
    pub fn new<T: Scalar, R: Rng>(
        config: &FusionConfig,
        input_dim: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("fusion head input dimension must be positive".into()));
        }
        let mut layer = |name: String, fan_in: usize, fan_out: usize| Dense {
            weight: store.add(
                format!("{name}.weight"),
                ParamGroup::Fusion,
                xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, rng),
            ),
            bias: store.add(format!("{name}.bias"), ParamGroup::Fusion, Tensor::zeros(&[fan_out])),
        };
        let mut fan_in = input_dim;
        let mut hidden = Vec::new();
        for (k, &w) in config.hidden.iter().enumerate() {
            hidden.push(layer(format!("head.hidden{k}"), fan_in, w));
            fan_in = w;
        }
        let output = layer("head.output".into(), fan_in, config.n_classes);
        Ok(FusionHead {
            config: config.clone(),
            input_dim,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Logits `[B×C]` for joint features `[B×input_dim]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Bindings, features: Var, ctx: &ForwardCtx) -> Result<Var> {
        let s = tape.shape(features);
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::Config(format!(
                "fusion head expects [B×{}] features, got {s:?}",
                self.input_dim
            )));
        }
        let mut h = features;
        for (k, layer) in self.hidden.iter().enumerate() {
            h = layer.forward(tape, bind, h)?;
            h = tape.relu(h);
            h = ctx.dropout(tape, h, self.config.dropout_rate, DROPOUT_LAYER_BASE + k as u64)?;
        }
        self.output.forward(tape, bind, h)
    }

    /// Single-sample inference: `[input_dim]` features to a [`Prediction`].
    pub fn classify(&self, f_joint: &Tensor<f32>, store: &ParamStore<f32>, training: bool) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = tape.constant(f_joint.clone().reshape(&[1, f_joint.numel()])?);
        let ctx = ForwardCtx {
            training,
            ..ForwardCtx::inference()
        };
        let logits = self.forward(&mut tape, &bind, x, &ctx)?;
        Ok(Prediction::from_logits(tape.data(logits)))
    }
}
