//! Pre-norm transformer encoder pooled at the `[CLS]` position.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, ForwardCtx, Norm};
use crate::params::{xavier_uniform, Bindings, ParamGroup, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::text::TokenSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            vocab_size: 2000,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            max_len: 64,
            dropout_rate: 0.1,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("text encoder: {m}")));
        if self.vocab_size <= 4 {
            return fail(format!("vocab_size must exceed 4, got {}", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("d_model, n_heads and d_ff must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model must be even, got {}", self.d_model));
        }
        if self.max_len < 2 {
            return fail(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0,1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Sinusoidal table: `PE[pos,2i] = sin(pos/10000^(2i/d))`, `PE[pos,2i+1] = cos(…)`.
pub fn positional_encoding<T: Scalar>(max_len: usize, d_model: usize) -> Result<Tensor<T>> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs a positive even d_model, got {d_model}"
        )));
    }
    let mut data = Vec::with_capacity(max_len * d_model);
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data.push(T::of(angle.sin()));
            data.push(T::of(angle.cos()));
        }
    }
    Tensor::new(&[max_len, d_model], data)
}

/// Equal-length token sequences stacked row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn from_sequences(seqs: &[&TokenSequence]) -> Result<Self> {
        let len = seqs.first().map(|s| s.len()).unwrap_or(0);
        if seqs.iter().any(|s| s.len() != len || s.attention_mask.len() != len) {
            return Err(Error::Dimension("token sequences in a batch must share one length".into()));
        }
        Ok(TokenBatch {
            ids: seqs.iter().flat_map(|s| s.ids.iter().copied()).collect(),
            mask: seqs.iter().flat_map(|s| s.attention_mask.iter().copied()).collect(),
            batch: seqs.len(),
            len,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    ln1: Norm,
    wq: Dense,
    wk: Dense,
    wv: Dense,
    wo: Dense,
    ln2: Norm,
    ff1: Dense,
    ff2: Dense,
}

/// Parameter handles of the encoder; the values live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    config: TextEncoderConfig,
    embedding: crate::params::ParamId,
    blocks: Vec<Block>,
    final_norm: Norm,
    pe: Vec<f64>,
}

const DROPOUT_LAYER_BASE: u64 = 100;

fn dense<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Dense {
    Dense {
        weight: store.add(
            format!("{name}.weight"),
            ParamGroup::Encoder,
            xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, rng),
        ),
        bias: store.add(format!("{name}.bias"), ParamGroup::Encoder, Tensor::zeros(&[fan_out])),
    }
}

fn norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Norm {
    Norm {
        gamma: store.add(format!("{name}.gamma"), ParamGroup::Encoder, Tensor::full(&[d], T::one())),
        beta: store.add(format!("{name}.beta"), ParamGroup::Encoder, Tensor::zeros(&[d])),
    }
}

impl TextEncoder {
    /// Registers freshly initialized parameters under `text.*`.
    pub fn new<T: Scalar, R: Rng>(config: &TextEncoderConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embedding = store.add(
            "text.embedding",
            ParamGroup::Encoder,
            xavier_uniform(&[config.vocab_size, d], config.vocab_size, d, rng),
        );
        let blocks = (0..config.n_layers)
            .map(|l| {
                let p = format!("text.block{l}");
                Block {
                    ln1: norm(store, &format!("{p}.ln1"), d),
                    wq: dense(store, &format!("{p}.attn.q"), d, d, rng),
                    wk: dense(store, &format!("{p}.attn.k"), d, d, rng),
                    wv: dense(store, &format!("{p}.attn.v"), d, d, rng),
                    wo: dense(store, &format!("{p}.attn.out"), d, d, rng),
                    ln2: norm(store, &format!("{p}.ln2"), d),
                    ff1: dense(store, &format!("{p}.ff1"), d, config.d_ff, rng),
                    ff2: dense(store, &format!("{p}.ff2"), config.d_ff, d, rng),
                }
            })
            .collect();
        let final_norm = norm(store, "text.final_norm", d);
        let pe = positional_encoding::<f64>(config.max_len, d)?.into_data();
        Ok(TextEncoder {
            config: config.clone(),
            embedding,
            blocks,
            final_norm,
            pe,
        })
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.d_model
    }

    fn multi_head<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Bindings,
        block: &Block,
        h: Var,
        batch: &TokenBatch,
        key_mask: &[u8],
    ) -> Result<Var> {
        let (b, l, heads, dk) = (batch.batch, batch.len, self.config.n_heads, self.config.d_k());
        let split = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
            let x = tape.reshape(x, &[b, l, heads, dk])?;
            let x = tape.permute(x, &[0, 2, 1, 3])?;
            tape.reshape(x, &[b * heads, l, dk])
        };
        let q = block.wq.forward(tape, bind, h)?;
        let q = split(tape, q)?;
        let k = block.wk.forward(tape, bind, h)?;
        let k = split(tape, k)?;
        let v = block.wv.forward(tape, bind, h)?;
        let v = split(tape, v)?;
        let att = tape.attention(q, k, v, Some(key_mask))?;
        let o = tape.reshape(att.output, &[b, heads, l, dk])?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b * l, heads * dk])?;
        block.wo.forward(tape, bind, o)
    }

    /// `[B×d_model]` features taken from the final hidden state at position 0.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Bindings,
        batch: &TokenBatch,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (b, l, d) = (batch.batch, batch.len, cfg.d_model);
        if b == 0 {
            return Err(Error::Data("empty token batch".into()));
        }
        if l == 0 || l > cfg.max_len {
            return Err(Error::Data(format!(
                "sequence length {l} outside 1..={}",
                cfg.max_len
            )));
        }
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} is outside the vocabulary of size {}",
                cfg.vocab_size
            )));
        }
        let rate = cfg.dropout_rate;

        let x = tape.gather_rows(bind.var(self.embedding), &batch.ids)?;
        let x = tape.scale(x, T::of((d as f64).sqrt()));
        let pe: Vec<T> = (0..b)
            .flat_map(|_| self.pe[..l * d].iter().map(|&v| T::of(v)))
            .collect();
        let pe = tape.constant(Tensor::new(&[b * l, d], pe)?);
        let mut x = tape.add(x, pe)?;
        x = ctx.dropout(tape, x, rate, DROPOUT_LAYER_BASE - 1)?;

        // every head of sample i shares that sample's key mask
        let key_mask: Vec<u8> = (0..b)
            .flat_map(|i| {
                let row = &batch.mask[i * l..(i + 1) * l];
                (0..cfg.n_heads).flat_map(move |_| row.iter().copied())
            })
            .collect();

        for (li, block) in self.blocks.iter().enumerate() {
            let layer = DROPOUT_LAYER_BASE + 2 * li as u64;
            let h = block.ln1.layer_norm(tape, bind, x)?;
            let a = self.multi_head(tape, bind, block, h, batch, &key_mask)?;
            let a = ctx.dropout(tape, a, rate, layer)?;
            x = tape.add(x, a)?;
            if li + 1 == self.blocks.len() {
                // nothing downstream reads the non-[CLS] rows any more
                let cls_rows: Vec<usize> = (0..b).map(|i| i * l).collect();
                x = tape.gather_rows(x, &cls_rows)?;
            }

            let h = block.ln2.layer_norm(tape, bind, x)?;
            let f = block.ff1.forward(tape, bind, h)?;
            let f = tape.gelu(f);
            let f = block.ff2.forward(tape, bind, f)?;
            let f = ctx.dropout(tape, f, rate, layer + 1)?;
            x = tape.add(x, f)?;
        }
        if self.blocks.is_empty() {
            let cls_rows: Vec<usize> = (0..b).map(|i| i * l).collect();
            x = tape.gather_rows(x, &cls_rows)?;
        }
        self.final_norm.layer_norm(tape, bind, x)
    }

    /// Single-sequence convenience wrapper returning `[d_model]`.
    pub fn encode_text(&self, seq: &TokenSequence, store: &ParamStore<f32>, training: bool) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let batch = TokenBatch::from_sequences(&[seq])?;
        let ctx = ForwardCtx {
            training,
            ..ForwardCtx::inference()
        };
        let out = self.forward(&mut tape, &bind, &batch, &ctx)?;
        tape.value(out).clone().reshape(&[self.config.d_model])
    }
}
