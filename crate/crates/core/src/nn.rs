//! Layer helpers shared by the encoders and the fusion head.

use crate::error::Result;
use crate::params::{Bindings, ParamId};
use crate::rng::DropoutKey;
use crate::tensor::{Scalar, Tape, Var};

/// Per-forward-pass settings. Dropout masks are keyed on `(seed, layer, step)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardCtx {
    pub training: bool,
    pub seed: u64,
    pub step: u64,
}

impl ForwardCtx {
    pub fn inference() -> Self {
        ForwardCtx {
            training: false,
            seed: 0,
            step: 0,
        }
    }

    pub fn training(seed: u64, step: u64) -> Self {
        ForwardCtx {
            training: true,
            seed,
            step,
        }
    }

    pub fn dropout<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, rate: f64, layer: u64) -> Result<Var> {
        tape.dropout(x, rate, self.training, DropoutKey::new(self.seed, layer, self.step))
    }
}

/// Weight `[in×out]` and bias `[out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// `x·W + b` for `x` of shape `[n×in]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Bindings, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bind.var(self.weight))?;
        tape.bias_add(y, bind.var(self.bias), 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn layer_norm<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Bindings, x: Var) -> Result<Var> {
        tape.layer_norm(x, bind.var(self.gamma), bind.var(self.beta), LAYER_NORM_EPS)
    }
}
