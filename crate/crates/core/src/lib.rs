pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod text_encoder;
pub mod training;
pub mod vision;
pub mod vision_encoder;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{Modality, Model, ModelConfig, ModelInputs};
pub use params::{Bindings, ParamGroup, ParamId, ParamStore};
pub use tensor::{Scalar, Tape, Tensor, Var};
