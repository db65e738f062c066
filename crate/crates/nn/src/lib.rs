//! Tape-based autodiff and the neural components of the trajectory GAN.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{
    attention_fuse, bilstm_encode, fuse_projected, gumbel_softmax, gumbel_softmax_rows, lstm_cell, FusionProjection,
    GumbelSample, LstmVars, SortedSteps,
};
pub use model::{
    discriminate, generate, store_tables, DOutput, DSequence, DiscriminatorParams, DiscriminatorVars,
    GeneratorParams, GeneratorVars, ModelDims, Rollout, RolloutOptions, StoreFeatures, TimeSource, Token,
};
pub use params::{spectral_normalize, top_singular_value, Adam, AdamConfig, ParamSet};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
