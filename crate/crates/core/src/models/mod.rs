//! The expensive inner problem: a dropout MLP trained by SGD on generated data.

pub mod data;
pub mod mlp;

pub use data::{Dataset, Split};
pub use mlp::{
    forward, forward_dropout, forward_masked, init_weights, inner_loss, train, Activation, Layer,
    MlpArchitecture, ModelWeights, TrainingConfig,
};
