//! MLP classifiers, flat parameter views and checkpointing.

pub mod checkpoint;
mod mlp;
mod params;

pub use mlp::{
    BnRunning, LossFlavor, LossGrad, LossValue, MlpConfig, MlpModel, Mode, BN_MOMENTUM,
};
pub use params::{ParamRole, ParamVector, Segment};
