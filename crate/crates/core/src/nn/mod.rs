//! Minimal differentiable computation: a reverse-mode tape, dense parameter
//! storage with text checkpoints, the layers the models are built from, Adam
//! and a finite-difference gradient checker.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use layers::{
    attention_aggregate, attention_weights, gru_step, mlp_forward, time_encode, GruCell, Linear, Mlp, TimeEncoding,
};
pub use optim::{adam_step, AdamConfig};
pub use params::{Gradients, ModelParams, Param, ParamId, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub(crate) use tape::sigmoid_scalar;
pub use tape::{softmax, Tape, Var};
