//! Staged tensors, reverse-mode differentiation, and model staging.
//!
//! This crate layers machine-learning constructs over the shared staged
//! graph: [`tensor`] provides tensors with staging-time shapes, a gradient
//! tape, and an SGD step; [`model`] holds staging-time model descriptions
//! (weights as values) with seeded initialization, checkpoint text I/O, and a
//! direct scalar evaluator; [`infer`] stages a model as per-record or batched
//! row computation for use inside relational pipelines; [`train`] stages a
//! complete minibatch training loop; [`reference`] re-implements every
//! numeric operation directly over slices, in the same operation order, for
//! independent checking.

pub mod error;
pub mod infer;
pub mod model;
pub mod reference;
pub mod tensor;
pub mod train;

pub use error::{MlError, Result};
pub use infer::{stage_batch, stage_scalar};
pub use model::{Head, MlpModel, ModelKind};
pub use tensor::{
    mlp3_forward, print_tensor, sgd_step, tensor_from_literals, tensor_zeros, KernelMode,
    MlpParams, Parameter, Tensor, TensorCtx,
};
pub use train::{stage_training, TrainCfg};
