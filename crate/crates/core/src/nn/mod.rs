//! Dense networks, loss heads, optimizer and gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;

pub use loss::{loss_head_for_regularizer, LossHead, Regularizer};
pub use mlp::{ActivationCache, BatchWorkspace, Dense, Logits, MlpParameters, MlpSpec, ParamGrads};
pub use optim::{cosine_lr, sgd_step, LrSchedule, OptimizerState};
