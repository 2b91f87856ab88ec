//! Dense matrices, tape-based reverse-mode gradients, Adam, and the cosine
//! learning-rate schedule.

mod gradcheck;
mod loss;
mod matrix;
mod optim;
mod scalar;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{bce_with_logits, softmax_ce};
pub use matrix::DenseMatrix;
pub use optim::{cosine_lr, Adam};
pub use scalar::Scalar;
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};
