//! Dense-network engine: flat parameter vectors, multilayer perceptrons with
//! ReLU/tanh hidden units, softmax cross-entropy with per-sample weights, and
//! SGD-momentum / Adam optimizers.
//!
//! Everything is `f64` and strictly sequential so repeated calls are
//! bit-identical.

mod classifier;
mod loss;
mod matrix;
mod mlp;
mod optim;
mod params;

pub use classifier::{ClassifierNet, ClassifierSpec, LossKind};
pub use loss::{focal_loss_and_grad, softmax_cross_entropy, SoftmaxOutput};
pub use matrix::Matrix;
pub use mlp::{Activation, ForwardCache, Mlp, MlpSpec};
pub use optim::{Optimizer, OptimizerKind, OptimizerSpec};
pub use params::{ParameterVector, TensorShape};
