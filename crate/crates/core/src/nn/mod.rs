//! Dense feed-forward classifiers: parameters, forward and backward passes, training.

mod arch;
mod model;
mod optim;
mod params;
mod train;

pub use arch::{elu, elu_derivative, Activation, Activations, ArchSpec, OutputActivation};
pub use model::{
    backward, cross_entropy_loss, forward, loss_and_gradient, predict_batch, sigmoid, softmax_inplace, LOG_FLOOR,
};
pub use optim::{Optimizer, OptimizerKind};
pub use params::MlpParams;
pub use train::{train_classifier, TrainConfig};
