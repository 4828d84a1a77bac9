//! Gradients, classifier head, optimizers and the train/evaluate loops.

mod backward;
mod gradcheck;
mod loss;
mod mlp;
mod model;
mod optim;
mod trainer;

pub use backward::{backward, BatchGradient};
pub use gradcheck::{gradcheck, tiny_gradcheck, tiny_network_and_model, GradcheckReport, GRADCHECK_FLOOR};
pub use loss::{cross_entropy, softmax};
pub use mlp::{mlp_forward, MlpHead};
pub use model::{GradientSet, Model, Network, ParamSet, Standardizer, TensorView};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{build_network, evaluate, init_model, train, EpochRecord, Evaluation, Samples, TrainConfig, TrainOutcome};
