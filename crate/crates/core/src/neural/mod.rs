//! Minimal differentiable-programming stack and the two neural predictors.

pub mod graph;
pub mod layers;
pub mod model;
pub mod train;

pub use graph::{Graph, Tensor, Var};
pub use layers::{Activation, Mode};
pub use model::{predict, CnnConfig, CnnModel, ModelFile, NeuralModel, SequenceModel, UaeConfig, UaeModel};
pub use train::{evaluate_loss, train, Optimizer, TrainConfig, TrainReport};
