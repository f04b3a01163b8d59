//! Occupancy MLP: forward pass, reverse-mode gradients, ADAM, training-point
//! sampling and a minibatch training loop.
//!
//! Hidden layers use a leaky rectifier, the output a logistic squashing, and
//! the loss is the mean squared error against hard {0, 1} labels.

mod adam;
mod io;
mod mlp;
mod sampling;
mod train;

pub use adam::{Adam, AdamConfig};
pub use io::{load_checkpoint, load_weights, save_checkpoint, save_weights};
pub use mlp::{Layer, MlpSpec, OccupancyMlp};
pub use sampling::{sample_training_points, SampleKind, TrainPoints};
pub use train::{minibatch, mse, train, TrainBatch, TrainConfig, TrainRecord, TrainSummary};
