//! Small dense networks: autodiff tape, layers, optimizers and checkpoints.

mod checkpoint;
mod layers;
mod optim;
mod params;
mod tape;

pub use checkpoint::{load_into, read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use layers::{rows_to_matrix, Linear, Mlp};
pub use optim::Adam;
pub use params::{Grads, ParamId, ParamSet};
pub use tape::{log_softmax_rows, sigmoid, softmax_rows, Tape, Var};
