//! Pattern-conditioned mask networks with hand-written backpropagation.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use model::{
    backward_item, film_modulate, forward, forward_item, forward_unconditioned, Arch, ArchConfig, CellKind,
    Conditioning, ModelParams, PatternBatch,
};
pub use train::{
    batch_loss, batch_loss_and_grad, estimate, grad_check, loss_l1, train, Adam, Example, GradCheckReport,
    LossHistory, TrainConfig, DEFAULT_EPSILON,
};
