//! Character-level causal language model and its training loop.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod real;
pub mod tinylm;
pub mod train;
pub mod vocab;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, grad_check_with, max_relative_error, GradCheck};
pub use loss::xent_loss;
pub use optim::{lr_at, AdamW, AdamWConfig};
pub use real::Real;
pub use tinylm::{softmax_rows, ModelConfig, TinyLm};
pub use train::{
    batch_loss, batch_loss_and_grad, dataset_loss, prepare, task_loss, train, CurveRow, LossCurve, ModelDims,
    TrainConfig, ValSet,
};
pub use vocab::{build_vocab, encode_example, encode_pair, Encoded, Vocab};
