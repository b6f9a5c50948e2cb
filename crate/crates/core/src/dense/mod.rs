//! Trainable dual-encoder dense retriever.
//!
//! Texts are encoded as the mean of their token embedding rows and scored by
//! dot product. Query and passage encoders share one table unless built
//! untied. Training minimizes InfoNCE with exact analytic gradients.

mod checkpoint;
mod index;
mod loss;
mod matrix;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use index::{search_dense, DenseIndex, Staleness};
pub use loss::{
    infonce_from_scores, infonce_loss, train_step, LossOutput, SparseGrad, TrainingSample,
};
pub use matrix::Matrix;
pub use optim::{AdamConfig, LrSchedule, OptimizerState};
pub use params::{similarity, EncoderParams, PassageRows, Side, Table};
