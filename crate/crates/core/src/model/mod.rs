//! The NPPR model: a recurrent encoder trained with next-event prediction
//! (NP) and time-decayed past reconstruction (PR).

mod checkpoint;
mod config;
mod loss;
mod network;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::{EncoderConfig, NpprConfig};
pub use loss::{
    np_loss, pr_loss, pr_weight, total_loss, EventPrediction, LossBreakdown, LossConfig,
};
pub use network::{EncoderTrace, NpprModel};
pub use train::{
    finetune, pretrain, sequence_gradient, EpochLog, PaddedBatch, Trained, TrainingLog,
};
