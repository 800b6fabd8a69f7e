//! MLP heads over frozen features and the evaluation metrics.

mod head;
mod metrics;
mod report;

pub use head::{train_head, HeadConfig, HeadEpoch, HeadLog, HeadModel, TaskKind};
pub use metrics::{
    accuracy, auc, downsample_genuine, msle, vdr_curve, ScoredTransaction, VdrPoint,
};
pub use report::{write_vdr_csv, MetricsReport};
