//! Augmentation, the training step, SGD, checkpoints and metrics.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod optim;
pub mod state;
pub mod step;
pub mod trainer;

pub use augment::{make_views, AugmentationPolicy, Transform};
pub use checkpoint::{load_checkpoint, read_raw, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{EvalConfig, LrSchedule, TargetScaling, TrainConfig, VariantConfig};
pub use metrics::{read_metrics, MetricRow, MetricsWriter, TrainSummary, METRICS_HEADER};
pub use optim::Sgd;
pub use state::ModelState;
pub use step::{
    compute_keys, query_objective, train_step, LossBreakdown, ObjectiveOutput, ObjectiveSettings,
};
pub use trainer::{batch_views, epoch_order, schedule, train, view_rng, StepHook};
