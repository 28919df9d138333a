//! Alternating optimization of operation weights and architecture logits,
//! gated by the dynamic search schedule, plus random-search and retraining
//! drivers.

mod checkpoint;
mod optim;
mod random_search;
mod schedule;
mod search;
mod state;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use optim::{adam_update_alpha, clip_global_norm, Adam};
pub use random_search::{run_random_search, trial_seed, RandomSearchOutcome, TrialRecord};
pub use schedule::{dss_threshold, noam_lrate, DssConfig, NoamConfig};
pub use search::{run_search, search_step, SearchConfig, SearchOutcome, SearchRunLog, StepLog};
pub use state::{AccessCounters, StepPlan, TrainState};
pub use train::{
    evaluate, retrain, train_model, EpochMetrics, EvalMetrics, RetrainOutcome, TrainConfig,
    TrainReport,
};
