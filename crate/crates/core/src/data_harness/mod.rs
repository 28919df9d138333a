//! Synthetic speech-like sequence tasks with a planted context width, batch
//! assembly and time/frequency masking.

mod augment;
mod batch;
mod files;
mod synthetic;

pub use augment::{spec_augment, AugmentConfig};
pub use batch::{batch_order, Batch, Split};
pub use files::{load_dataset, save_dataset};
pub use synthetic::{
    feature_stats, generate_dataset, Dataset, FeatureStats, SyntheticTaskSpec, Utterance,
};
