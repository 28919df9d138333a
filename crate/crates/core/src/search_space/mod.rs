//! The chain-structured supernet: one mixed operation per slot, each block's
//! slots applied in order MHSA, CONV, FFN, and every node fed only by its
//! predecessor.

mod alpha;
mod config;
mod genotype;
mod network;

pub use alpha::{AlphaTable, ALPHA_CSV_HEADER};
pub use config::SearchSpaceConfig;
pub use genotype::{count_architectures, derive_genotype, sample_random_genotype, Genotype};
pub use network::{build_supernet, materialize, mixed_forward, Model, Network, Supernet};
