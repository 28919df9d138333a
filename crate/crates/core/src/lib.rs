//! Differentiable architecture search over a Conformer backbone.
//!
//! Each of `N` blocks holds three slots (MHSA, convolution, feed-forward);
//! every slot mixes its candidate operations with softmax-weighted
//! architecture logits. A bilevel trainer alternates operation-weight steps
//! under a Noam schedule with architecture steps gated by a dynamic search
//! schedule, then derives a discrete genotype by per-slot argmax.

pub mod bilevel_trainer;
pub mod conformer;
pub mod data_harness;
pub mod error;
pub mod objectives;
pub mod search_space;
pub mod tensor;

pub use error::{Error, Result};
