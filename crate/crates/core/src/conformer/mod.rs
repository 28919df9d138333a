//! Candidate operations and the fixed per-block plumbing of the backbone.

mod attention;
mod candidate;
mod modules;
mod params;
mod posenc;

pub use attention::{attention, attention_probs};
pub use candidate::{CandidateOp, Slot, CONV_CANDIDATES, FFN_CANDIDATES, MHSA_CANDIDATES};
pub use modules::{
    candidate_forward, conv_module_forward, embed_input, ffn_forward, mhsa_forward, Affine,
    ConvParams, EmbedParams, FfnParams, MhsaParams, ModuleParams, NormParams,
};
pub use params::{Forward, NormStats, ParamId, ParamKind, ParamStore, RUNNING_STAT_MOMENTUM};
pub use posenc::{absolute_encoding, relative_table, sinusoid};
