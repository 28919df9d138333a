//! Sequence objectives and scoring.

mod ctc;
mod decode;
mod error_rate;

pub(crate) use ctc::ctc_from_log_probs;
pub use ctc::{ctc_loss, ctc_min_frames, ctc_nll, smoothing_penalty, BLANK};
pub use decode::{ctc_greedy_decode, greedy_decode_batch};
pub use error_rate::{edit_distance, token_error_rate, CorpusErrorRate, ErrorRate};

use std::fmt;

use crate::error::{Error, Result};

/// Token ids of a transcript. Blank (id 0) never appears.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.contains(&BLANK) {
            return Err(Error::invalid("label sequence contains the blank id"));
        }
        Ok(LabelSequence(tokens))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every token is below `vocab`.
    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t >= vocab) {
            Some(t) => Err(Error::invalid(format!(
                "token {t} outside vocabulary of {vocab}"
            ))),
            None => Ok(()),
        }
    }
}

/// Space-separated token ids.
impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

impl std::str::FromStr for LabelSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = s
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::parse("label sequence", format!("bad token {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LabelSequence::new(tokens)
    }
}
