use crate::conformer::{CandidateOp, Slot};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpaceConfig {
    pub num_blocks: usize,
    /// Candidate lists indexed by `Slot::index`.
    pub candidates: [Vec<CandidateOp>; 3],
    pub d_model: usize,
    pub feature_dim: usize,
    /// Output classes including blank.
    pub vocab: usize,
    pub dropout: f64,
    pub relative_position: bool,
}

impl Default for SearchSpaceConfig {
    fn default() -> Self {
        SearchSpaceConfig {
            num_blocks: 4,
            candidates: Slot::ALL.map(|s| CandidateOp::defaults(s).to_vec()),
            d_model: 256,
            feature_dim: 80,
            vocab: 32,
            dropout: 0.1,
            relative_position: true,
        }
    }
}

impl SearchSpaceConfig {
    pub fn candidates(&self, slot: Slot) -> &[CandidateOp] {
        &self.candidates[slot.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::invalid("num_blocks must be at least 1"));
        }
        if self.d_model == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("d_model and feature_dim must be positive"));
        }
        if self.vocab < 2 {
            return Err(Error::invalid(
                "vocab must include blank and at least one token",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        for slot in Slot::ALL {
            let list = self.candidates(slot);
            if list.is_empty() {
                return Err(Error::invalid(format!("empty candidate list for {slot}")));
            }
            for (i, op) in list.iter().enumerate() {
                if op.slot() != slot {
                    return Err(Error::invalid(format!("{op} is not a {slot} candidate")));
                }
                if list[..i].contains(op) {
                    return Err(Error::invalid(format!("{op} listed twice for {slot}")));
                }
                match *op {
                    CandidateOp::Mhsa { heads } if !self.d_model.is_multiple_of(heads) => {
                        return Err(Error::invalid(format!(
                            "{heads} heads do not divide d_model {}",
                            self.d_model
                        )))
                    }
                    CandidateOp::Conv { kernel, .. } if kernel % 2 == 0 => {
                        return Err(Error::invalid(format!(
                            "convolution kernel must be odd, got {kernel}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Names of the candidates of `slot`, in list order.
    pub fn candidate_names(&self, slot: Slot) -> Vec<String> {
        self.candidates(slot)
            .iter()
            .map(|op| op.to_string())
            .collect()
    }
}
