use super::config::SearchSpaceConfig;
use crate::conformer::Slot;
use crate::error::{Error, Result};

pub const ALPHA_CSV_HEADER: &str = "step,block,slot,candidate_name,logit,softmax_weight";

/// Architecture logits, one vector per (block, slot).
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaTable {
    num_blocks: usize,
    logits: Vec<Vec<f64>>,
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl AlphaTable {
    pub fn zeros(config: &SearchSpaceConfig) -> Self {
        let logits = (0..config.num_blocks)
            .flat_map(|_| Slot::ALL.map(|s| vec![0.0; config.candidates(s).len()]))
            .collect();
        AlphaTable {
            num_blocks: config.num_blocks,
            logits,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn get(&self, block: usize, slot: Slot) -> &[f64] {
        &self.logits[block * 3 + slot.index()]
    }

    pub fn get_mut(&mut self, block: usize, slot: Slot) -> &mut [f64] {
        &mut self.logits[block * 3 + slot.index()]
    }

    /// Mixing weights `softmax(alpha)` of one slot.
    pub fn weights(&self, block: usize, slot: Slot) -> Vec<f64> {
        softmax(self.get(block, slot))
    }

    /// Logit vectors in (block, slot) order.
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn vectors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, config: &SearchSpaceConfig) -> bool {
        self.num_blocks == config.num_blocks
            && (0..self.num_blocks).all(|b| {
                Slot::ALL
                    .iter()
                    .all(|&s| self.get(b, s).len() == config.candidates(s).len())
            })
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, v) in self.logits.iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite architecture logit in block {} slot {}",
                    i / 3,
                    Slot::ALL[i % 3]
                )));
            }
        }
        Ok(())
    }

    /// One CSV row per candidate, matching `ALPHA_CSV_HEADER`.
    pub fn csv_rows(&self, step: u64, config: &SearchSpaceConfig) -> Vec<String> {
        let mut rows = Vec::with_capacity(self.len());
        for b in 0..self.num_blocks {
            for slot in Slot::ALL {
                let w = self.weights(b, slot);
                for ((op, logit), w) in config.candidates(slot).iter().zip(self.get(b, slot)).zip(w)
                {
                    rows.push(format!("{step},{b},{slot},{op},{logit},{w}"));
                }
            }
        }
        rows
    }
}
