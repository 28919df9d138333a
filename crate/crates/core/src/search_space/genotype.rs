use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::alpha::AlphaTable;
use super::config::SearchSpaceConfig;
use crate::conformer::{CandidateOp, Slot};
use crate::error::{Error, Result};

/// The operation chosen for every slot of every block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Genotype {
    blocks: Vec<[CandidateOp; 3]>,
}

impl Genotype {
    pub fn new(blocks: Vec<[CandidateOp; 3]>) -> Self {
        Genotype { blocks }
    }

    /// `mhsa_head4 conv_15 ffn_1024` in every block.
    pub fn baseline(num_blocks: usize) -> Self {
        let block = [
            CandidateOp::Mhsa { heads: 4 },
            CandidateOp::Conv {
                kernel: 15,
                dilation: 1,
            },
            CandidateOp::Ffn { hidden: 1024 },
        ];
        Genotype {
            blocks: vec![block; num_blocks],
        }
    }

    pub fn blocks(&self) -> &[[CandidateOp; 3]] {
        &self.blocks
    }

    pub fn op(&self, block: usize, slot: Slot) -> CandidateOp {
        self.blocks[block][slot.index()]
    }

    /// Checks block count and that every choice is in its slot's list.
    pub fn validate(&self, config: &SearchSpaceConfig) -> Result<()> {
        if self.blocks.len() != config.num_blocks {
            return Err(Error::invalid(format!(
                "genotype has {} blocks, search space has {}",
                self.blocks.len(),
                config.num_blocks
            )));
        }
        for block in &self.blocks {
            for slot in Slot::ALL {
                let op = block[slot.index()];
                if !config.candidates(slot).contains(&op) {
                    return Err(Error::UnknownOperation {
                        name: op.to_string(),
                        valid: config.candidate_names(slot),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One line per block: `block <i>: <mhsa> <conv> <ffn>`.
impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, [m, c, ff]) in self.blocks.iter().enumerate() {
            writeln!(f, "block {i}: {m} {c} {ff}")?;
        }
        Ok(())
    }
}

impl FromStr for Genotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        for line in s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (head, body) = line
                .split_once(':')
                .ok_or_else(|| Error::parse("genotype", format!("missing ':' in {line:?}")))?;
            let index: usize = head
                .trim()
                .strip_prefix("block")
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| Error::parse("genotype", format!("bad block label {head:?}")))?;
            if index != blocks.len() {
                return Err(Error::parse(
                    "genotype",
                    format!("expected block {}, found {index}", blocks.len()),
                ));
            }
            let names: Vec<&str> = body.split_whitespace().collect();
            if names.len() != 3 {
                return Err(Error::parse(
                    "genotype",
                    format!("block {index} needs 3 operations, got {}", names.len()),
                ));
            }
            let mut ops = [CandidateOp::Identity; 3];
            for (slot, name) in Slot::ALL.into_iter().zip(names) {
                let op = CandidateOp::parse_any(name)?;
                if op.slot() != slot {
                    return Err(Error::UnknownOperation {
                        name: name.to_string(),
                        valid: CandidateOp::defaults(slot)
                            .iter()
                            .map(|o| o.to_string())
                            .collect(),
                    });
                }
                ops[slot.index()] = op;
            }
            blocks.push(ops);
        }
        if blocks.is_empty() {
            return Err(Error::parse("genotype", "no blocks"));
        }
        Ok(Genotype { blocks })
    }
}

/// Largest-weight candidate per slot; ties go to the lowest index.
pub fn derive_genotype(alpha: &AlphaTable, config: &SearchSpaceConfig) -> Result<Genotype> {
    if !alpha.matches(config) {
        return Err(Error::invalid(
            "architecture logits do not match the search space",
        ));
    }
    alpha.check_finite()?;
    let blocks = (0..config.num_blocks)
        .map(|b| {
            Slot::ALL.map(|slot| {
                let v = alpha.get(b, slot);
                let mut best = 0;
                for (i, &x) in v.iter().enumerate() {
                    if x > v[best] {
                        best = i;
                    }
                }
                config.candidates(slot)[best]
            })
        })
        .collect();
    Ok(Genotype { blocks })
}

/// Number of distinct genotypes, or `CountOverflow`.
pub fn count_architectures(config: &SearchSpaceConfig) -> Result<u128> {
    let per_block = Slot::ALL
        .iter()
        .try_fold(1u128, |acc, &s| {
            acc.checked_mul(config.candidates(s).len() as u128)
        })
        .ok_or(Error::CountOverflow)?;
    (0..config.num_blocks).try_fold(1u128, |acc, _| {
        acc.checked_mul(per_block).ok_or(Error::CountOverflow)
    })
}

/// Independent uniform choice for each slot of each block.
pub fn sample_random_genotype(config: &SearchSpaceConfig, rng: &mut impl Rng) -> Genotype {
    let blocks = (0..config.num_blocks)
        .map(|_| {
            Slot::ALL.map(|slot| {
                let list = config.candidates(slot);
                list[rng.random_range(0..list.len())]
            })
        })
        .collect();
    Genotype { blocks }
}
