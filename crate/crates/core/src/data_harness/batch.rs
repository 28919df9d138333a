use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::synthetic::Utterance;
use crate::error::{Error, Result};
use crate::objectives::LabelSequence;
use crate::tensor::{Segments, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| {
                Error::parse("split", format!("expected train, valid or test, got {s:?}"))
            })
    }
}

/// Utterances concatenated along time.
#[derive(Clone, Debug)]
pub struct Batch {
    pub split: Split,
    /// `[total frames x feature_dim]`.
    pub features: Tensor,
    pub segments: Segments,
    pub labels: Vec<LabelSequence>,
}

impl Batch {
    pub fn collate(split: Split, utts: &[&Utterance]) -> Result<Batch> {
        let Some(first) = utts.first() else {
            return Err(Error::invalid("empty batch"));
        };
        let f = first.features.shape()[1];
        let mut data = Vec::new();
        let mut lengths = Vec::with_capacity(utts.len());
        for u in utts {
            if u.features.shape()[1] != f {
                return Err(Error::Shape {
                    op: "collate",
                    lhs: first.features.shape().to_vec(),
                    rhs: u.features.shape().to_vec(),
                });
            }
            data.extend_from_slice(u.features.data());
            lengths.push(u.frames());
        }
        let segments = Segments::from_lengths(&lengths)?;
        Ok(Batch {
            split,
            features: Tensor::new(vec![segments.total(), f], data)?,
            segments,
            labels: utts.iter().map(|u| u.labels.clone()).collect(),
        })
    }
}

/// Indices of `n` items grouped into batches of at most `size`, shuffled
/// when `rng` is given.
pub fn batch_order(n: usize, size: usize, rng: Option<&mut impl Rng>) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        idx.shuffle(rng);
    }
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}
