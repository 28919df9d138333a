use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::batch::Split;
use crate::error::{Error, Result};
use crate::objectives::{ctc_min_frames, LabelSequence};
use crate::tensor::Tensor;

/// Parameters of the planted-context task.
///
/// Every token is an event of `width` frames. Token `t` is split into a
/// pair `(a, b)`; the first frame of its event carries onset channel `a`,
/// the last frame offset channel `b` and frames in between a shared body
/// channel. A width-1 event carries both codes on its single frame. Telling
/// tokens apart therefore needs a view of `width` consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskSpec {
    pub feature_dim: usize,
    /// Output classes including blank.
    pub vocab: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub width: usize,
    /// Events per frame; each utterance holds `max(1, floor(rate * T))`.
    pub label_rate: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            feature_dim: 16,
            vocab: 10,
            min_frames: 40,
            max_frames: 64,
            width: 15,
            label_rate: 0.05,
            noise: 0.3,
            train_size: 400,
            valid_size: 100,
            test_size: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[frames x feature_dim]`.
    pub features: Tensor,
    pub labels: LabelSequence,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

impl SyntheticTaskSpec {
    /// Onset and offset alphabet sizes `(A, B)` with `A * B >= vocab - 1`.
    pub fn code_sizes(&self) -> (usize, usize) {
        let n = self.vocab - 1;
        let b = (n as f64).sqrt().ceil() as usize;
        (n.div_ceil(b), b)
    }

    fn events(&self, frames: usize) -> usize {
        ((self.label_rate * frames as f64).floor() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::invalid("planted width must be at least 1"));
        }
        if self.vocab < 2 {
            return Err(Error::invalid(
                "vocab must include blank and at least one token",
            ));
        }
        let (a, b) = self.code_sizes();
        if self.feature_dim < a + b + 1 {
            return Err(Error::invalid(format!(
                "feature_dim {} cannot hold {a} onset, {b} offset and 1 body channel",
                self.feature_dim
            )));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::invalid(format!(
                "bad frame range {}..={}",
                self.min_frames, self.max_frames
            )));
        }
        if !(self.label_rate > 0.0 && self.label_rate.is_finite())
            || !(self.noise >= 0.0 && self.noise.is_finite())
        {
            return Err(Error::invalid(
                "label_rate must be positive and noise non-negative",
            ));
        }
        // Events are separated by at least one blank frame.
        for t in self.min_frames..=self.max_frames {
            let n = self.events(t);
            if n * (self.width + 1) - 1 > t {
                return Err(Error::invalid(format!(
                    "{n} events of width {} do not fit in {t} frames",
                    self.width
                )));
            }
        }
        if self.train_size == 0 || self.valid_size == 0 {
            return Err(Error::invalid("train and valid splits must be non-empty"));
        }
        Ok(())
    }

    fn generate_split(&self, split: Split, count: usize, noise: &Normal<f64>) -> Vec<Utterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ split_salt(split),
        );
        let (_, nb) = self.code_sizes();
        let (onset, offset, body) = (0, self.code_sizes().0, self.code_sizes().0 + nb);
        (0..count)
            .map(|i| {
                let frames = rng.random_range(self.min_frames..=self.max_frames);
                let n = self.events(frames);
                let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(1..self.vocab)).collect();
                // Spread the spare frames over n+1 gaps, inner gaps at least one.
                let spare = frames - (n * (self.width + 1) - 1);
                let mut gaps = vec![0usize; n + 1];
                gaps[1..n].iter_mut().for_each(|g| *g = 1);
                for _ in 0..spare {
                    gaps[rng.random_range(0..=n)] += 1;
                }
                let f = self.feature_dim;
                let mut data = vec![0.0; frames * f];
                let mut t = gaps[0];
                for (k, &tok) in tokens.iter().enumerate() {
                    let (a, b) = ((tok - 1) / nb, (tok - 1) % nb);
                    data[t * f + onset + a] += 1.0;
                    data[(t + self.width - 1) * f + offset + b] += 1.0;
                    for j in 1..self.width.saturating_sub(1) {
                        data[(t + j) * f + body] += 1.0;
                    }
                    t += self.width + gaps[k + 1];
                }
                if self.noise > 0.0 {
                    data.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
                }
                Utterance {
                    id: format!("{}-{i:05}", split.as_str()),
                    features: Tensor::new(vec![frames, f], data).expect("non-empty utterance"),
                    labels: LabelSequence::new(tokens).expect("tokens exclude blank"),
                }
            })
            .collect()
    }
}

fn split_salt(split: Split) -> u64 {
    match split {
        Split::Train => 0x7472_6169_6e00_0001,
        Split::Valid => 0x7661_6c69_6400_0002,
        Split::Test => 0x7465_7374_0000_0003,
    }
}

/// Per-channel standardization parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn feature_stats(utts: &[Utterance]) -> FeatureStats {
    let f = utts[0].features.shape()[1];
    let mut sum = vec![0.0; f];
    let mut sq = vec![0.0; f];
    let mut n = 0usize;
    for u in utts {
        for row in u.features.data().chunks(f) {
            for c in 0..f {
                sum[c] += row[c];
                sq[c] += row[c] * row[c];
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let var = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| q / n as f64 - m * m)
        .collect();
    FeatureStats { mean, var }
}

fn standardize(utts: &mut [Utterance], stats: &FeatureStats) {
    let f = stats.mean.len();
    let scale: Vec<f64> = stats
        .var
        .iter()
        .map(|v| 1.0 / v.max(1e-12).sqrt())
        .collect();
    for u in utts {
        for row in u.features.data_mut().chunks_mut(f) {
            for c in 0..f {
                row[c] = (row[c] - stats.mean[c]) * scale[c];
            }
        }
    }
}

fn digest(t: &Tensor) -> [u8; 32] {
    let mut h = Sha256::new();
    for x in t.data() {
        h.update(x.to_le_bytes());
    }
    h.finalize().into()
}

/// Generates the three splits from independent streams, standardized with
/// the training split's per-channel statistics.
pub fn generate_dataset(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut train = spec.generate_split(Split::Train, spec.train_size, &noise);
    let mut valid = spec.generate_split(Split::Valid, spec.valid_size, &noise);
    let mut test = spec.generate_split(Split::Test, spec.test_size, &noise);
    let stats = feature_stats(&train);
    for split in [&mut train, &mut valid, &mut test] {
        standardize(split, &stats);
    }
    let seen: HashSet<[u8; 32]> = train.iter().map(|u| digest(&u.features)).collect();
    if valid
        .iter()
        .chain(&test)
        .any(|u| seen.contains(&digest(&u.features)))
    {
        return Err(Error::invalid("generated splits overlap"));
    }
    debug_assert!(train
        .iter()
        .chain(&valid)
        .all(|u| ctc_min_frames(&u.labels) <= u.frames()));
    Ok(Dataset { train, valid, test })
}
