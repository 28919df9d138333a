use rand::Rng;

use crate::tensor::Tensor;

/// Time and frequency masking applied to training inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct AugmentConfig {
    pub time_masks: usize,
    pub max_time_width: usize,
    pub freq_masks: usize,
    pub max_freq_width: usize,
}

impl AugmentConfig {
    pub fn is_identity(&self) -> bool {
        self.time_masks * self.max_time_width == 0 && self.freq_masks * self.max_freq_width == 0
    }
}

fn mask_range(len: usize, max_width: usize, rng: &mut impl Rng) -> std::ops::Range<usize> {
    let width = rng.random_range(0..=max_width.min(len));
    let start = rng.random_range(0..=len - width);
    start..start + width
}

/// Zeroes `time_masks` bands of frames and `freq_masks` bands of channels.
/// Each band has width uniform on `0..=max_width` and a uniform start.
pub fn spec_augment(features: &Tensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> Tensor {
    let mut out = features.clone();
    if cfg.is_identity() {
        return out;
    }
    let (frames, dim) = (features.shape()[0], features.shape()[1]);
    for _ in 0..cfg.time_masks {
        let r = mask_range(frames, cfg.max_time_width, rng);
        out.data_mut()[r.start * dim..r.end * dim].fill(0.0);
    }
    for _ in 0..cfg.freq_masks {
        let r = mask_range(dim, cfg.max_freq_width, rng);
        for row in out.data_mut().chunks_mut(dim) {
            row[r.clone()].fill(0.0);
        }
    }
    out
}
