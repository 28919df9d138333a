use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::Adam;
use super::schedule::{dss_threshold, noam_lrate, DssConfig, NoamConfig};
use crate::data_harness::Split;
use crate::error::Result;

/// How often each kind of update read each split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccessCounters {
    pub weight_reads: [u64; 3],
    pub alpha_reads: [u64; 3],
}

impl AccessCounters {
    pub fn weight(&self, split: Split) -> u64 {
        self.weight_reads[split.index()]
    }

    pub fn alpha(&self, split: Split) -> u64 {
        self.alpha_reads[split.index()]
    }
}

/// What the next step will do.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub step: u64,
    pub threshold: f64,
    pub update_alpha: bool,
    /// Learning rate of the weight update, evaluated at `step + 1`.
    pub lrate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    /// Weight updates performed so far.
    pub step: u64,
    /// Value of `step` at the last architecture update.
    pub last_alpha_step: u64,
    pub weight_opt: Adam,
    pub alpha_opt: Adam,
    pub rng: ChaCha8Rng,
    pub access: AccessCounters,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            step: 0,
            last_alpha_step: 0,
            weight_opt: Adam::new(0.9, 0.98, 1e-9),
            alpha_opt: Adam::new(0.9, 0.999, 1e-8),
            rng: ChaCha8Rng::seed_from_u64(seed),
            access: AccessCounters::default(),
        }
    }

    /// Gating decision for the current step. The elapsed count is compared
    /// to the real-valued threshold without rounding; `force_one` updates
    /// on every step, the first included.
    pub fn plan(&self, noam: &NoamConfig, dss: &DssConfig) -> Result<StepPlan> {
        let threshold = dss_threshold(self.step, dss);
        let elapsed = (self.step - self.last_alpha_step) as f64;
        Ok(StepPlan {
            step: self.step,
            threshold,
            update_alpha: dss.force_one || elapsed >= threshold,
            lrate: noam_lrate(self.step + 1, noam)?,
        })
    }

    /// Records a finished step.
    pub fn commit(&mut self, plan: &StepPlan) {
        if plan.update_alpha {
            self.last_alpha_step = plan.step;
        }
        self.step += 1;
    }
}
