use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::{retrain, TrainConfig};
use crate::data_harness::Dataset;
use crate::error::{Error, Result};
use crate::search_space::{sample_random_genotype, Genotype, SearchSpaceConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub genotype: Genotype,
    /// Final-epoch validation metrics; infinite if training diverged.
    pub valid_loss: f64,
    pub valid_ter: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomSearchOutcome {
    pub trials: Vec<TrialRecord>,
    /// Index of the selected trial.
    pub best: usize,
}

impl RandomSearchOutcome {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.best]
    }
}

/// Seed of trial `trial`, derived from the root seed.
pub fn trial_seed(root: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(trial as u64 + 1);
    rng.next_u64()
}

/// Trains `trials` uniformly sampled genotypes from scratch and selects the
/// one with the lowest validation token error rate, then lowest loss, then
/// lowest index.
pub fn run_random_search(
    space: &SearchSpaceConfig,
    data: &Dataset,
    cfg: &TrainConfig,
    trials: usize,
    seed: u64,
    mut on_trial: impl FnMut(&TrialRecord),
) -> Result<RandomSearchOutcome> {
    if trials == 0 {
        return Err(Error::invalid("random search needs at least one trial"));
    }
    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(trials);
    for trial in 0..trials {
        let genotype = sample_random_genotype(space, &mut sampler);
        let s = trial_seed(seed, trial);
        let out = retrain(&genotype, space, data, cfg, s)?;
        let (loss, ter) = match (out.report.diverged.is_some(), out.report.epochs.last()) {
            (false, Some(m)) => (m.valid.loss, m.valid.token_error_rate),
            _ => (f64::INFINITY, f64::INFINITY),
        };
        let rec = TrialRecord {
            trial,
            seed: s,
            genotype,
            valid_loss: loss,
            valid_ter: ter,
            diverged: out.report.diverged.is_some(),
        };
        on_trial(&rec);
        records.push(rec);
    }
    let best = (0..records.len())
        .min_by(|&a, &b| {
            let (x, y) = (&records[a], &records[b]);
            x.valid_ter
                .total_cmp(&y.valid_ter)
                .then(x.valid_loss.total_cmp(&y.valid_loss))
                .then(a.cmp(&b))
        })
        .expect("at least one trial");
    Ok(RandomSearchOutcome {
        trials: records,
        best,
    })
}
