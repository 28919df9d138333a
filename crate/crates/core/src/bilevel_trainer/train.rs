use super::optim::clip_global_norm;
use super::schedule::NoamConfig;
use super::state::TrainState;
use crate::conformer::{Forward, ParamId};
use crate::data_harness::{
    batch_order, spec_augment, AugmentConfig, Batch, Dataset, Split, Utterance,
};
use crate::error::{Error, Result};
use crate::objectives::{
    ctc_from_log_probs, greedy_decode_batch, smoothing_penalty, CorpusErrorRate,
};
use crate::search_space::{materialize, Genotype, Model, Network, SearchSpaceConfig};
use crate::tensor::Var;

/// Settings for training operation weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub noam: NoamConfig,
    pub clip_norm: f64,
    /// Weight of the KL-to-uniform penalty; 0 disables it.
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            noam: NoamConfig::default(),
            clip_norm: 5.0,
            label_smoothing: 0.0,
            batch_size: 8,
            epochs: 10,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.noam.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if self.clip_norm.is_nan()
            || self.clip_norm <= 0.0
            || self.label_smoothing.is_nan()
            || self.label_smoothing < 0.0
        {
            return Err(Error::invalid(
                "clip_norm must be positive and label_smoothing non-negative",
            ));
        }
        Ok(())
    }
}

/// Mean CTC loss of a batch, plus the smoothing penalty when enabled.
pub(crate) fn objective(
    ctx: &mut Forward<'_>,
    logits: Var,
    batch: &Batch,
    smoothing: f64,
) -> Result<Var> {
    let logp = ctx.tape.log_softmax(logits, 1)?;
    let per_utt = ctc_from_log_probs(&mut ctx.tape, logp, &batch.segments, &batch.labels)?;
    let ctc = ctx.tape.mean(per_utt);
    if smoothing > 0.0 {
        let p = smoothing_penalty(&mut ctx.tape, logp, smoothing)?;
        ctx.tape.add(ctc, p)
    } else {
        Ok(ctc)
    }
}

/// One optimizer step on the weights of `net` from a training batch.
/// Returns the batch loss before the update.
pub(crate) fn weight_step<N: Network>(
    net: &mut N,
    batch: &Batch,
    state: &mut TrainState,
    lrate: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    state.access.weight_reads[batch.split.index()] += 1;
    let step = state.step;
    let features = spec_augment(&batch.features, &cfg.augment, &mut state.rng);
    let (loss_value, ids, mut grads, stats) = {
        let mut ctx = net.context(true, true, &mut state.rng);
        let x = ctx.tape.constant(features);
        let logits = net.forward(&mut ctx, x, &batch.segments)?;
        let loss = objective(&mut ctx, logits, batch, cfg.label_smoothing)?;
        let loss_value = ctx.tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss {loss_value} (lrate {lrate:e})"),
                step,
            });
        }
        let weights = ctx.loaded_weights();
        let stats = std::mem::take(&mut ctx.norm_stats);
        let mut g = std::mem::take(&mut ctx.tape).backward(loss)?;
        let (ids, grads): (Vec<ParamId>, Vec<Vec<f64>>) = weights
            .into_iter()
            .filter_map(|(id, v)| g.take(v).map(|t| (id, t.into_data())))
            .unzip();
        (loss_value, ids, grads, stats)
    };
    clip_global_norm(&mut grads, cfg.clip_norm);
    let store = net.store_mut();
    state.weight_opt.begin_step();
    for (id, g) in ids.iter().zip(&grads) {
        state
            .weight_opt
            .update(id.index(), store.get_mut(*id).data_mut(), g, lrate);
    }
    for s in &stats {
        s.apply(store);
    }
    Ok(loss_value)
}

/// Loss and token error rate on held-out utterances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    /// Mean per-utterance CTC loss.
    pub loss: f64,
    pub token_error_rate: f64,
}

/// Evaluates in inference mode (no dropout, running batch-norm statistics).
pub fn evaluate<N: Network>(net: &N, utts: &[Utterance], batch_size: usize) -> Result<EvalMetrics> {
    if utts.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut total = 0.0;
    let mut er = CorpusErrorRate::default();
    for idx in batch_order(utts.len(), batch_size, None::<&mut rand_chacha::ChaCha8Rng>) {
        let chunk: Vec<&Utterance> = idx.iter().map(|&i| &utts[i]).collect();
        let batch = Batch::collate(Split::Valid, &chunk)?;
        let mut ctx = net.context(false, false, &mut rng);
        let x = ctx.tape.constant(batch.features.clone());
        let logits = net.forward(&mut ctx, x, &batch.segments)?;
        let loss = objective(&mut ctx, logits, &batch, 0.0)?;
        total += ctx.tape.value(loss).item() * chunk.len() as f64;
        for (h, r) in greedy_decode_batch(ctx.tape.value(logits), &batch.segments)
            .iter()
            .zip(&batch.labels)
        {
            er.add(h, r);
        }
    }
    Ok(EvalMetrics {
        loss: total / utts.len() as f64,
        token_error_rate: er.rate(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub train_loss: f64,
    pub valid: EvalMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Step and message of a non-finite loss. The weights are rolled back
    /// to the end of the last completed epoch.
    pub diverged: Option<(u64, String)>,
}

/// Trains the weights of `net` on the training split with the Noam
/// schedule, evaluating on the validation split after every epoch.
pub fn train_model<N: Network>(
    net: &mut N,
    data: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        diverged: None,
    };
    let mut last_good = net.store().clone();
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let order = batch_order(data.train.len(), cfg.batch_size, Some(&mut state.rng));
        for idx in &order {
            let chunk: Vec<&Utterance> = idx.iter().map(|&i| &data.train[i]).collect();
            let batch = Batch::collate(Split::Train, &chunk)?;
            let lrate = super::schedule::noam_lrate(state.step + 1, &cfg.noam)?;
            match weight_step(net, &batch, state, lrate, cfg) {
                Ok(l) => sum += l,
                Err(Error::NonFinite { what, step }) => {
                    *net.store_mut() = last_good;
                    report.diverged = Some((step, what));
                    return Ok(report);
                }
                Err(e) => return Err(e),
            }
            state.step += 1;
        }
        let valid = evaluate(net, &data.valid, cfg.batch_size)?;
        report.epochs.push(EpochMetrics {
            epoch,
            train_loss: sum / order.len() as f64,
            valid,
        });
        last_good = net.store().clone();
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct RetrainOutcome {
    pub model: Model,
    pub report: TrainReport,
}

/// Builds `genotype` from scratch with `seed` and trains it.
pub fn retrain(
    genotype: &Genotype,
    space: &SearchSpaceConfig,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RetrainOutcome> {
    let mut model = materialize(genotype, space, seed)?;
    let mut state = TrainState::new(seed);
    let report = train_model(&mut model, data, cfg, &mut state)?;
    Ok(RetrainOutcome { model, report })
}
