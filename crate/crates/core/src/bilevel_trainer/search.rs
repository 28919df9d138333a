use std::fmt::Write as _;

use super::optim::adam_update_alpha;
use super::schedule::DssConfig;
use super::state::TrainState;
use super::train::{objective, weight_step, TrainConfig};
use crate::conformer::Slot;
use crate::data_harness::{batch_order, Batch, Dataset, Split, Utterance};
use crate::error::{Error, Result};
use crate::search_space::{
    derive_genotype, AlphaTable, Genotype, Network, SearchSpaceConfig, Supernet,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Weight training settings; `epochs` is the number of search epochs.
    pub train: TrainConfig,
    pub dss: DssConfig,
    pub alpha_lr: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            train: TrainConfig::default(),
            dss: DssConfig::default(),
            alpha_lr: 3e-4,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.dss.validate()?;
        if !(self.alpha_lr > 0.0 && self.alpha_lr.is_finite()) {
            return Err(Error::invalid("alpha_lr must be positive"));
        }
        Ok(())
    }
}

/// One row of the search log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub train_loss: f64,
    /// Validation loss of the architecture update, if one happened.
    pub valid_loss: Option<f64>,
    pub lrate: f64,
    pub threshold: f64,
    pub alpha_updated: bool,
    /// Mixing weights after the step, in (block, slot, candidate) order.
    pub weights: Vec<f64>,
}

/// Per-step search log, written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchRunLog {
    pub weight_columns: Vec<String>,
    pub rows: Vec<StepLog>,
}

impl SearchRunLog {
    pub fn new(space: &SearchSpaceConfig) -> Self {
        let mut cols = Vec::new();
        for b in 0..space.num_blocks {
            for slot in Slot::ALL {
                for op in space.candidates(slot) {
                    cols.push(format!("b{b}.{slot}.{op}"));
                }
            }
        }
        SearchRunLog {
            weight_columns: cols,
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> String {
        let mut h = String::from("step,train_loss,valid_loss,lrate,S_a,alpha_updated");
        for c in &self.weight_columns {
            h.push(',');
            h.push_str(c);
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let valid = r.valid_loss.map(|v| v.to_string()).unwrap_or_default();
            write!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                r.train_loss,
                valid,
                r.lrate,
                r.threshold,
                u8::from(r.alpha_updated)
            )
            .expect("string write");
            for w in &r.weights {
                write!(out, ",{w}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Steps at which the architecture was updated.
    pub fn alpha_update_steps(&self) -> Vec<u64> {
        self.rows
            .iter()
            .filter(|r| r.alpha_updated)
            .map(|r| r.step)
            .collect()
    }
}

fn flat_weights(alpha: &AlphaTable) -> Vec<f64> {
    (0..alpha.num_blocks())
        .flat_map(|b| Slot::ALL.into_iter().flat_map(move |s| alpha.weights(b, s)))
        .collect()
}

/// First-order architecture step: gradient of the validation loss with
/// the weights held constant.
fn alpha_step(
    net: &mut Supernet,
    valid: &Batch,
    state: &mut TrainState,
    cfg: &SearchConfig,
) -> Result<f64> {
    state.access.alpha_reads[valid.split.index()] += 1;
    let step = state.step;
    let (loss_value, grads) = {
        let mut ctx = net.context(true, false, &mut state.rng);
        let x = ctx.tape.constant(valid.features.clone());
        let alpha = net.alpha_vars(&mut ctx, true);
        let logits = net.forward_with_alpha(&mut ctx, x, &valid.segments, &alpha)?;
        let loss = objective(&mut ctx, logits, valid, cfg.train.label_smoothing)?;
        let loss_value = ctx.tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("validation loss {loss_value}"),
                step,
            });
        }
        let mut g = std::mem::take(&mut ctx.tape).backward(loss)?;
        let grads: Vec<Vec<f64>> = alpha
            .iter()
            .map(|&v| g.take(v).map(Tensor::into_data).unwrap_or_default())
            .collect();
        (loss_value, grads)
    };
    let grads: Vec<Vec<f64>> = grads
        .into_iter()
        .zip(net.alpha.vectors())
        .map(|(g, a): (Vec<f64>, &Vec<f64>)| if g.is_empty() { vec![0.0; a.len()] } else { g })
        .collect();
    adam_update_alpha(&mut net.alpha, &grads, &mut state.alpha_opt, cfg.alpha_lr);
    Ok(loss_value)
}

/// One step of the alternating schedule: an architecture update on `valid`
/// if the schedule says it is due, then a weight update on `train`.
pub fn search_step(
    state: &mut TrainState,
    net: &mut Supernet,
    train: &Batch,
    valid: &Batch,
    cfg: &SearchConfig,
) -> Result<StepLog> {
    let plan = state.plan(&cfg.train.noam, &cfg.dss)?;
    let valid_loss = if plan.update_alpha {
        Some(alpha_step(net, valid, state, cfg)?)
    } else {
        None
    };
    let train_loss = weight_step(net, train, state, plan.lrate, &cfg.train)?;
    state.commit(&plan);
    Ok(StepLog {
        step: plan.step,
        train_loss,
        valid_loss,
        lrate: plan.lrate,
        threshold: plan.threshold,
        alpha_updated: plan.update_alpha,
        weights: flat_weights(&net.alpha),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    /// Architecture logits at the end of each epoch.
    pub epoch_alphas: Vec<AlphaTable>,
}

/// Runs `cfg.train.epochs` epochs of `search_step`. Each epoch shuffles
/// both splits and pairs the i-th training batch with validation batch
/// `i mod n_valid`. Rows are appended to `log` as they are produced, so a
/// failed run leaves its partial log behind.
pub fn run_search(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &SearchConfig,
    state: &mut TrainState,
    log: &mut SearchRunLog,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::invalid(
            "search needs non-empty train and valid splits",
        ));
    }
    let bs = cfg.train.batch_size;
    let mut epoch_alphas = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        let train_order = batch_order(data.train.len(), bs, Some(&mut state.rng));
        let valid_order = batch_order(data.valid.len(), bs, Some(&mut state.rng));
        for (i, idx) in train_order.iter().enumerate() {
            let t: Vec<&Utterance> = idx.iter().map(|&j| &data.train[j]).collect();
            let v: Vec<&Utterance> = valid_order[i % valid_order.len()]
                .iter()
                .map(|&j| &data.valid[j])
                .collect();
            let train = Batch::collate(Split::Train, &t)?;
            let valid = Batch::collate(Split::Valid, &v)?;
            let row = search_step(state, net, &train, &valid, cfg)?;
            log.rows.push(row);
        }
        epoch_alphas.push(net.alpha.clone());
    }
    Ok(SearchOutcome {
        genotype: derive_genotype(&net.alpha, net.config())?,
        epoch_alphas,
    })
}
