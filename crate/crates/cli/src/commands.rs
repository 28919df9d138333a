use std::fs;
use std::path::Path;

use conformer_nas::bilevel_trainer::{
    evaluate, load_checkpoint, run_random_search, run_search, save_checkpoint, train_model,
    CheckpointHeader, SearchRunLog, TrainState, TrialRecord,
};
use conformer_nas::conformer::{CandidateOp, Slot};
use conformer_nas::data_harness::{generate_dataset, Dataset, Split};
use conformer_nas::search_space::{
    build_supernet, count_architectures, derive_genotype, materialize, AlphaTable, Genotype,
    Network, SearchSpaceConfig, ALPHA_CSV_HEADER,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{JsonLines, OutDir};

/// Genotype as one string per block, for JSON records.
pub fn genotype_ops(g: &Genotype) -> Vec<String> {
    g.blocks()
        .iter()
        .map(|b| format!("{} {} {}", b[0], b[1], b[2]))
        .collect()
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_genotype(path: &Path, space: &SearchSpaceConfig) -> Result<Genotype, CliError> {
    let g: Genotype = read_text(path)?.parse()?;
    g.validate(space)?;
    Ok(g)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(generate_dataset(&cfg.task)?)
}

#[derive(Serialize)]
struct SearchEpochRecord {
    epoch: usize,
    step: u64,
    train_loss: f64,
    alpha_updates: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchSummary {
    pub steps: usize,
    pub alpha_updates: usize,
    pub final_train_loss: f64,
    pub genotype: Vec<String>,
}

/// Runs the architecture search and writes its artifacts into `out`. The
/// step log is written even when the run fails.
pub fn search_into(
    cfg: &RunConfig,
    data: &Dataset,
    out: &OutDir,
) -> Result<(Genotype, SearchSummary), CliError> {
    let search = cfg.search_config();
    let mut net = build_supernet(&cfg.space, cfg.seed)?;
    let mut state = TrainState::new(cfg.seed);
    let mut log = SearchRunLog::new(&cfg.space);
    let result = run_search(&mut net, data, &search, &mut state, &mut log);
    out.write("search_log.csv", &log.to_csv())?;
    let outcome = result?;

    let per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let mut alpha_csv = format!("{ALPHA_CSV_HEADER}\n");
    for row in AlphaTable::zeros(&cfg.space).csv_rows(0, &cfg.space) {
        alpha_csv.push_str(&row);
        alpha_csv.push('\n');
    }
    let mut metrics = JsonLines::new(out, "metrics.jsonl");
    for (e, (alpha, rows)) in outcome
        .epoch_alphas
        .iter()
        .zip(log.rows.chunks(per_epoch))
        .enumerate()
    {
        let step = rows.last().map_or(0, |r| r.step + 1);
        for row in alpha.csv_rows(step, &cfg.space) {
            alpha_csv.push_str(&row);
            alpha_csv.push('\n');
        }
        metrics.push(&SearchEpochRecord {
            epoch: e + 1,
            step,
            train_loss: rows.iter().map(|r| r.train_loss).sum::<f64>() / rows.len() as f64,
            alpha_updates: rows.iter().filter(|r| r.alpha_updated).count(),
        })?;
    }
    out.write("alpha.csv", &alpha_csv)?;
    out.write("genotype.txt", &outcome.genotype.to_string())?;
    let header =
        CheckpointHeader::from_state("supernet", &state, &cfg.hash(), Some(&outcome.genotype));
    save_checkpoint(
        &out.path("checkpoint"),
        &header,
        net.store(),
        Some(&net.alpha),
    )?;

    let summary = SearchSummary {
        steps: log.rows.len(),
        alpha_updates: log.alpha_update_steps().len(),
        final_train_loss: log.rows.last().map_or(f64::NAN, |r| r.train_loss),
        genotype: genotype_ops(&outcome.genotype),
    };
    Ok((outcome.genotype, summary))
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RetrainRecord {
    Epoch {
        epoch: usize,
        train_loss: f64,
        valid_loss: f64,
        valid_ter: f64,
    },
    Final {
        genotype: Vec<String>,
        weights: usize,
        valid_loss: f64,
        valid_ter: f64,
        test_loss: f64,
        test_ter: f64,
        diverged_at: Option<u64>,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct RetrainSummary {
    pub valid_loss: f64,
    pub valid_ter: f64,
    pub test_loss: f64,
    pub test_ter: f64,
    pub diverged_at: Option<u64>,
}

/// Trains `genotype` from scratch; writes metrics.jsonl and checkpoint/.
pub fn retrain_into(
    cfg: &RunConfig,
    data: &Dataset,
    genotype: &Genotype,
    out: &OutDir,
) -> Result<RetrainSummary, CliError> {
    let tcfg = cfg.train_config(cfg.retrain_epochs);
    let mut model = materialize(genotype, &cfg.space, cfg.seed)?;
    let mut state = TrainState::new(cfg.seed);
    let report = train_model(&mut model, data, &tcfg, &mut state)?;
    let mut metrics = JsonLines::new(out, "metrics.jsonl");
    for m in &report.epochs {
        metrics.push(&RetrainRecord::Epoch {
            epoch: m.epoch,
            train_loss: m.train_loss,
            valid_loss: m.valid.loss,
            valid_ter: m.valid.token_error_rate,
        })?;
    }
    let valid = evaluate(&model, &data.valid, cfg.batch_size)?;
    let test = evaluate(&model, &data.test, cfg.batch_size)?;
    let diverged_at = report.diverged.as_ref().map(|(s, _)| *s);
    metrics.push(&RetrainRecord::Final {
        genotype: genotype_ops(genotype),
        weights: model.weight_count(),
        valid_loss: valid.loss,
        valid_ter: valid.token_error_rate,
        test_loss: test.loss,
        test_ter: test.token_error_rate,
        diverged_at,
    })?;
    let header = CheckpointHeader::from_state("model", &state, &cfg.hash(), Some(genotype));
    save_checkpoint(&out.path("checkpoint"), &header, model.store(), None)?;
    if let Some((step, what)) = &report.diverged {
        return Err(conformer_nas::Error::NonFinite {
            what: what.clone(),
            step: *step,
        }
        .into());
    }
    Ok(RetrainSummary {
        valid_loss: valid.loss,
        valid_ter: valid.token_error_rate,
        test_loss: test.loss,
        test_ter: test.token_error_rate,
        diverged_at,
    })
}

pub fn cmd_search(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    out.write("config.txt", &cfg.render())?;
    let data = dataset(cfg)?;
    let (genotype, s) = search_into(cfg, &data, out)?;
    print!("{genotype}");
    println!(
        "search: {} steps, {} architecture updates, final train loss {:.4}",
        s.steps, s.alpha_updates, s.final_train_loss
    );
    Ok(())
}

pub fn cmd_retrain(cfg: &RunConfig, genotype_path: &Path, out: &OutDir) -> Result<(), CliError> {
    let genotype = read_genotype(genotype_path, &cfg.space)?;
    out.write("config.txt", &cfg.render())?;
    let data = dataset(cfg)?;
    let s = retrain_into(cfg, &data, &genotype, out)?;
    println!(
        "retrain: valid loss {:.4} ter {:.4}, test loss {:.4} ter {:.4}",
        s.valid_loss, s.valid_ter, s.test_loss, s.test_ter
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RandomRecord {
    Trial {
        trial: usize,
        seed: u64,
        genotype: Vec<String>,
        valid_loss: f64,
        valid_ter: f64,
        diverged: bool,
    },
    Selection {
        best_trial: usize,
        genotype: Vec<String>,
        valid_loss: f64,
        valid_ter: f64,
        median_valid_loss: f64,
    },
}

impl From<&TrialRecord> for RandomRecord {
    fn from(t: &TrialRecord) -> Self {
        RandomRecord::Trial {
            trial: t.trial,
            seed: t.seed,
            genotype: genotype_ops(&t.genotype),
            valid_loss: t.valid_loss,
            valid_ter: t.valid_ter,
            diverged: t.diverged,
        }
    }
}

/// Upper median, so the value is always one of the trial losses.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn cmd_random_search(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    out.write("config.txt", &cfg.render())?;
    let data = dataset(cfg)?;
    let tcfg = cfg.train_config(cfg.random_epochs);
    let mut records = JsonLines::new(out, "random_search.jsonl");
    let mut write_err = None;
    let outcome = run_random_search(&cfg.space, &data, &tcfg, cfg.random_trials, cfg.seed, |t| {
        println!(
            "trial {:>2}: {} loss {:.4} ter {:.4}",
            t.trial,
            genotype_ops(&t.genotype).join(" | "),
            t.valid_loss,
            t.valid_ter
        );
        if let Err(e) = records.push(&RandomRecord::from(t)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let best = outcome.best();
    let losses: Vec<f64> = outcome.trials.iter().map(|t| t.valid_loss).collect();
    records.push(&RandomRecord::Selection {
        best_trial: best.trial,
        genotype: genotype_ops(&best.genotype),
        valid_loss: best.valid_loss,
        valid_ter: best.valid_ter,
        median_valid_loss: median(&losses),
    })?;
    out.write("genotype.txt", &best.genotype.to_string())?;
    println!("selected trial {}", best.trial);
    print!("{}", best.genotype);
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint).map_err(|e| match e {
        conformer_nas::Error::Io(io) => CliError::io(checkpoint, io),
        other => other.into(),
    })?;
    if ckpt.header.config_hash != cfg.hash() {
        eprintln!(
            "warning: checkpoint was written under config {}, evaluating under {}",
            ckpt.header.config_hash,
            cfg.hash()
        );
    }
    let data = dataset(cfg)?;
    let utts = data.split(split);
    let metrics = match ckpt.header.kind.as_str() {
        "supernet" => {
            let mut net = build_supernet(&cfg.space, cfg.seed)?;
            let (store, alpha) = net.parts_mut();
            ckpt.restore(store, Some(alpha))?;
            evaluate(&net, utts, cfg.batch_size)?
        }
        "model" => {
            let genotype = ckpt
                .header
                .genotype
                .as_ref()
                .ok_or_else(|| CliError::Config("model checkpoint has no genotype".into()))?;
            let mut net = materialize(genotype, &cfg.space, cfg.seed)?;
            ckpt.restore(net.store_mut(), None)?;
            evaluate(&net, utts, cfg.batch_size)?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown checkpoint kind {other:?}"
            )))
        }
    };
    println!(
        "{split}: loss {:.6} token_error_rate {:.6}",
        metrics.loss, metrics.token_error_rate
    );
    Ok(())
}

pub fn cmd_count_space(cfg: &RunConfig) -> Result<(), CliError> {
    println!("{}", count_architectures(&cfg.space)?);
    Ok(())
}

/// Reads the final row of a search log and prints the per-slot weights
/// and the genotype they would derive. The search space is recovered from
/// the column names.
pub fn cmd_inspect_alpha(log_path: &Path) -> Result<(), CliError> {
    let text = read_text(log_path)?;
    let bad = |detail: String| {
        CliError::Engine(conformer_nas::Error::Parse {
            what: "search log".into(),
            detail,
        })
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .collect();
    let last = lines
        .rfind(|l| !l.trim().is_empty())
        .ok_or_else(|| bad("no rows".into()))?;
    let values: Vec<&str> = last.split(',').collect();
    if values.len() != header.len() {
        return Err(bad(format!(
            "row has {} fields, header has {}",
            values.len(),
            header.len()
        )));
    }

    let mut columns = Vec::new();
    for (name, value) in header.iter().zip(&values).skip(6) {
        let mut parts = name.splitn(3, '.');
        let (b, slot, op) = match (parts.next(), parts.next(), parts.next()) {
            (Some(b), Some(s), Some(o)) => (b, s, o),
            _ => return Err(bad(format!("column {name:?}"))),
        };
        let block: usize = b
            .strip_prefix('b')
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("column {name:?}")))?;
        let slot: Slot = slot.parse()?;
        let op = CandidateOp::parse_any(op)?;
        let w: f64 = value
            .parse()
            .map_err(|_| bad(format!("weight {value:?}")))?;
        columns.push((block, slot, op, w));
    }
    let num_blocks = columns
        .iter()
        .map(|c| c.0 + 1)
        .max()
        .ok_or_else(|| bad("no weight columns".into()))?;
    let mut space = SearchSpaceConfig {
        num_blocks,
        ..SearchSpaceConfig::default()
    };
    for slot in Slot::ALL {
        space.candidates[slot.index()] = columns
            .iter()
            .filter(|c| c.0 == 0 && c.1 == slot)
            .map(|c| c.2)
            .collect();
    }
    let mut alpha = AlphaTable::zeros(&space);
    for b in 0..num_blocks {
        for slot in Slot::ALL {
            let ws: Vec<f64> = columns
                .iter()
                .filter(|c| c.0 == b && c.1 == slot)
                .map(|c| c.3)
                .collect();
            let dst = alpha.get_mut(b, slot);
            if ws.len() != dst.len() {
                return Err(bad(format!(
                    "block {b} {slot} has {} columns, block 0 has {}",
                    ws.len(),
                    dst.len()
                )));
            }
            let parts: Vec<String> = space
                .candidates(slot)
                .iter()
                .zip(&ws)
                .map(|(op, w)| format!("{op}={w:.6}"))
                .collect();
            println!("block {b} {slot}: {}", parts.join(" "));
            // Logits up to a constant; argmax and ties are preserved.
            for (d, w) in dst.iter_mut().zip(ws) {
                *d = w.ln();
            }
        }
    }
    print!("{}", derive_genotype(&alpha, &space)?);
    Ok(())
}

#[derive(Serialize)]
struct CompareRecord<'a> {
    record: &'static str,
    mode: &'a str,
    steps: usize,
    alpha_updates: usize,
    genotype: Vec<String>,
    search_final_train_loss: f64,
    valid_loss: f64,
    valid_ter: f64,
    test_loss: f64,
    test_ter: f64,
}

#[derive(Serialize)]
struct PairedRecord {
    record: &'static str,
    same_genotype: bool,
    valid_loss_delta: f64,
    valid_ter_delta: f64,
    test_loss_delta: f64,
    test_ter_delta: f64,
}

/// Searches once with the dynamic schedule and once with an architecture
/// update every step, retrains both results and writes a paired report.
pub fn cmd_compare(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    out.write("config.txt", &cfg.render())?;
    let data = dataset(cfg)?;
    let mut report = JsonLines::new(out, "compare.jsonl");
    let mut results = Vec::new();
    for (mode, force_one) in [("dss", false), ("one_step", true)] {
        let mode_cfg = RunConfig {
            force_one,
            ..cfg.clone()
        };
        let dir = out.subdir(mode)?;
        dir.write("config.txt", &mode_cfg.render())?;
        let (genotype, s) = search_into(&mode_cfg, &data, &dir)?;
        let r = retrain_into(&mode_cfg, &data, &genotype, &dir.subdir("retrain")?)?;
        report.push(&CompareRecord {
            record: "mode",
            mode,
            steps: s.steps,
            alpha_updates: s.alpha_updates,
            genotype: s.genotype.clone(),
            search_final_train_loss: s.final_train_loss,
            valid_loss: r.valid_loss,
            valid_ter: r.valid_ter,
            test_loss: r.test_loss,
            test_ter: r.test_ter,
        })?;
        println!(
            "{mode:>8}: {} alpha updates / {} steps, valid loss {:.4} ter {:.4}, test loss {:.4} ter {:.4}, {}",
            s.alpha_updates,
            s.steps,
            r.valid_loss,
            r.valid_ter,
            r.test_loss,
            r.test_ter,
            s.genotype.join(" | ")
        );
        results.push((s, r));
    }
    let (a, b) = (&results[0], &results[1]);
    report.push(&PairedRecord {
        record: "paired",
        same_genotype: a.0.genotype == b.0.genotype,
        valid_loss_delta: a.1.valid_loss - b.1.valid_loss,
        valid_ter_delta: a.1.valid_ter - b.1.valid_ter,
        test_loss_delta: a.1.test_loss - b.1.test_loss,
        test_ter_delta: a.1.test_ter - b.1.test_ter,
    })?;
    Ok(())
}
