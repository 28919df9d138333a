//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use conformer_nas::bilevel_trainer::{DssConfig, NoamConfig, SearchConfig, TrainConfig};
use conformer_nas::conformer::{CandidateOp, Slot};
use conformer_nas::data_harness::{AugmentConfig, SyntheticTaskSpec};
use conformer_nas::search_space::SearchSpaceConfig;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Everything a command needs. Defaults are the full-size settings,
/// with the warm-up shortened for desk-scale runs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub space: SearchSpaceConfig,
    pub task: SyntheticTaskSpec,
    pub warmup_steps: u64,
    pub lr_scale: f64,
    pub beta: f64,
    pub force_one: bool,
    pub alpha_lr: f64,
    pub label_smoothing: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub search_epochs: usize,
    pub retrain_epochs: usize,
    pub random_trials: usize,
    pub random_epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = SyntheticTaskSpec::default();
        RunConfig {
            space: SearchSpaceConfig {
                feature_dim: task.feature_dim,
                vocab: task.vocab,
                ..SearchSpaceConfig::default()
            },
            task,
            warmup_steps: 300,
            lr_scale: 1.0,
            beta: 2.0,
            force_one: false,
            alpha_lr: 3e-4,
            label_smoothing: 0.0,
            clip_norm: 5.0,
            batch_size: 8,
            augment: AugmentConfig::default(),
            search_epochs: 10,
            retrain_epochs: 10,
            random_trials: 15,
            random_epochs: 10,
            seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn op_list(ops: &[CandidateOp]) -> String {
    ops.iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn parse_ops(slot: Slot, v: &str) -> Result<Vec<CandidateOp>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let op = CandidateOp::parse_any(s).map_err(|e| e.to_string())?;
            if op.slot() != slot {
                return Err(format!("{op} is not a {slot} candidate"));
            }
            Ok(op)
        })
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn boolean(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

impl RunConfig {
    /// Canonical text form; `parse(render())` is the identity.
    pub fn render(&self) -> String {
        let s = &self.space;
        let t = &self.task;
        let a = &self.augment;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").expect("string write");
        };
        kv("space.num_blocks", s.num_blocks.to_string());
        kv("space.d_model", s.d_model.to_string());
        kv("space.mhsa", op_list(s.candidates(Slot::Mhsa)));
        kv("space.conv", op_list(s.candidates(Slot::Conv)));
        kv("space.ffn", op_list(s.candidates(Slot::Ffn)));
        kv("space.dropout", s.dropout.to_string());
        kv("space.relative_position", s.relative_position.to_string());
        kv("task.feature_dim", t.feature_dim.to_string());
        kv("task.vocab", t.vocab.to_string());
        kv("task.min_frames", t.min_frames.to_string());
        kv("task.max_frames", t.max_frames.to_string());
        kv("task.width", t.width.to_string());
        kv("task.label_rate", t.label_rate.to_string());
        kv("task.noise", t.noise.to_string());
        kv("task.train_size", t.train_size.to_string());
        kv("task.valid_size", t.valid_size.to_string());
        kv("task.test_size", t.test_size.to_string());
        kv("task.seed", t.seed.to_string());
        kv("schedule.warmup_steps", self.warmup_steps.to_string());
        kv("schedule.lr_scale", self.lr_scale.to_string());
        kv("schedule.beta", self.beta.to_string());
        kv("schedule.force_one", self.force_one.to_string());
        kv(
            "objective.label_smoothing",
            self.label_smoothing.to_string(),
        );
        kv("train.alpha_lr", self.alpha_lr.to_string());
        kv("train.clip_norm", self.clip_norm.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("augment.time_masks", a.time_masks.to_string());
        kv("augment.max_time_width", a.max_time_width.to_string());
        kv("augment.freq_masks", a.freq_masks.to_string());
        kv("augment.max_freq_width", a.max_freq_width.to_string());
        kv("search.epochs", self.search_epochs.to_string());
        kv("retrain.epochs", self.retrain_epochs.to_string());
        kv("random.trials", self.random_trials.to_string());
        kv("random.epochs", self.random_epochs.to_string());
        kv("run.seed", self.seed.to_string());
        kv("run.out_dir", self.out_dir.display().to_string());
        out
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "space.num_blocks" => self.space.num_blocks = num(key, v)?,
            "space.d_model" => self.space.d_model = num(key, v)?,
            "space.mhsa" => self.space.candidates[Slot::Mhsa.index()] = parse_ops(Slot::Mhsa, v)?,
            "space.conv" => self.space.candidates[Slot::Conv.index()] = parse_ops(Slot::Conv, v)?,
            "space.ffn" => self.space.candidates[Slot::Ffn.index()] = parse_ops(Slot::Ffn, v)?,
            "space.dropout" => self.space.dropout = num(key, v)?,
            "space.relative_position" => self.space.relative_position = boolean(key, v)?,
            "task.feature_dim" => self.task.feature_dim = num(key, v)?,
            "task.vocab" => self.task.vocab = num(key, v)?,
            "task.min_frames" => self.task.min_frames = num(key, v)?,
            "task.max_frames" => self.task.max_frames = num(key, v)?,
            "task.width" => self.task.width = num(key, v)?,
            "task.label_rate" => self.task.label_rate = num(key, v)?,
            "task.noise" => self.task.noise = num(key, v)?,
            "task.train_size" => self.task.train_size = num(key, v)?,
            "task.valid_size" => self.task.valid_size = num(key, v)?,
            "task.test_size" => self.task.test_size = num(key, v)?,
            "task.seed" => self.task.seed = num(key, v)?,
            "schedule.warmup_steps" => self.warmup_steps = num(key, v)?,
            "schedule.lr_scale" => self.lr_scale = num(key, v)?,
            "schedule.beta" => self.beta = num(key, v)?,
            "schedule.force_one" => self.force_one = boolean(key, v)?,
            "objective.label_smoothing" => self.label_smoothing = num(key, v)?,
            "train.alpha_lr" => self.alpha_lr = num(key, v)?,
            "train.clip_norm" => self.clip_norm = num(key, v)?,
            "train.batch_size" => self.batch_size = num(key, v)?,
            "augment.time_masks" => self.augment.time_masks = num(key, v)?,
            "augment.max_time_width" => self.augment.max_time_width = num(key, v)?,
            "augment.freq_masks" => self.augment.freq_masks = num(key, v)?,
            "augment.max_freq_width" => self.augment.max_freq_width = num(key, v)?,
            "search.epochs" => self.search_epochs = num(key, v)?,
            "retrain.epochs" => self.retrain_epochs = num(key, v)?,
            "random.trials" => self.random_trials = num(key, v)?,
            "random.epochs" => self.random_epochs = num(key, v)?,
            "run.seed" => self.seed = num(key, v)?,
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses a config file. Keys not listed are defaults; unknown keys,
    /// duplicates and malformed values are errors.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config(format!("line {}: {msg}", n + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key {k:?}")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        cfg.space.feature_dim = cfg.task.feature_dim;
        cfg.space.vocab = cfg.task.vocab;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: conformer_nas::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        check(self.space.validate())?;
        check(self.task.validate())?;
        check(self.search_config().validate())?;
        if self.random_trials == 0 || self.random_epochs == 0 || self.retrain_epochs == 0 {
            return Err(CliError::Config(
                "random.trials, random.epochs and retrain.epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Short stable digest of the canonical text, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let text: String = self
            .render()
            .lines()
            .filter(|l| !l.starts_with("run.out_dir"))
            .flat_map(|l| [l, "\n"])
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn noam(&self) -> NoamConfig {
        NoamConfig {
            d_model: self.space.d_model,
            warmup_steps: self.warmup_steps,
            lr_scale: self.lr_scale,
        }
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            noam: self.noam(),
            clip_norm: self.clip_norm,
            label_smoothing: self.label_smoothing,
            batch_size: self.batch_size,
            epochs,
            augment: self.augment,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            train: self.train_config(self.search_epochs),
            dss: DssConfig {
                beta: self.beta,
                warmup_steps: self.warmup_steps,
                force_one: self.force_one,
            },
            alpha_lr: self.alpha_lr,
        }
    }
}
