use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoamConfig {
    pub d_model: usize,
    pub warmup_steps: u64,
    pub lr_scale: f64,
}

impl Default for NoamConfig {
    fn default() -> Self {
        NoamConfig {
            d_model: 256,
            warmup_steps: 25_000,
            lr_scale: 1.0,
        }
    }
}

impl NoamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0
            || self.d_model == 0
            || !(self.lr_scale > 0.0 && self.lr_scale.is_finite())
        {
            return Err(Error::invalid(
                "noam schedule needs warmup_steps >= 1, d_model >= 1, lr_scale > 0",
            ));
        }
        Ok(())
    }
}

/// `lr_scale * d_model^-0.5 * min(S * warmup^-1.5, S^-0.5)` for `S >= 1`.
pub fn noam_lrate(step: u64, cfg: &NoamConfig) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("noam learning rate is undefined at step 0"));
    }
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok(cfg.lr_scale * (cfg.d_model as f64).powf(-0.5) * (s * w.powf(-1.5)).min(s.powf(-0.5)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DssConfig {
    pub beta: f64,
    pub warmup_steps: u64,
    /// Update the architecture on every step.
    pub force_one: bool,
}

impl Default for DssConfig {
    fn default() -> Self {
        DssConfig {
            beta: 2.0,
            warmup_steps: 25_000,
            force_one: false,
        }
    }
}

impl DssConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) || self.warmup_steps == 0 {
            return Err(Error::invalid(
                "search schedule needs beta > 0 and warmup_steps >= 1",
            ));
        }
        Ok(())
    }
}

/// Weight steps required between architecture updates:
/// `max(beta * (S - warmup) / warmup, 0)^-0.5`, infinite through warm-up.
pub fn dss_threshold(step: u64, cfg: &DssConfig) -> f64 {
    if cfg.force_one {
        return 1.0;
    }
    let w = cfg.warmup_steps as f64;
    let inner = (cfg.beta * (step as f64 - w) / w).max(0.0);
    if inner == 0.0 {
        f64::INFINITY
    } else {
        inner.powf(-0.5)
    }
}
