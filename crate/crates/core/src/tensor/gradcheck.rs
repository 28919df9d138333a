//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates the forward function, so it stays
//! independent of every backward rule it is used to verify.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Probe at most this many coordinates per input (evenly strided).
    pub max_coords: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            max_coords: None,
        }
    }
}

/// Outcome of a check: one relative error per input tensor.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub rel_errors: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// `||a - b|| / max(||a||, ||b||)` over the probed coordinates, with a floor
/// of 1e-6 on the denominator: gradients that vanish analytically (such as
/// a key bias under softmax shift invariance) leave only finite-difference
/// round-off, which is then measured absolutely.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

impl GradCheck {
    pub fn with_max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    fn coords(&self, len: usize) -> Vec<usize> {
        match self.max_coords {
            Some(m) if m < len => {
                let stride = len as f64 / m as f64;
                (0..m)
                    .map(|i| ((i as f64 + 0.5) * stride) as usize)
                    .collect()
            }
            _ => (0..len).collect(),
        }
    }

    /// Compares the tape gradient of the scalar `f(inputs)` against central
    /// differences. `f` must be deterministic in its inputs.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let mut grads = tape.backward(loss)?;

        let eval = |values: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.value(out).item())
        };

        let mut rel_errors = Vec::with_capacity(inputs.len());
        let mut probe = inputs.to_vec();
        for (i, var) in vars.iter().enumerate() {
            let analytic = grads
                .take(*var)
                .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
            let coords = self.coords(inputs[i].len());
            let mut num = Vec::with_capacity(coords.len());
            let mut ana = Vec::with_capacity(coords.len());
            for &c in &coords {
                let orig = inputs[i].data()[c];
                probe[i].data_mut()[c] = orig + self.step;
                let up = eval(&probe)?;
                probe[i].data_mut()[c] = orig - self.step;
                let down = eval(&probe)?;
                probe[i].data_mut()[c] = orig;
                let n = (up - down) / (2.0 * self.step);
                if !n.is_finite() {
                    return Err(Error::invalid("non-finite finite difference"));
                }
                num.push(n);
                ana.push(analytic.data()[c]);
            }
            rel_errors.push(relative_error(&ana, &num));
        }
        Ok(GradReport { rel_errors })
    }
}
