//! Connectionist temporal classification loss, computed with the
//! forward-backward recursions in log space.

use super::LabelSequence;
use crate::error::{Error, Result};
use crate::tensor::{CustomBackward, Segments, Tape, Tensor, Var};

pub const BLANK: usize = 0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fewest frames that can emit `labels`: one per token plus a blank between
/// each pair of equal neighbours.
pub fn ctc_min_frames(labels: &LabelSequence) -> usize {
    let t = labels.tokens();
    t.len() + t.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extended(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

/// Negative log-likelihood of `labels` under per-frame log-probabilities
/// `logp` (`frames x vocab`, row-major), and its gradient with respect to
/// `logp` (minus the state occupancy posteriors).
pub fn ctc_nll(logp: &[f64], vocab: usize, labels: &LabelSequence) -> Result<(f64, Vec<f64>)> {
    labels.check_vocab(vocab)?;
    let frames = logp.len() / vocab;
    let need = ctc_min_frames(labels);
    if frames < need || frames == 0 {
        let t = labels.tokens();
        return Err(Error::CtcInfeasible {
            frames,
            labels: t.len(),
            repeats: need - t.len(),
        });
    }
    let ext = extended(labels.tokens());
    let s_len = ext.len();
    let lp = |t: usize, s: usize| logp[t * vocab + ext[s]];
    // Transition s-2 -> s is allowed for labels that differ from the label two back.
    let skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp(t, s) };
        }
    }
    let last = (frames - 1) * s_len;
    let log_p = if s_len > 1 {
        log_add(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };

    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = lp(frames - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(frames - 1, s_len - 2);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && skip(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == ninf { ninf } else { b + lp(t, s) };
        }
    }

    let mut grad = vec![0.0; logp.len()];
    for t in 0..frames {
        for s in 0..s_len {
            let i = t * s_len + s;
            if alpha[i] == ninf || beta[i] == ninf {
                continue;
            }
            // alpha and beta both include the emission at (t, s).
            let occ = (alpha[i] + beta[i] - lp(t, s) - log_p).exp();
            grad[t * vocab + ext[s]] -= occ;
        }
    }
    Ok((-log_p, grad))
}

struct CtcRule {
    /// Gradient of each utterance loss w.r.t. its log-probabilities.
    grads: Vec<f64>,
    segments: Segments,
    vocab: usize,
}

impl CustomBackward for CtcRule {
    fn name(&self) -> &'static str {
        "ctc"
    }

    fn backward(
        &self,
        grad: &[f64],
        _inputs: &[&Tensor],
        _output: &Tensor,
    ) -> Vec<Option<Vec<f64>>> {
        let mut out = self.grads.clone();
        for (b, seg) in self.segments.iter().enumerate() {
            out[seg.start * self.vocab..seg.end * self.vocab]
                .iter_mut()
                .for_each(|g| *g *= grad[b]);
        }
        vec![Some(out)]
    }
}

/// Mean CTC loss over the utterances of a batch. `logits` is
/// `[frames x vocab]` with rows split by `segments`; it is normalized with a
/// log-softmax on the tape, so gradients flow back to the raw logits.
pub fn ctc_loss(
    tape: &mut Tape,
    logits: Var,
    segments: &Segments,
    labels: &[LabelSequence],
) -> Result<Var> {
    let logp = tape.log_softmax(logits, 1)?;
    let per_utt = ctc_from_log_probs(tape, logp, segments, labels)?;
    Ok(tape.mean(per_utt))
}

/// Per-utterance CTC losses `[batch]` from normalized log-probabilities.
pub(crate) fn ctc_from_log_probs(
    tape: &mut Tape,
    logp: Var,
    segments: &Segments,
    labels: &[LabelSequence],
) -> Result<Var> {
    let (rows, vocab) = tape.value(logp).dims2()?;
    if segments.total() != rows || segments.count() != labels.len() {
        return Err(Error::invalid(format!(
            "{} segments over {} frames for {rows} frames and {} transcripts",
            segments.count(),
            segments.total(),
            labels.len()
        )));
    }
    let lp = tape.value(logp).data();
    let mut losses = Vec::with_capacity(labels.len());
    let mut grads = vec![0.0; lp.len()];
    for (seg, lab) in segments.iter().zip(labels) {
        let (nll, g) = ctc_nll(&lp[seg.start * vocab..seg.end * vocab], vocab, lab)?;
        losses.push(nll);
        grads[seg.start * vocab..seg.end * vocab].copy_from_slice(&g);
    }
    let rule = CtcRule {
        grads,
        segments: segments.clone(),
        vocab,
    };
    Ok(tape.custom(&[logp], Tensor::vector(losses), Box::new(rule)))
}

/// Label-smoothing penalty: `weight * KL(uniform || p)` averaged over frames,
/// for per-frame log-probabilities `logp`.
pub fn smoothing_penalty(tape: &mut Tape, logp: Var, weight: f64) -> Result<Var> {
    let vocab = tape.value(logp).dims2()?.1 as f64;
    // KL(u || p) = -ln V - (1/V) sum_k ln p_k; averaged over frames this is
    // -ln V - mean over all entries.
    let m = tape.mean(logp);
    let neg = tape.scale(m, -weight);
    let c = tape.constant(Tensor::scalar(-weight * vocab.ln()));
    tape.add(neg, c)
}
