use super::{LabelSequence, BLANK};
use crate::tensor::{Segments, Tensor};

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
pub fn ctc_greedy_decode(logits: &Tensor) -> LabelSequence {
    let vocab = *logits.shape().last().unwrap();
    decode_rows(logits.data(), vocab)
}

fn decode_rows(data: &[f64], vocab: usize) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = BLANK;
    for row in data.chunks(vocab) {
        let k = argmax(row);
        if k != BLANK && k != prev {
            out.push(k);
        }
        prev = k;
    }
    LabelSequence(out)
}

/// Decodes every segment of a batched `[frames x vocab]` logit matrix.
pub fn greedy_decode_batch(logits: &Tensor, segments: &Segments) -> Vec<LabelSequence> {
    let vocab = *logits.shape().last().unwrap();
    segments
        .iter()
        .map(|seg| decode_rows(&logits.data()[seg.start * vocab..seg.end * vocab], vocab))
        .collect()
}
