use super::LabelSequence;

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRate {
    pub edits: usize,
    pub reference_len: usize,
    /// `edits / reference_len`; 0 for two empty sequences and infinite for
    /// a non-empty hypothesis against an empty reference.
    pub rate: f64,
    /// Set when the reference is empty but the hypothesis is not.
    pub unbounded: bool,
}

pub fn token_error_rate(hyp: &LabelSequence, reference: &LabelSequence) -> ErrorRate {
    let edits = edit_distance(hyp.tokens(), reference.tokens());
    let n = reference.len();
    let (rate, unbounded) = match (n, edits) {
        (0, 0) => (0.0, false),
        (0, _) => (f64::INFINITY, true),
        _ => (edits as f64 / n as f64, false),
    };
    ErrorRate {
        edits,
        reference_len: n,
        rate,
        unbounded,
    }
}

/// Error rate pooled over many utterances: total edits over total
/// reference tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorpusErrorRate {
    pub edits: usize,
    pub reference_len: usize,
}

impl CorpusErrorRate {
    pub fn add(&mut self, hyp: &LabelSequence, reference: &LabelSequence) {
        self.edits += edit_distance(hyp.tokens(), reference.tokens());
        self.reference_len += reference.len();
    }

    pub fn rate(&self) -> f64 {
        match (self.reference_len, self.edits) {
            (0, 0) => 0.0,
            (0, _) => f64::INFINITY,
            (n, e) => e as f64 / n as f64,
        }
    }
}
