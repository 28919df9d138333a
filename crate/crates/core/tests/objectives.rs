use conformer_nas::objectives::{
    ctc_greedy_decode, ctc_loss, ctc_min_frames, ctc_nll, smoothing_penalty, token_error_rate,
    LabelSequence, BLANK,
};
use conformer_nas::tensor::gradcheck::GradCheck;
use conformer_nas::tensor::{Segments, Tape, Tensor};
use conformer_nas::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seq(t: &[usize]) -> LabelSequence {
    LabelSequence::new(t.to_vec()).unwrap()
}

fn log_softmax_rows(x: &[f64], vocab: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(vocab) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        out.extend(row.iter().map(|v| v - z));
    }
    out
}

fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = BLANK;
    for &k in path {
        if k != BLANK && k != prev {
            out.push(k);
        }
        prev = k;
    }
    out
}

/// Sums the probability of every frame-level path that collapses to `labels`.
fn brute_force_nll(logp: &[f64], vocab: usize, labels: &[usize]) -> f64 {
    let frames = logp.len() / vocab;
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    loop {
        if collapse(&path) == labels {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| logp[t * vocab + k])
                .sum::<f64>()
                .exp();
        }
        let mut i = 0;
        loop {
            if i == frames {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < vocab {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn matches_alignment_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..300 {
        let vocab = rng.random_range(2..=4);
        let frames = rng.random_range(1..=6);
        let len = rng.random_range(0..=3);
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(1..vocab)).collect();
        let labels = seq(&labels);
        if ctc_min_frames(&labels) > frames {
            continue;
        }
        let raw: Vec<f64> = (0..frames * vocab)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let logp = log_softmax_rows(&raw, vocab);
        let (nll, _) = ctc_nll(&logp, vocab, &labels).unwrap();
        let oracle = brute_force_nll(&logp, vocab, labels.tokens());
        assert!(
            (nll - oracle).abs() <= 1e-8,
            "{labels} T={frames}: {nll} vs {oracle}"
        );
        checked += 1;
    }
    assert!(checked > 150);
}

#[test]
fn two_frame_hand_example() {
    // Uniform over {blank, a}: paths for "a" are (a,a), (a,-), (-,a).
    let logp = vec![0.5f64.ln(); 4];
    let (nll, _) = ctc_nll(&logp, 2, &seq(&[1])).unwrap();
    assert!((nll - -(0.75f64).ln()).abs() < 1e-12);
}

#[test]
fn single_frame_emits_one_symbol() {
    let logp = log_softmax_rows(&[0.3, -1.0, 2.0], 3);
    let (nll, _) = ctc_nll(&logp, 3, &seq(&[2])).unwrap();
    assert!((nll + logp[2]).abs() < 1e-12);
    let (nll, _) = ctc_nll(&logp, 3, &LabelSequence::empty()).unwrap();
    assert!((nll + logp[BLANK]).abs() < 1e-12);
    assert!(ctc_nll(&logp, 3, &seq(&[1, 2])).is_err());
}

#[test]
fn infeasible_alignment_is_an_error() {
    let logp = log_softmax_rows(&[0.0; 2 * 3], 3);
    let err = ctc_nll(&logp, 3, &seq(&[1, 1])).unwrap_err();
    assert!(
        matches!(
            err,
            Error::CtcInfeasible {
                frames: 2,
                labels: 2,
                repeats: 1
            }
        ),
        "{err}"
    );
    assert_eq!(ctc_min_frames(&seq(&[1, 1, 2, 2, 2])), 8);
}

#[test]
fn blank_in_labels_is_rejected() {
    assert!(LabelSequence::new(vec![1, 0]).is_err());
    let logp = log_softmax_rows(&[0.0; 6], 3);
    assert!(ctc_nll(&logp, 3, &seq(&[3])).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let segs = Segments::from_lengths(&[5, 4]).unwrap();
    let labels = vec![seq(&[1, 2, 2]), seq(&[3])];
    for trial in 0..20 {
        let x = Tensor::new(
            vec![9, 4],
            (0..36).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let report = GradCheck::default()
            .run(&[x], |t, v| ctc_loss(t, v[0], &segs, &labels))
            .unwrap();
        assert!(
            report.max_rel_error() <= 1e-4,
            "trial {trial}: {:?}",
            report.rel_errors
        );
    }
}

#[test]
fn smoothing_penalty_is_zero_at_uniform_and_differentiable() {
    let mut tape = Tape::new();
    let lp = tape.constant(Tensor::full(&[3, 4], 0.25f64.ln()));
    let p = smoothing_penalty(&mut tape, lp, 0.1).unwrap();
    assert!(tape.value(p).item().abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::new(
        vec![3, 4],
        (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let report = GradCheck::default()
        .run(&[x], |t, v| {
            let lp = t.log_softmax(v[0], 1)?;
            smoothing_penalty(t, lp, 0.1)
        })
        .unwrap();
    assert!(report.max_rel_error() <= 1e-4);
}

#[test]
fn greedy_decoding_of_peaked_logits_round_trips() {
    let frames = [1, 1, 0, 2, 0, 2, 3];
    let mut t = Tensor::zeros(&[frames.len(), 4]);
    for (i, &k) in frames.iter().enumerate() {
        t.data_mut()[i * 4 + k] = 5.0;
    }
    let hyp = ctc_greedy_decode(&t);
    assert_eq!(hyp.tokens(), &[1, 2, 2, 3]);
    assert_eq!(token_error_rate(&hyp, &seq(&[1, 2, 2, 3])).rate, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancies_are_distributions_per_frame(
        vocab in 2usize..6,
        extra in 0usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(1..vocab)).collect();
        let labels = seq(&labels);
        let frames = ctc_min_frames(&labels).max(1) + extra;
        let raw: Vec<f64> = (0..frames * vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logp = log_softmax_rows(&raw, vocab);
        let (nll, grad) = ctc_nll(&logp, vocab, &labels).unwrap();
        prop_assert!(nll >= -1e-12 && nll.is_finite());
        for row in grad.chunks(vocab) {
            let s: f64 = row.iter().sum();
            prop_assert!((s + 1.0).abs() < 1e-9, "row sum {}", s);
        }
    }

    #[test]
    fn error_rate_is_symmetric_distance(a in prop::collection::vec(1usize..5, 0..8), b in prop::collection::vec(1usize..5, 1..8)) {
        let d1 = token_error_rate(&seq(&a), &seq(&b)).edits;
        let d2 = token_error_rate(&seq(&b), &seq(&a)).edits;
        prop_assert_eq!(d1, d2);
        prop_assert!(d1 <= a.len().max(b.len()));
        prop_assert!(d1 >= a.len().abs_diff(b.len()));
    }

    /// The best single path is one of the alignments of its own collapse,
    /// so the CTC loss of the greedy hypothesis never exceeds that path's
    /// negative log-probability.
    #[test]
    fn greedy_path_bounds_the_loss_of_its_decoding(
        frames in 1usize..9,
        vocab in 2usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..frames * vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logp = log_softmax_rows(&logits, vocab);
        let hyp = ctc_greedy_decode(&Tensor::new(vec![frames, vocab], logits).unwrap());
        let best: f64 = logp.chunks(vocab).map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).sum();
        let (nll, _) = ctc_nll(&logp, vocab, &hyp).unwrap();
        prop_assert!(nll <= -best + 1e-9, "nll {} path {}", nll, -best);
    }
}
