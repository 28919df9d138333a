use std::collections::HashSet;

use conformer_nas::data_harness::{
    batch_order, feature_stats, generate_dataset, load_dataset, save_dataset, spec_augment,
    AugmentConfig, Batch, Split, SyntheticTaskSpec, Utterance,
};
use conformer_nas::objectives::{ctc_loss, ctc_min_frames, greedy_decode_batch, CorpusErrorRate};
use conformer_nas::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec(width: usize, noise: f64, seed: u64) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        width,
        noise,
        seed,
        train_size: 60,
        valid_size: 20,
        test_size: 20,
        ..SyntheticTaskSpec::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = small_spec(15, 0.3, 4);
    assert_eq!(
        generate_dataset(&spec).unwrap(),
        generate_dataset(&spec).unwrap()
    );
    let other = generate_dataset(&SyntheticTaskSpec { seed: 5, ..spec }).unwrap();
    assert_ne!(other, generate_dataset(&spec).unwrap());
}

#[test]
fn splits_do_not_share_utterances() {
    let data = generate_dataset(&small_spec(15, 0.3, 1)).unwrap();
    let key = |u: &Utterance| {
        u.features
            .data()
            .iter()
            .map(|x| x.to_bits())
            .collect::<Vec<_>>()
    };
    let train: HashSet<_> = data.train.iter().map(key).collect();
    assert!(data
        .valid
        .iter()
        .chain(&data.test)
        .all(|u| !train.contains(&key(u))));
}

#[test]
fn infeasible_specs_are_rejected() {
    let spec = SyntheticTaskSpec {
        min_frames: 20,
        max_frames: 30,
        label_rate: 0.1,
        ..small_spec(15, 0.0, 0)
    };
    assert!(generate_dataset(&spec).is_err());
    assert!(generate_dataset(&SyntheticTaskSpec {
        width: 0,
        ..small_spec(15, 0.0, 0)
    })
    .is_err());
    assert!(generate_dataset(&SyntheticTaskSpec {
        feature_dim: 5,
        ..small_spec(15, 0.0, 0)
    })
    .is_err());
}

/// Reads tokens back from noise-free standardized features: each raw
/// channel is binary, so "on" frames are exactly the positive ones.
fn decode_planted(u: &Utterance, spec: &SyntheticTaskSpec) -> Vec<usize> {
    let (na, nb) = spec.code_sizes();
    let f = spec.feature_dim;
    let on = |t: usize, c: usize| u.features.data()[t * f + c] > 0.0;
    let mut out = Vec::new();
    let mut t = 0;
    while t < u.frames() {
        if let Some(a) = (0..na).find(|&a| on(t, a)) {
            let end = t + spec.width - 1;
            let b = (0..nb).find(|&b| on(end, na + b)).expect("offset code");
            assert!((t + 1..end).all(|j| on(j, na + nb)), "body frames");
            out.push(1 + a * nb + b);
            t = end + 1;
        } else {
            t += 1;
        }
    }
    out
}

#[test]
fn tokens_are_recoverable_from_the_planted_window() {
    for width in [1, 4, 15] {
        let spec = small_spec(width, 0.0, 2);
        let data = generate_dataset(&spec).unwrap();
        for u in data.train.iter().chain(&data.valid) {
            assert_eq!(
                decode_planted(u, &spec),
                u.labels.tokens(),
                "width {width} {}",
                u.id
            );
            assert!(ctc_min_frames(&u.labels) <= u.frames());
        }
    }
}

#[test]
fn linear_probe_solves_width_one_without_noise() {
    let spec = SyntheticTaskSpec {
        min_frames: 12,
        max_frames: 20,
        label_rate: 0.2,
        ..small_spec(1, 0.0, 3)
    };
    let data = generate_dataset(&spec).unwrap();
    let (f, v) = (spec.feature_dim, spec.vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = [
        Tensor::new(
            vec![f, v],
            (0..f * v).map(|_| rng.random_range(-0.1..0.1)).collect(),
        )
        .unwrap(),
        Tensor::zeros(&[v]),
    ];
    let mut m: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut s = m.clone();
    let lr = 0.05;
    for step in 1..=400 {
        let order = batch_order(data.train.len(), 16, Some(&mut rng));
        let idx = &order[0];
        let utts: Vec<&Utterance> = idx.iter().map(|&i| &data.train[i]).collect();
        let batch = Batch::collate(Split::Train, &utts).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(batch.features.clone());
        let w = tape.leaf(params[0].clone());
        let b = tape.leaf(params[1].clone());
        let y = tape.linear(x, w, b).unwrap();
        let loss = ctc_loss(&mut tape, y, &batch.segments, &batch.labels).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (k, var) in [w, b].into_iter().enumerate() {
            let g = grads.get(var).unwrap().data();
            for i in 0..g.len() {
                m[k][i] = 0.9 * m[k][i] + 0.1 * g[i];
                s[k][i] = 0.999 * s[k][i] + 0.001 * g[i] * g[i];
                let mh = m[k][i] / (1.0 - 0.9f64.powi(step));
                let sh = s[k][i] / (1.0 - 0.999f64.powi(step));
                params[k].data_mut()[i] -= lr * mh / (sh.sqrt() + 1e-8);
            }
        }
    }
    let utts: Vec<&Utterance> = data.valid.iter().collect();
    let batch = Batch::collate(Split::Valid, &utts).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(batch.features.clone());
    let w = tape.constant(params[0].clone());
    let b = tape.constant(params[1].clone());
    let y = tape.linear(x, w, b).unwrap();
    let hyps = greedy_decode_batch(tape.value(y), &batch.segments);
    let mut er = CorpusErrorRate::default();
    for (h, r) in hyps.iter().zip(&batch.labels) {
        er.add(h, r);
    }
    assert!(er.rate() <= 0.02, "probe error rate {}", er.rate());
}

#[test]
fn feature_statistics_are_stable_across_seeds() {
    let stats: Vec<_> = (0..4)
        .map(|seed| {
            let spec = SyntheticTaskSpec {
                seed,
                valid_size: 200,
                ..SyntheticTaskSpec::default()
            };
            let data = generate_dataset(&spec).unwrap();
            let s = feature_stats(&data.valid);
            let n = s.mean.len() as f64;
            (
                s.mean.iter().sum::<f64>() / n,
                s.var.iter().sum::<f64>() / n,
            )
        })
        .collect();
    for &(mean, var) in &stats {
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
    let (lo, hi) = stats
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &(_, v)| {
            (lo.min(v), hi.max(v))
        });
    assert!(hi / lo - 1.0 < 0.05);
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&small_spec(15, 0.3, 9)).unwrap();
    save_dataset(dir.path(), &data).unwrap();
    assert!(dir.path().join("train.utterances").exists());
    assert_eq!(load_dataset(dir.path()).unwrap(), data);
}

#[test]
fn collate_concatenates_in_order() {
    let data = generate_dataset(&small_spec(15, 0.3, 0)).unwrap();
    let utts = [&data.train[3], &data.train[0]];
    let b = Batch::collate(Split::Train, &utts).unwrap();
    assert_eq!(
        b.segments.lengths(),
        vec![utts[0].frames(), utts[1].frames()]
    );
    assert_eq!(
        &b.features.data()[..utts[0].features.len()],
        utts[0].features.data()
    );
    assert_eq!(b.labels[1], utts[1].labels);
    let order = batch_order(10, 4, None::<&mut ChaCha8Rng>);
    assert_eq!(order, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]]);
}

fn ones(t: usize, f: usize) -> Tensor {
    Tensor::full(&[t, f], 1.0)
}

#[test]
fn no_masks_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = ones(10, 6);
    assert_eq!(spec_augment(&x, &AugmentConfig::default(), &mut rng), x);
}

#[test]
fn masks_cover_whole_rows_and_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = AugmentConfig {
        time_masks: 2,
        max_time_width: 4,
        freq_masks: 1,
        max_freq_width: 3,
    };
    for _ in 0..50 {
        let x = Tensor::new(vec![12, 7], (1..=84).map(f64::from).collect()).unwrap();
        let y = spec_augment(&x, &cfg, &mut rng);
        let zero = |t: usize, c: usize| y.data()[t * 7 + c] == 0.0;
        let rows: Vec<usize> = (0..12).filter(|&t| (0..7).all(|c| zero(t, c))).collect();
        let cols: Vec<usize> = (0..7).filter(|&c| (0..12).all(|t| zero(t, c))).collect();
        for t in 0..12 {
            for c in 0..7 {
                let masked = rows.contains(&t) || cols.contains(&c);
                assert_eq!(zero(t, c), masked);
                if !masked {
                    assert_eq!(y.data()[t * 7 + c], x.data()[t * 7 + c]);
                }
            }
        }
    }
}

/// Probability that a fixed position is covered by one mask of uniform
/// width in 0..=max_w and uniform start.
fn cover_prob(len: usize, max_w: usize, pos: usize) -> f64 {
    let max_w = max_w.min(len);
    (0..=max_w)
        .map(|w| {
            let starts = len - w + 1;
            let covering = (0..starts).filter(|&s| s <= pos && pos < s + w).count();
            covering as f64 / starts as f64
        })
        .sum::<f64>()
        / (max_w + 1) as f64
}

#[test]
fn masked_fraction_matches_closed_form() {
    let (t, f) = (40, 12);
    let cfg = AugmentConfig {
        time_masks: 2,
        max_time_width: 8,
        freq_masks: 2,
        max_freq_width: 3,
    };
    let row_masked: Vec<f64> = (0..t)
        .map(|p| 1.0 - (1.0 - cover_prob(t, cfg.max_time_width, p)).powi(cfg.time_masks as i32))
        .collect();
    let col_masked: Vec<f64> = (0..f)
        .map(|p| 1.0 - (1.0 - cover_prob(f, cfg.max_freq_width, p)).powi(cfg.freq_masks as i32))
        .collect();
    let mut expected = 0.0;
    for r in &row_masked {
        for c in &col_masked {
            expected += 1.0 - (1.0 - r) * (1.0 - c);
        }
    }
    expected /= (t * f) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = ones(t, f);
    let draws = 10_000;
    let mut zeros = 0usize;
    for _ in 0..draws {
        zeros += spec_augment(&x, &cfg, &mut rng)
            .data()
            .iter()
            .filter(|&&v| v == 0.0)
            .count();
    }
    let observed = zeros as f64 / (draws * t * f) as f64;
    assert!(
        (observed / expected - 1.0).abs() < 0.02,
        "{observed} vs {expected}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_utterance_is_ctc_feasible(seed in any::<u64>(), width in 1usize..16) {
        let spec = SyntheticTaskSpec { min_frames: 40, max_frames: 70, label_rate: 0.04, ..small_spec(width, 0.5, seed) };
        let data = generate_dataset(&spec).unwrap();
        for u in data.train.iter().chain(&data.valid).chain(&data.test) {
            prop_assert!(ctc_min_frames(&u.labels) <= u.frames());
            prop_assert!(u.frames() >= 40 && u.frames() <= 70);
        }
    }
}
