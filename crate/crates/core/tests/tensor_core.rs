use approx::assert_abs_diff_eq;
use conformer_nas::tensor::gradcheck::GradCheck;
use conformer_nas::tensor::{Segments, Tape, Tensor, Var};
use conformer_nas::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Weighted sum so that every output coordinate has a distinct gradient.
fn project(tape: &mut Tape, y: Var, seed: u64) -> conformer_nas::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check_trials(
    name: &str,
    shapes: &[&[usize]],
    f: impl Fn(&mut Tape, &[Var]) -> conformer_nas::Result<Var>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for trial in 0..20 {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let report = GradCheck::default().run(&inputs, &f).unwrap();
        assert!(
            report.max_rel_error() <= 1e-4,
            "{name} trial {trial}: rel err {:?}",
            report.rel_errors
        );
    }
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut tape = Tape::new();
    let i3 = tape.constant(Tensor::identity(3));
    let b = tape.constant(Tensor::matrix(3, 2, vec![1.0, -2.0, 3.5, 4.0, 0.0, 7.0]).unwrap());
    let y = tape.matmul(i3, b).unwrap();
    assert_eq!(tape.value(y), tape.value(b));

    let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let ones = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
    let y = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(err.to_string().contains("[2, 3] vs [2, 3]"), "{err}");
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    check_trials("matmul_sum", &[&[4, 3], &[3, 5]], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        Ok(t.sum(y))
    });
}

#[test]
fn depthwise_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[9, 4]);
    let mut k = Tensor::zeros(&[7, 4]);
    for c in 0..4 {
        k.data_mut()[3 * 4 + c] = 1.0;
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(k);
    for dilation in [1, 2] {
        let y = tape
            .depthwise_conv1d(xv, kv, dilation, &Segments::single(9))
            .unwrap();
        assert_eq!(tape.value(y), &x);
    }
}

#[test]
fn depthwise_sliding_window_example() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let k = tape.constant(Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0]).unwrap());
    let y = tape
        .depthwise_conv1d(x, k, 1, &Segments::single(5))
        .unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 6.0, 9.0, 12.0, 9.0]);
}

#[test]
fn depthwise_receptive_field_from_impulse() {
    // Impulse at the centre of a long sequence; the support of the response
    // is the receptive field.
    for (k, dilation, expected) in [(15, 2, 29), (15, 1, 15), (7, 2, 13), (11, 2, 21)] {
        let t = 64;
        let mut x = Tensor::zeros(&[t, 1]);
        x.data_mut()[t / 2] = 1.0;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let kv = tape.constant(Tensor::full(&[k, 1], 1.0));
        let y = tape
            .depthwise_conv1d(xv, kv, dilation, &Segments::single(t))
            .unwrap();
        let nz: Vec<usize> = (0..t).filter(|&i| tape.value(y).data()[i] != 0.0).collect();
        let span = nz.last().unwrap() - nz.first().unwrap() + 1;
        assert_eq!(span, expected, "k={k} dilation={dilation}");
        assert_eq!(span, (k - 1) * dilation + 1);
    }
}

#[test]
fn depthwise_rejects_even_kernel_and_zero_dilation() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[5, 2]));
    let even = tape.constant(Tensor::zeros(&[4, 2]));
    let odd = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(tape
        .depthwise_conv1d(x, even, 1, &Segments::single(5))
        .is_err());
    assert!(tape
        .depthwise_conv1d(x, odd, 0, &Segments::single(5))
        .is_err());
}

#[test]
fn depthwise_does_not_leak_across_segments() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let k = tape.constant(Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0]).unwrap());
    let segs = Segments::from_lengths(&[2, 2]).unwrap();
    let y = tape.depthwise_conv1d(x, k, 1, &segs).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 3.0, 7.0, 7.0]);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.3; 5]));
    let y = tape.softmax(x, 0).unwrap();
    for &v in tape.value(y).data() {
        assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
    }
    let x = tape.constant(Tensor::vector(vec![2f64.ln(), 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_abs_diff_eq!(tape.value(y).data()[0], 2.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(tape.value(y).data()[1], 1.0 / 3.0, epsilon = 1e-15);
    assert!(tape.softmax(x, 1).is_err());
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        xs in prop::collection::vec(-30.0f64..30.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(xs.clone()));
        let shifted = tape.constant(Tensor::vector(xs.iter().map(|v| v + c).collect()));
        let y = tape.softmax(x, 0).unwrap();
        let ys = tape.softmax(shifted, 0).unwrap();
        let total: f64 = tape.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(tape.value(y).data().iter().all(|&p| p > 0.0));
        prop_assert!(tape.value(y).max_abs_diff(tape.value(ys)) <= 1e-12);
    }
}

#[test]
fn softmax_along_each_axis_normalizes_that_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[2, 3, 4]);
    for axis in 0..3 {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.softmax(v, axis).unwrap();
        let d = tape.value(y).data();
        let shape = [2, 3, 4];
        let strides = [12, 4, 1];
        let mut sums = std::collections::HashMap::new();
        for (i, p) in d.iter().enumerate() {
            let mut key = [0usize; 3];
            for a in 0..3 {
                key[a] = (i / strides[a]) % shape[a];
            }
            key[axis] = 0;
            *sums.entry(key).or_insert(0.0) += p;
        }
        for s in sums.values() {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
    let y = tape.layer_norm(x, g, b).unwrap();
    assert_abs_diff_eq!(tape.value(y).data()[0], -1.0, epsilon = 1e-10);
    assert_abs_diff_eq!(tape.value(y).data()[1], 1.0, epsilon = 1e-10);

    let g = tape.constant(Tensor::full(&[4], 1.0));
    let b = tape.constant(Tensor::zeros(&[4]));
    let c = tape.constant(Tensor::full(&[1, 4], 3.25));
    let y = tape.layer_norm(c, g, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    assert_eq!(g.get(x).unwrap().shape(), &[3]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.scale(x, 2.0);
    assert!(tape.backward(y).is_err());
}

#[test]
fn fan_out_gradients_are_summed() {
    // f(x) = sum(relu(x) * 3 + x * x) via two branches; fused: grad = 3*[x>0] + 2x.
    let xs = vec![0.5, -1.5, 2.0, -0.25];
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(xs.clone()));
    let a = tape.relu(x);
    let a = tape.scale(a, 3.0);
    let b = tape.mul(x, x).unwrap();
    let y = tape.add(a, b).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    for (gi, xi) in g.get(x).unwrap().data().iter().zip(&xs) {
        let fused = if *xi > 0.0 { 3.0 } else { 0.0 } + 2.0 * xi;
        assert_abs_diff_eq!(*gi, fused, epsilon = 1e-15);
    }
}

#[test]
fn constants_get_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0]));
    let c = tape.constant(Tensor::vector(vec![2.0]));
    let y = tape.mul(x, c).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.len(), 1);
}

#[test]
fn dropout_eval_is_identity_and_train_mask_is_inverted() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[50, 20], 1.0));
    let y = tape.dropout(x, 0.1, false, &mut rng).unwrap();
    assert_eq!(y, x);
    let y = tape.dropout(x, 0.25, true, &mut rng).unwrap();
    for &v in tape.value(y).data() {
        assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
    }
    let mean = tape.value(y).data().iter().sum::<f64>() / 1000.0;
    assert!((mean - 1.0).abs() < 0.1, "{mean}");
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    check_trials("add", &[&[3, 4], &[3, 4]], |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 1)
    });
    check_trials("sub", &[&[3, 4], &[3, 4]], |t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, 2)
    });
    check_trials("mul", &[&[3, 4], &[3, 4]], |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, 3)
    });
    check_trials("scale_mean", &[&[3, 4]], |t, v| {
        let y = t.scale(v[0], -1.7);
        let y = t.mul(y, y)?;
        Ok(t.mean(y))
    });
    check_trials("linear", &[&[5, 3], &[3, 4], &[4]], |t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, 4)
    });
}

#[test]
fn activations_match_finite_differences() {
    check_trials("relu", &[&[6, 5]], |t, v| {
        let y = t.relu(v[0]);
        project(t, y, 5)
    });
    check_trials("sigmoid", &[&[6, 5]], |t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y, 6)
    });
    check_trials("swish", &[&[6, 5]], |t, v| {
        let y = t.swish(v[0]);
        project(t, y, 7)
    });
    check_trials("glu", &[&[6, 8]], |t, v| {
        let y = t.glu(v[0])?;
        project(t, y, 8)
    });
}

#[test]
fn softmax_family_matches_finite_differences() {
    for axis in 0..2 {
        check_trials("softmax", &[&[4, 6]], |t, v| {
            let y = t.softmax(v[0], axis)?;
            project(t, y, 9)
        });
        check_trials("log_softmax", &[&[4, 6]], |t, v| {
            let y = t.log_softmax(v[0], axis)?;
            project(t, y, 10)
        });
    }
}

#[test]
fn normalization_matches_finite_differences() {
    check_trials("layer_norm", &[&[5, 6], &[6], &[6]], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        project(t, y, 11)
    });
    check_trials("batch_norm", &[&[7, 3], &[3], &[3]], |t, v| {
        let (y, _, _) = t.batch_norm(v[0], v[1], v[2])?;
        project(t, y, 12)
    });
    check_trials("batch_norm_eval", &[&[7, 3], &[3], &[3]], |t, v| {
        let y = t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[1.5, 0.5, 2.0])?;
        project(t, y, 13)
    });
}

#[test]
fn dropout_conv_and_mix_match_finite_differences() {
    check_trials("dropout", &[&[6, 4]], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y = t.dropout(v[0], 0.3, true, &mut rng)?;
        project(t, y, 14)
    });
    let segs = Segments::from_lengths(&[7, 5]).unwrap();
    for dilation in [1, 2] {
        check_trials("depthwise", &[&[12, 3], &[5, 3]], |t, v| {
            let y = t.depthwise_conv1d(v[0], v[1], dilation, &segs)?;
            project(t, y, 15)
        });
    }
    check_trials("mix", &[&[4, 3], &[4, 3], &[4, 3], &[3]], |t, v| {
        let w = t.softmax(v[3], 0)?;
        let y = t.mix(&v[..3], w)?;
        project(t, y, 16)
    });
}

#[test]
fn composite_graph_matches_finite_differences() {
    check_trials("composite", &[&[5, 4], &[4, 6], &[6], &[6]], |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.layer_norm(h, v[2], v[3])?;
        let p = t.softmax(h, 1)?;
        let q = t.swish(h);
        let y = t.mul(p, q)?;
        let y = t.add(y, h)?;
        project(t, y, 17)
    });
}
