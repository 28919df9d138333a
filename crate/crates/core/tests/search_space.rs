use std::collections::{HashMap, HashSet};

use conformer_nas::conformer::{candidate_forward, CandidateOp, Forward, Slot};
use conformer_nas::search_space::{
    build_supernet, count_architectures, derive_genotype, materialize, mixed_forward,
    sample_random_genotype, AlphaTable, Genotype, Network, SearchSpaceConfig, Supernet,
    ALPHA_CSV_HEADER,
};
use conformer_nas::tensor::{Segments, Tensor};
use conformer_nas::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(blocks: usize) -> SearchSpaceConfig {
    SearchSpaceConfig {
        num_blocks: blocks,
        candidates: [
            vec![
                CandidateOp::Mhsa { heads: 4 },
                CandidateOp::Mhsa { heads: 8 },
                CandidateOp::Mhsa { heads: 16 },
            ],
            CandidateOp::defaults(Slot::Conv).to_vec(),
            vec![
                CandidateOp::Ffn { hidden: 64 },
                CandidateOp::Ffn { hidden: 32 },
                CandidateOp::Ffn { hidden: 16 },
            ],
        ],
        d_model: 16,
        feature_dim: 6,
        vocab: 5,
        dropout: 0.0,
        relative_position: true,
    }
}

fn features(seed: u64, lengths: &[usize], dim: usize) -> (Tensor, Segments) {
    let segs = Segments::from_lengths(lengths).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = segs.total() * dim;
    let x = Tensor::new(
        vec![segs.total(), dim],
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    (x, segs)
}

fn run(net: &impl Network, x: &Tensor, segs: &Segments, train: bool) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    net.logits(x, segs, train, &mut rng).unwrap()
}

fn saturate(alpha: &mut AlphaTable, block: usize, slot: Slot, pick: usize) {
    for (i, v) in alpha.get_mut(block, slot).iter_mut().enumerate() {
        *v = if i == pick { 1e6 } else { -1e6 };
    }
}

#[test]
fn default_supernet_instantiates_every_candidate() {
    let net = build_supernet(&SearchSpaceConfig::default(), 0).unwrap();
    assert_eq!(net.candidate_count(), 52);
    for b in 0..4 {
        for slot in Slot::ALL {
            let w = net.alpha.weights(b, slot);
            assert!(w.iter().all(|&x| (x - 1.0 / w.len() as f64).abs() < 1e-15));
        }
    }
}

#[test]
fn equal_seeds_give_identical_parameters() {
    let cfg = small_config(2);
    let a = build_supernet(&cfg, 7).unwrap();
    let b = build_supernet(&cfg, 7).unwrap();
    let c = build_supernet(&cfg, 8).unwrap();
    assert_eq!(a.store().named(), b.store().named());
    assert_ne!(a.store().named(), c.store().named());
}

#[test]
fn saturated_slot_matches_single_candidate_network() {
    let cfg = small_config(2);
    let (x, segs) = features(3, &[9, 7], cfg.feature_dim);
    for slot in Slot::ALL {
        let mut net = build_supernet(&cfg, 5).unwrap();
        net.alpha
            .get_mut(0, Slot::Mhsa)
            .copy_from_slice(&[0.3, -0.2, 0.5]);
        let keep = net.alpha.clone();
        for b in 0..2 {
            saturate(&mut net.alpha, b, slot, 0);
        }
        let y = run(&net, &x, &segs, true);

        let mut only = cfg.clone();
        only.candidates[slot.index()].truncate(1);
        let mut reference = build_supernet(&only, 5).unwrap();
        for b in 0..2 {
            for s in Slot::ALL {
                if s != slot {
                    reference
                        .alpha
                        .get_mut(b, s)
                        .copy_from_slice(keep.get(b, s));
                }
            }
        }
        let r = run(&reference, &x, &segs, true);
        assert!(y.max_abs_diff(&r) <= 1e-8, "{slot}: {}", y.max_abs_diff(&r));
    }
}

#[test]
fn mixed_slot_equals_explicit_convex_combination() {
    let cfg = small_config(2);
    let mut net = build_supernet(&cfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for v in net.alpha.vectors_mut() {
        v.iter_mut().for_each(|a| *a = rng.random_range(-1.0..1.0));
    }
    let (x, segs) = features(2, &[8, 6], cfg.feature_dim);
    let mut frng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = net.context(true, false, &mut frng);
    let xv = ctx.tape.constant(x);
    let alpha = net.alpha_vars(&mut ctx, false);
    let (_, trace) = net.forward_traced(&mut ctx, xv, &segs, &alpha).unwrap();
    let slots: Vec<(Tensor, Tensor)> = trace
        .iter()
        .map(|&(i, o)| (ctx.tape.value(i).clone(), ctx.tape.value(o).clone()))
        .collect();
    drop(ctx);

    for (idx, (input, mixed)) in slots.iter().enumerate() {
        let (b, slot) = (idx / 3, Slot::ALL[idx % 3]);
        let logits = net.alpha.get(b, slot);
        let z: f64 = logits.iter().map(|a| a.exp()).sum();
        let mut expected = vec![0.0; input.len()];
        for (k, module) in net.candidates(b, slot).iter().enumerate() {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let mut c = Forward::new(net.store(), true, false, &mut r);
            let xin = c.tape.constant(input.clone());
            let o = candidate_forward(&mut c, xin, net.slot_norm(b, slot), module, &segs).unwrap();
            let w = logits[k].exp() / z;
            expected
                .iter_mut()
                .zip(c.tape.value(o).data())
                .for_each(|(e, v)| *e += w * v);
        }
        let diff = expected
            .iter()
            .zip(mixed.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-6, "block {b} {slot}: {diff}");
    }
}

#[test]
fn shifting_one_slot_leaves_output_unchanged() {
    let cfg = small_config(1);
    let (x, segs) = features(6, &[10], cfg.feature_dim);
    let mut net = build_supernet(&cfg, 2).unwrap();
    net.alpha.get_mut(0, Slot::Conv)[3] = 0.7;
    let y0 = run(&net, &x, &segs, false);
    net.alpha
        .get_mut(0, Slot::Conv)
        .iter_mut()
        .for_each(|a| *a += 12.5);
    let y1 = run(&net, &x, &segs, false);
    assert!(y0.max_abs_diff(&y1) <= 1e-9);
}

#[test]
fn tape_follows_the_chain() {
    let cfg = small_config(2);
    let net = build_supernet(&cfg, 1).unwrap();
    let (x, segs) = features(1, &[5, 4], cfg.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = net.context(true, false, &mut rng);
    let xv = ctx.tape.constant(x);
    let logits = net.forward(&mut ctx, xv, &segs).unwrap();
    let tape = &ctx.tape;

    // For each node, the mixed operations reachable backwards without
    // crossing another mixed operation.
    let mut frontier: HashMap<usize, HashSet<usize>> = HashMap::new();
    let mut mixes = Vec::new();
    for v in tape.vars() {
        let mut set = HashSet::new();
        for i in tape.inputs(v) {
            if tape.op_name(i) == "mix" {
                set.insert(i.id());
            } else if let Some(s) = frontier.get(&i.id()) {
                set.extend(s);
            }
        }
        if tape.op_name(v) == "mix" {
            mixes.push((v.id(), set.clone()));
        }
        frontier.insert(v.id(), set);
    }
    assert_eq!(mixes.len(), 6);
    assert!(mixes[0].1.is_empty());
    for w in mixes.windows(2) {
        assert_eq!(
            w[1].1,
            HashSet::from([w[0].0]),
            "node fed by more than its predecessor"
        );
    }
    assert_eq!(frontier[&logits.id()], HashSet::from([mixes[5].0]));
}

#[test]
fn derive_genotype_examples() {
    let cfg = SearchSpaceConfig::default();
    let mut alpha = AlphaTable::zeros(&cfg);
    let tie = derive_genotype(&alpha, &cfg).unwrap();
    assert_eq!(
        tie,
        Genotype::new(vec![
            [
                MHSA4,
                CandidateOp::Identity,
                CandidateOp::Ffn { hidden: 1024 }
            ];
            4
        ])
    );
    alpha
        .get_mut(2, Slot::Mhsa)
        .copy_from_slice(&[0.1, 2.0, -1.0]);
    assert_eq!(
        derive_genotype(&alpha, &cfg)
            .unwrap()
            .op(2, Slot::Mhsa)
            .to_string(),
        "mhsa_head8"
    );
    alpha.get_mut(0, Slot::Ffn)[1] = f64::NAN;
    assert!(derive_genotype(&alpha, &cfg).is_err());
}

const MHSA4: CandidateOp = CandidateOp::Mhsa { heads: 4 };

#[test]
fn architecture_counts() {
    let mut cfg = SearchSpaceConfig::default();
    assert_eq!(count_architectures(&cfg).unwrap(), 15_752_961);
    cfg.num_blocks = 1;
    assert_eq!(count_architectures(&cfg).unwrap(), 63);
    cfg.num_blocks = 2;
    assert_eq!(count_architectures(&cfg).unwrap(), 3_969);
    cfg.num_blocks = 100;
    assert!(matches!(
        count_architectures(&cfg),
        Err(Error::CountOverflow)
    ));
}

fn enumerate(cfg: &SearchSpaceConfig) -> HashSet<Genotype> {
    let mut all = vec![Vec::new()];
    for _ in 0..cfg.num_blocks {
        let mut next = Vec::new();
        for prefix in &all {
            for &m in cfg.candidates(Slot::Mhsa) {
                for &c in cfg.candidates(Slot::Conv) {
                    for &f in cfg.candidates(Slot::Ffn) {
                        let mut g: Vec<[CandidateOp; 3]> = prefix.clone();
                        g.push([m, c, f]);
                        next.push(g);
                    }
                }
            }
        }
        all = next;
    }
    all.into_iter().map(Genotype::new).collect()
}

#[test]
fn counts_match_enumeration() {
    for n in 1..=2 {
        let cfg = SearchSpaceConfig {
            num_blocks: n,
            ..SearchSpaceConfig::default()
        };
        assert_eq!(
            enumerate(&cfg).len() as u128,
            count_architectures(&cfg).unwrap()
        );
    }
}

#[test]
fn random_genotypes_are_uniform() {
    let cfg = SearchSpaceConfig {
        num_blocks: 1,
        ..SearchSpaceConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts: HashMap<Genotype, usize> = HashMap::new();
    for _ in 0..63_000 {
        let g = sample_random_genotype(&cfg, &mut rng);
        g.validate(&cfg).unwrap();
        *counts.entry(g).or_default() += 1;
    }
    assert_eq!(counts.len(), 63);
    for (g, c) in &counts {
        assert!((880..=1120).contains(c), "{g} drawn {c} times");
    }
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0)
        .sum();
    // 62 degrees of freedom; the 0.999 quantile is about 102.
    assert!(chi2 < 102.0, "chi2 {chi2}");

    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        assert_eq!(
            sample_random_genotype(&cfg, &mut r1),
            sample_random_genotype(&cfg, &mut r2)
        );
    }
}

#[test]
fn identity_conv_has_fewer_parameters() {
    let cfg = small_config(2);
    let base = [
        MHSA4,
        CandidateOp::Identity,
        CandidateOp::Ffn { hidden: 32 },
    ];
    let ident = materialize(&Genotype::new(vec![base; 2]), &cfg, 0)
        .unwrap()
        .weight_count();
    for &conv in &cfg.candidates(Slot::Conv)[1..] {
        let g = Genotype::new(vec![[MHSA4, conv, CandidateOp::Ffn { hidden: 32 }]; 2]);
        assert!(
            ident < materialize(&g, &cfg, 0).unwrap().weight_count(),
            "{conv}"
        );
    }
}

#[test]
fn baseline_materializes_and_runs() {
    let cfg = SearchSpaceConfig::default();
    let model = materialize(&Genotype::baseline(4), &cfg, 3).unwrap();
    let (x, segs) = features(0, &[12], cfg.feature_dim);
    let y = run(&model, &x, &segs, false);
    assert_eq!(y.shape(), &[12, cfg.vocab]);
    assert!(y.is_finite());
}

#[test]
fn materialized_model_matches_saturated_supernet() {
    let cfg = small_config(2);
    let (x, segs) = features(8, &[11, 6], cfg.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..4 {
        let g = sample_random_genotype(&cfg, &mut rng);
        let mut net = build_supernet(&cfg, 13).unwrap();
        for b in 0..2 {
            for slot in Slot::ALL {
                let pick = cfg
                    .candidates(slot)
                    .iter()
                    .position(|&o| o == g.op(b, slot))
                    .unwrap();
                saturate(&mut net.alpha, b, slot, pick);
            }
        }
        assert_eq!(derive_genotype(&net.alpha, &cfg).unwrap(), g);
        let model = materialize(&g, &cfg, 13).unwrap();
        for train in [true, false] {
            let d = run(&net, &x, &segs, train).max_abs_diff(&run(&model, &x, &segs, train));
            assert!(d <= 1e-6, "{g}: {d}");
        }
    }
}

#[test]
fn mixed_forward_rejects_wrong_feature_width() {
    let cfg = small_config(1);
    let net = build_supernet(&cfg, 0).unwrap();
    let (x, segs) = features(0, &[4], cfg.feature_dim + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        mixed_forward(&net, &x, &segs, false, &mut rng),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn genotype_text_round_trip_and_errors() {
    let g = Genotype::baseline(4);
    let text = g.to_string();
    assert!(text.starts_with("block 0: mhsa_head4 conv_15 ffn_1024\n"));
    assert_eq!(text.parse::<Genotype>().unwrap(), g);

    let err = "block 0: mhsa_head4 conv_9x ffn_1024"
        .parse::<Genotype>()
        .unwrap_err();
    assert!(err.to_string().contains("dil_conv_15"), "{err}");
    let err = "block 0: mhsa_head4 ffn_512 ffn_1024"
        .parse::<Genotype>()
        .unwrap_err();
    assert!(matches!(err, Error::UnknownOperation { .. }));

    let cfg = SearchSpaceConfig::default();
    let odd: Genotype = "block 0: mhsa_head2 conv_7 ffn_256\nblock 1: mhsa_head4 conv_7 ffn_256\nblock 2: mhsa_head4 conv_7 ffn_256\nblock 3: mhsa_head4 conv_7 ffn_256\n"
        .parse()
        .unwrap();
    let err = odd.validate(&cfg).unwrap_err();
    assert!(err.to_string().contains("mhsa_head16"), "{err}");
}

#[test]
fn alpha_csv_rows_carry_normalized_weights() {
    let cfg = small_config(2);
    let mut alpha = AlphaTable::zeros(&cfg);
    alpha.get_mut(1, Slot::Conv)[2] = 1.5;
    let rows = alpha.csv_rows(40, &cfg);
    assert_eq!(ALPHA_CSV_HEADER.split(',').count(), 6);
    assert_eq!(rows.len(), 2 * 13);
    assert!(rows[0].starts_with("40,0,mhsa,mhsa_head4,0,"));
    let mut sums: HashMap<(String, String), f64> = HashMap::new();
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        *sums.entry((f[1].into(), f[2].into())).or_default() += f[5].parse::<f64>().unwrap();
    }
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-12));
}

fn table_strategy() -> impl Strategy<Value = (Supernet, AlphaTable)> {
    prop::collection::vec(-30.0f64..30.0, 26).prop_map(|vals| {
        let cfg = small_config(2);
        let mut alpha = AlphaTable::zeros(&cfg);
        let mut it = vals.into_iter();
        for v in alpha.vectors_mut() {
            v.iter_mut().for_each(|a| *a = it.next().unwrap());
        }
        (build_supernet(&cfg, 0).unwrap(), alpha)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slot_weights_are_distributions((_net, alpha) in table_strategy()) {
        for b in 0..2 {
            for slot in Slot::ALL {
                let w = alpha.weights(b, slot);
                prop_assert!(w.iter().all(|&x| x > 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn derivation_ignores_shifts_and_monotone_maps((net, alpha) in table_strategy(), c in -50.0f64..50.0) {
        let cfg = net.config().clone();
        let g = derive_genotype(&alpha, &cfg).unwrap();
        let mut shifted = alpha.clone();
        let mut cubed = alpha.clone();
        for v in shifted.vectors_mut() {
            v.iter_mut().for_each(|a| *a += c);
        }
        for v in cubed.vectors_mut() {
            v.iter_mut().for_each(|a| *a = a.powi(3) + 2.0 * *a);
        }
        prop_assert_eq!(&derive_genotype(&shifted, &cfg).unwrap(), &g);
        prop_assert_eq!(&derive_genotype(&cubed, &cfg).unwrap(), &g);
    }
}
