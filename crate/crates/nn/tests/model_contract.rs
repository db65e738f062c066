use lastraj_nn::{
    discriminate, generate, DSequence, DiscriminatorParams, GeneratorParams, ModelDims, NnError, ParamSet,
    RolloutOptions, StoreFeatures, Tape, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims() -> ModelDims {
    ModelDims {
        embed: 6,
        type_embed: 3,
        floor_embed: 2,
        latent: 4,
        hidden: 8,
        disc_hidden: 5,
        ..ModelDims::published(7, 3, 2, 3, 2)
    }
}

fn features(rng: &mut ChaCha8Rng, d: &ModelDims) -> StoreFeatures {
    StoreFeatures {
        categories: (0..d.item_count).map(|i| i % d.categories).collect(),
        floors: (0..d.item_count).map(|i| i % d.floors).collect(),
        neighbor: Tensor::new(
            d.item_count,
            d.neighbor_width,
            (0..d.item_count * d.neighbor_width).map(|_| rng.gen()).collect(),
        )
        .unwrap(),
    }
}

fn inputs(rng: &mut ChaCha8Rng, d: &ModelDims, n: usize) -> (Tensor, Tensor) {
    let ctx = Tensor::new(n, d.context_width, (0..n * d.context_width).map(|_| rng.gen()).collect()).unwrap();
    let z = Tensor::new(n, d.latent, (0..n * d.latent).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    (ctx, z)
}

#[test]
fn published_widths() {
    let d = ModelDims::published(20, 5, 3, 6, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = GeneratorParams::new(d.clone(), &mut rng).unwrap();
    assert_eq!(g.params.by_name("gen.store_out.w").unwrap().shape(), [128, 21]);
    assert_eq!(g.params.by_name("gen.lstm.wh").unwrap().shape(), [128, 512]);
    assert_eq!(g.params.by_name("gen.lstm.wx").unwrap().rows, 32 + 16 + 4 + 2);
    let dp = DiscriminatorParams::new(d, &mut rng).unwrap();
    assert_eq!(dp.params.by_name("disc.out.w").unwrap().shape(), [2 * 128 + 4, 1]);
}

#[test]
fn rollout_stops_at_end_token_or_cap() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let feats = features(&mut rng, &d);
    for t_max in [1, 3, 12] {
        for hard_inputs in [false, true] {
            let g = GeneratorParams::new(d.clone(), &mut rng).unwrap();
            let (ctx, z) = inputs(&mut rng, &d, 40);
            let mut tape = Tape::new();
            let gv = g.bind(&mut tape, true);
            let opts = RolloutOptions {
                tau: 0.7,
                t_max,
                hard_inputs,
            };
            let r = generate(&mut tape, &gv, &d, &feats, &ctx, &z, &opts, &mut rng).unwrap();
            for i in 0..r.len() {
                let len = r.length(i);
                assert!((1..=t_max).contains(&len));
                assert!(r.items[i].iter().all(|&k| k < d.item_count));
                if len < t_max {
                    let (v, row) = r.terminal[i].expect("ended by the end token");
                    assert_eq!(v, r.steps[len].soft);
                    assert_eq!(r.steps[len].members[row], i);
                } else {
                    assert!(r.terminal[i].is_none() || t_max == 1);
                }
                for (t, &row) in r.rows[i].iter().enumerate() {
                    assert_eq!(r.steps[t].members[row], i);
                    let soft = tape.value(r.steps[t].soft);
                    assert!((soft.row_slice(row).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
                assert!(r.times[i].iter().flatten().all(|&x| x >= 0.0));
            }
        }
    }
}

#[test]
fn strong_end_bias_gives_single_step_trajectories() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feats = features(&mut rng, &d);
    let mut g = GeneratorParams::new(d.clone(), &mut rng).unwrap();
    let idx = g.params.names().iter().position(|n| n == "gen.store_out.b").unwrap();
    g.params.get_mut(idx).set(0, d.item_count, 100.0);
    let (ctx, z) = inputs(&mut rng, &d, 30);
    let mut tape = Tape::new();
    let gv = g.bind(&mut tape, false);
    let opts = RolloutOptions {
        tau: 1.0,
        t_max: 10,
        hard_inputs: true,
    };
    let r = generate(&mut tape, &gv, &d, &feats, &ctx, &z, &opts, &mut rng).unwrap();
    assert!((0..r.len()).all(|i| r.length(i) == 1));
}

#[test]
fn same_seed_same_stream() {
    let d = dims();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats = features(&mut rng, &d);
        let g = GeneratorParams::new(d.clone(), &mut rng).unwrap();
        let (ctx, z) = inputs(&mut rng, &d, 16);
        let mut tape = Tape::new();
        let gv = g.bind(&mut tape, true);
        let opts = RolloutOptions {
            tau: 0.5,
            t_max: 8,
            hard_inputs: false,
        };
        let r = generate(&mut tape, &gv, &d, &feats, &ctx, &z, &opts, &mut rng).unwrap();
        let bits: Vec<u64> = r.times.iter().flatten().flatten().map(|x| x.to_bits()).collect();
        (r.items, bits)
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_discriminator_scores_one_half() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let feats = features(&mut rng, &d);
    let mut dp = DiscriminatorParams::new(d.clone(), &mut rng).unwrap();
    for t in dp.params.tensors_mut() {
        t.data.fill(0.0);
    }
    let seqs = vec![
        DSequence::observed(&[2], &[[0.1, 0.2]]),
        DSequence::observed(&[0, 1, 2, 3, 4], &[[0.1, 0.2]; 5]),
    ];
    let (ctx, _) = inputs(&mut rng, &d, 2);
    let mut tape = Tape::new();
    let dv = dp.bind(&mut tape, false);
    let out = discriminate(&mut tape, &dv, &d, &feats, &seqs, &ctx).unwrap();
    let s = tape.sigmoid(out.logits);
    assert!(tape.value(s).data.iter().all(|&v| v == 0.5));
    assert_eq!(out.order, vec![1, 0]);
}

#[test]
fn discriminator_scores_are_probabilities() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let feats = features(&mut rng, &d);
    let dp = DiscriminatorParams::new(d.clone(), &mut rng).unwrap();
    let g = GeneratorParams::new(d.clone(), &mut rng).unwrap();
    let (ctx, z) = inputs(&mut rng, &d, 12);
    let mut tape = Tape::new();
    let gv = g.bind(&mut tape, true);
    let opts = RolloutOptions {
        tau: 1.0,
        t_max: 6,
        hard_inputs: false,
    };
    let r = generate(&mut tape, &gv, &d, &feats, &ctx, &z, &opts, &mut rng).unwrap();
    let seqs: Vec<DSequence> = (0..r.len()).map(|i| r.sequence(i)).collect();
    let dv = dp.bind(&mut tape, true);
    let out = discriminate(&mut tape, &dv, &d, &feats, &seqs, &ctx).unwrap();
    let s = tape.sigmoid(out.logits);
    assert!(tape.value(s).data.iter().all(|&v| v > 0.0 && v < 1.0));
    let loss = tape.mean(s);
    let grads = tape.backward(loss).unwrap();
    assert!(gv.all.iter().any(|&v| grads.get(v).is_some_and(|g| g.max_abs() > 0.0)));
}

#[test]
fn discriminator_rejects_bad_batches() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let feats = features(&mut rng, &d);
    let dp = DiscriminatorParams::new(d.clone(), &mut rng).unwrap();
    let (ctx, _) = inputs(&mut rng, &d, 1);
    let mut tape = Tape::new();
    let dv = dp.bind(&mut tape, false);
    let empty = DSequence {
        tokens: vec![],
        times: vec![],
    };
    assert!(discriminate(&mut tape, &dv, &d, &feats, &[empty], &ctx).is_err());
    let bad = DSequence::observed(&[d.item_count], &[[0.0, 0.0]]);
    assert!(discriminate(&mut tape, &dv, &d, &feats, &[bad], &ctx).is_err());
}

#[test]
fn checkpoints_round_trip_and_check_layout() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = GeneratorParams::new(d.clone(), &mut rng).unwrap();
    let mut buf = Vec::new();
    g.params.write_checkpoint(&mut buf).unwrap();
    let back = GeneratorParams::from_params(d.clone(), ParamSet::read_checkpoint(buf.as_slice()).unwrap()).unwrap();
    assert_eq!(back, g);
    let other = ModelDims { hidden: 9, ..d };
    let err = GeneratorParams::from_params(other, g.params.clone()).unwrap_err();
    assert!(matches!(err, NnError::Integrity(_)));
}
