use lastraj_nn::{generate, gumbel_softmax, GeneratorParams, ModelDims, RolloutOptions, StoreFeatures, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dims(item_count: usize) -> ModelDims {
    ModelDims {
        embed: 4,
        type_embed: 2,
        floor_embed: 2,
        latent: 3,
        hidden: 5,
        disc_hidden: 3,
        ..ModelDims::published(item_count, 3, 2, 3, 2)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_value_count_matches_shape(rows in 0usize..6, cols in 0usize..6, extra in 0usize..3) {
        let n = rows * cols;
        prop_assert!(Tensor::new(rows, cols, vec![0.0; n]).is_ok());
        if extra > 0 {
            prop_assert!(Tensor::new(rows, cols, vec![0.0; n + extra]).is_err());
        }
    }

    #[test]
    fn gumbel_soft_is_a_simplex_point_peaked_at_hard(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12),
        tau in 0.05f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = gumbel_softmax(&logits, tau, &mut rng).unwrap();
        prop_assert_eq!(s.soft.len(), logits.len());
        prop_assert!(s.soft.iter().all(|p| p.is_finite() && *p >= 0.0));
        prop_assert!((s.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.soft.iter().all(|&p| p <= s.soft[s.hard]));
    }

    #[test]
    fn store_head_has_end_token_column(item_count in 1usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GeneratorParams::new(small_dims(item_count), &mut rng).unwrap();
        prop_assert_eq!(g.params.by_name("gen.store_out.w").unwrap().cols, item_count + 1);
        prop_assert_eq!(g.params.by_name("gen.store_out.b").unwrap().cols, item_count + 1);
    }

    #[test]
    fn rollouts_are_finite_bounded_and_nonnegative(
        item_count in 1usize..9,
        t_max in 1usize..10,
        tau in 0.1f64..2.0,
        hard_inputs in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let d = small_dims(item_count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = StoreFeatures {
            categories: (0..item_count).map(|i| i % d.categories).collect(),
            floors: (0..item_count).map(|i| i % d.floors).collect(),
            neighbor: Tensor::new(item_count, d.neighbor_width, (0..item_count * d.neighbor_width).map(|_| rng.gen()).collect()).unwrap(),
        };
        let g = GeneratorParams::new(d.clone(), &mut rng).unwrap();
        let n = 6;
        let ctx = Tensor::new(n, d.context_width, (0..n * d.context_width).map(|_| rng.gen()).collect()).unwrap();
        let z = Tensor::new(n, d.latent, (0..n * d.latent).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let gv = g.bind(&mut tape, false);
        let opts = RolloutOptions { tau, t_max, hard_inputs };
        let r = generate(&mut tape, &gv, &d, &feats, &ctx, &z, &opts, &mut rng).unwrap();
        prop_assert_eq!(r.len(), n);
        for i in 0..n {
            prop_assert!((1..=t_max).contains(&r.length(i)));
            prop_assert!(r.items[i].iter().all(|&k| k < item_count));
            prop_assert!(r.times[i].iter().flatten().all(|x| x.is_finite() && *x >= 0.0));
        }
        for step in &r.steps {
            prop_assert!(tape.value(step.soft).is_finite());
        }
    }
}
