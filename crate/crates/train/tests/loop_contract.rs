use lastraj_core::sampling::{SamplerConfig, Strategy};
use lastraj_core::synthworld::{build_world, LengthRegime, WorldConfig};
use lastraj_core::trajectory::{Step, Trajectory, TrajectoryDataset};
use lastraj_nn::{discriminate, DSequence, Tensor};
use lastraj_train::{
    anneal_temperature, time_alignment_losses, train, train_from, LossProfile, ModelWidths, ProfileKind,
    RealBatch, TrainError, Trainer, TrainerConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn world_dataset(n: usize, seed: u64) -> TrajectoryDataset {
    world_with(n, seed, 1.6, 0.8, 10.0)
}

fn world_with(n: usize, seed: u64, long_dwell: f64, context_signal: f64, b_bound: f64) -> TrajectoryDataset {
    let cfg = WorldConfig {
        item_count: 6,
        floors: 2,
        categories: 3,
        regimes: vec![
            LengthRegime {
                mean: 2.0,
                weight: 0.5,
                dwell_factor: 1.0,
            },
            LengthRegime {
                mean: 6.0,
                weight: 0.5,
                dwell_factor: long_dwell,
            },
        ],
        dwell_scales: vec![1.0, 1.5, 2.0],
        t_max: 8,
        b_bound,
        context_width: 3,
        context_signal,
        ..WorldConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_world(&cfg, &mut rng).unwrap().generate_dataset(n, &mut rng).unwrap()
}

fn small_config(seed: u64) -> TrainerConfig {
    TrainerConfig {
        seed,
        batch_size: 16,
        batches_per_epoch: Some(3),
        lr: 1e-3,
        model: ModelWidths {
            embed: 4,
            type_embed: 2,
            floor_embed: 2,
            latent: 3,
            hidden: 6,
            disc_hidden: 5,
        },
        ..TrainerConfig::default()
    }
}

fn sampler(strategy: Strategy) -> SamplerConfig {
    SamplerConfig {
        strategy,
        k_buckets: 4,
        seed: 11,
        ..SamplerConfig::default()
    }
}

fn standard() -> LossProfile {
    LossProfile::new(ProfileKind::Standard, 0.0).unwrap()
}

fn trainer_and_batch(profile: LossProfile, seed: u64) -> (Trainer, RealBatch, ChaCha8Rng) {
    let ds = world_dataset(120, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tr = Trainer::init(&ds, &small_config(seed), profile, &mut rng).unwrap();
    let idx: Vec<usize> = (0..12).map(|i| (i * 7) % ds.len()).collect();
    let real = RealBatch::new(&ds.trajectories, &idx, ds.meta.b_bound).unwrap();
    (tr, real, rng)
}

#[test]
fn zero_epochs_return_the_initial_models() {
    let ds = world_dataset(100, 1);
    let cfg = TrainerConfig {
        epochs: 0,
        ..small_config(5)
    };
    let out = train(&ds, &sampler(Strategy::LengthAware), &cfg, standard()).unwrap();
    let init = Trainer::init(&ds, &cfg, standard(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(out.gen, init.gen);
    assert_eq!(out.disc, init.disc);
    assert!(out.history.is_empty());
    assert_eq!(out.history.final_tau, cfg.tau_init);
}

#[test]
fn one_epoch_of_two_batches() {
    let ds = world_dataset(100, 1);
    let cfg = TrainerConfig {
        epochs: 1,
        batches_per_epoch: Some(2),
        ..small_config(5)
    };
    let out = train(&ds, &sampler(Strategy::Random), &cfg, standard()).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.history.epochs_run, 1);
    assert!(out.history.records.iter().all(|r| r.tau == cfg.tau_init));
    assert_eq!(out.history.final_tau, anneal_temperature(cfg.tau_init, cfg.anneal, cfg.tau_min));
}

#[test]
fn history_records_bucket_ids_only_under_las() {
    let ds = world_dataset(150, 2);
    let cfg = TrainerConfig {
        epochs: 4,
        ..small_config(1)
    };
    for strategy in [Strategy::Random, Strategy::LengthAware] {
        let out = train(&ds, &sampler(strategy), &cfg, standard()).unwrap();
        let h = &out.history;
        assert!(!h.is_empty());
        for (k, r) in h.records.iter().enumerate() {
            assert_eq!(r.update, k);
            assert_eq!(r.bucket.is_some(), strategy == Strategy::LengthAware);
            assert!(r.tau >= cfg.tau_min);
        }
        for w in h.records.windows(2) {
            assert!(w[1].tau <= w[0].tau);
            assert!(w[1].epoch >= w[0].epoch);
        }
        let mut csv = Vec::new();
        h.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), h.len() + 1);
        assert_eq!(text.contains(",RS,"), strategy == Strategy::Random);
    }
}

#[test]
fn training_is_deterministic() {
    let ds = world_dataset(100, 4);
    let cfg = TrainerConfig {
        epochs: 2,
        ..small_config(9)
    };
    let a = train(&ds, &sampler(Strategy::LengthAware), &cfg, standard()).unwrap();
    let b = train(&ds, &sampler(Strategy::LengthAware), &cfg, standard()).unwrap();
    assert_eq!(a.gen.params.checksum(), b.gen.params.checksum());
    assert_eq!(a.disc.params.checksum(), b.disc.params.checksum());
    assert_eq!(a.history, b.history);
}

#[test]
fn early_stopping_follows_epoch_mean_generator_loss() {
    let ds = world_dataset(100, 6);
    for seed in 0..4 {
        let cfg = TrainerConfig {
            epochs: 10,
            patience: 1,
            ..small_config(seed)
        };
        let out = train(&ds, &sampler(Strategy::Random), &cfg, standard()).unwrap();
        let means = out.history.epoch_generator_means();
        assert_eq!(means.len(), out.history.epochs_run);
        let mut best = f64::INFINITY;
        for (e, &m) in means.iter().enumerate() {
            let last = e + 1 == means.len();
            if m >= best {
                assert!(last && out.history.stopped_early, "seed {seed}: epoch {e} should have stopped");
            }
            best = best.min(m);
        }
        if !out.history.stopped_early {
            assert_eq!(out.history.epochs_run, 10);
        }
    }
}

#[test]
fn steps_update_only_their_own_model() {
    for kind in [
        ProfileKind::Standard,
        ProfileKind::TimeAligned,
        ProfileKind::FeatureMatching,
        ProfileKind::Wasserstein,
    ] {
        let profile = LossProfile::with_default_weight(kind, 1.0).unwrap();
        let (mut tr, real, mut rng) = trainer_and_batch(profile, 2);
        let (g0, d0) = (tr.gen.params.checksum(), tr.disc.params.checksum());
        let fake = tr.rollout(&real.contexts, 1.0, &mut rng).unwrap();
        tr.discriminator_step(&real, &fake).unwrap();
        let d1 = tr.disc.params.checksum();
        assert_eq!(tr.gen.params.checksum(), g0, "{kind}");
        assert_ne!(d1, d0, "{kind}");
        tr.generator_step(fake, &real).unwrap();
        assert_eq!(tr.disc.params.checksum(), d1, "{kind}");
        assert_ne!(tr.gen.params.checksum(), g0, "{kind}");
    }
}

fn clamp_log(p: f64) -> f64 {
    p.clamp(1e-7, 1.0 - 1e-7).ln()
}

#[test]
fn discriminator_loss_matches_scalar_recomputation() {
    for kind in [ProfileKind::Standard, ProfileKind::Wasserstein] {
        for seed in 0..3 {
            let profile = LossProfile::new(kind, 0.0).unwrap();
            let (mut tr, real, mut rng) = trainer_and_batch(profile, seed);
            let mut fake = tr.rollout(&real.contexts, 0.8, &mut rng).unwrap();
            let dims = tr.disc.dims.clone();
            let score = |tape: &mut lastraj_nn::Tape, seqs: &[DSequence], ctx: &Tensor| -> Vec<f64> {
                let dv = tr.disc.bind(tape, false);
                let out = discriminate(tape, &dv, &dims, &tr.feats, seqs, ctx).unwrap();
                tape.value(out.logits).data.clone()
            };
            let fake_seqs: Vec<DSequence> = (0..fake.rollout.len()).map(|i| fake.rollout.sequence(i)).collect();
            let sf = score(&mut fake.tape, &fake_seqs, &fake.contexts);
            let mut tape = lastraj_nn::Tape::new();
            let sr = score(&mut tape, &real.sequences(), &real.contexts);
            let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
            let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
            let expect = match kind {
                ProfileKind::Wasserstein => mean(&sf, &|x| x) - mean(&sr, &|x| x),
                _ => -mean(&sr, &|x| clamp_log(sig(x))) - mean(&sf, &|x| clamp_log(1.0 - sig(x))),
            };
            let got = tr.discriminator_step(&real, &fake).unwrap().loss;
            assert!((got - expect).abs() < 1e-10, "{kind} seed {seed}: {got} vs {expect}");
        }
    }
}

fn model_traj(times: &[[f64; 2]]) -> Trajectory {
    Trajectory::from_steps(times.iter().map(|&[a, b]| Step::new(0, a, b)).collect())
}

#[test]
fn generator_objective_composition() {
    for (kind, lambda) in [
        (ProfileKind::Standard, 0.0),
        (ProfileKind::TimeAligned, 2.0),
        (ProfileKind::FeatureMatching, 0.0),
        (ProfileKind::Wasserstein, 0.0),
    ] {
        let profile = LossProfile::new(kind, lambda).unwrap();
        let (mut tr, real, mut rng) = trainer_and_batch(profile, 4);
        let fake = tr.rollout(&real.contexts, 1.2, &mut rng).unwrap();
        let n = real.len() as f64;
        let (mut ei, mut ee) = (0.0, 0.0);
        for i in 0..real.len() {
            let (a, b) = time_alignment_losses(&model_traj(&real.times[i]), &model_traj(&fake.rollout.times[i]));
            ei += a * tr.b_bound / n;
            ee += b * tr.b_bound / n;
        }
        let g = tr.generator_step(fake, &real).unwrap();
        assert!((g.intra - ei).abs() < 1e-12 && (g.inter - ee).abs() < 1e-12, "{kind}");
        let extra = g.total - g.adv;
        match kind {
            ProfileKind::TimeAligned => assert!((extra - 2.0 * (g.intra + g.inter)).abs() < 1e-12),
            ProfileKind::FeatureMatching => {
                assert!(g.feature >= 0.0);
                assert!((extra - g.feature).abs() < 1e-12);
            }
            _ => assert_eq!(extra, 0.0),
        }
        if kind != ProfileKind::Wasserstein {
            assert!(g.adv > 0.0);
        }
    }
}

fn power_sigma(w: &Tensor) -> f64 {
    let mut v = vec![1.0; w.cols];
    let mut sigma = 0.0;
    for _ in 0..5000 {
        let u: Vec<f64> = (0..w.rows)
            .map(|r| w.row_slice(r).iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let mut nv = vec![0.0; w.cols];
        for (r, ur) in u.iter().enumerate() {
            for (c, x) in w.row_slice(r).iter().enumerate() {
                nv[c] += x * ur;
            }
        }
        let n: f64 = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        sigma = n.sqrt();
        v = nv.into_iter().map(|x| x / n).collect();
    }
    sigma
}

#[test]
fn wasserstein_critic_stays_one_lipschitz_per_layer() {
    let profile = LossProfile::new(ProfileKind::Wasserstein, 0.0).unwrap();
    let (mut tr, real, mut rng) = trainer_and_batch(profile, 7);
    for _ in 0..3 {
        let fake = tr.rollout(&real.contexts, 1.0, &mut rng).unwrap();
        tr.discriminator_step(&real, &fake).unwrap();
        for i in tr.disc.linear_weights() {
            let s = power_sigma(tr.disc.params.get(i));
            assert!(s <= 1.0 + 1e-3, "{}: {s}", tr.disc.params.names()[i]);
        }
        tr.generator_step(fake, &real).unwrap();
    }
}

#[test]
fn non_finite_loss_aborts_with_a_dump() {
    let ds = world_dataset(80, 8);
    let cfg = small_config(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tr = Trainer::init(&ds, &cfg, standard(), &mut rng).unwrap();
    let i = tr.disc.params.names().iter().position(|n| n == "disc.out.b").unwrap();
    tr.disc.params.get_mut(i).data.fill(f64::NAN);
    let err = train_from(tr, &ds, &sampler(Strategy::LengthAware), &cfg, &mut rng).err().unwrap();
    let TrainError::NumericalAbort(d) = err else {
        panic!("expected a numerical abort");
    };
    assert_eq!(d.update, 0);
    assert_eq!(d.batch.indices.len(), cfg.batch_size);
    assert!(d.batch.bucket.is_some());
    assert_eq!(d.fake_lengths.len(), cfg.batch_size);
    let text = d.to_text();
    assert!(text.contains("reason = non-finite discriminator loss"));
    assert!(text.contains("real_indices = "));
}

#[test]
fn real_batches_are_scaled_into_model_units() {
    let ds = world_dataset(30, 9);
    let b = RealBatch::new(&ds.trajectories, &[3, 0], ds.meta.b_bound).unwrap();
    assert_eq!(b.contexts.rows, 2);
    assert_eq!(b.contexts.row_slice(0), ds.trajectories[3].context.as_slice());
    for (k, &i) in [3usize, 0].iter().enumerate() {
        let t = &ds.trajectories[i];
        assert_eq!(b.items[k].len(), t.len());
        assert_eq!(b.times[k][0][0], t.steps[0].intra / ds.meta.b_bound);
    }
    let seqs = b.sequences();
    assert_eq!(seqs[0].len(), ds.trajectories[3].len() + 1);
    assert!(RealBatch::new(&ds.trajectories, &[], 10.0).is_err());
}

#[test]
fn las_runs_finish_and_lower_the_generator_loss() {
    // Dwell times differ fourfold between regimes and the context names the
    // regime, so the time losses have room to fall below their initial level.
    let ds = world_with(300, 10, 4.0, 1.0, 30.0);
    let mut improved = 0;
    for seed in 0..5 {
        let cfg = TrainerConfig {
            epochs: 18,
            batches_per_epoch: Some(6),
            batch_size: 128,
            ..small_config(seed)
        };
        let profile = LossProfile::new(ProfileKind::TimeAligned, 1.0).unwrap();
        let out = train(&ds, &sampler(Strategy::LengthAware), &cfg, profile).unwrap();
        let m = out.history.epoch_generator_means();
        assert!(out.history.records.iter().all(|r| r.loss_g.is_finite() && r.loss_d.is_finite()));
        improved += (m[m.len() - 1] < m[0]) as usize;
    }
    assert!(improved >= 4, "generator loss improved in {improved}/5 seeds");
}
