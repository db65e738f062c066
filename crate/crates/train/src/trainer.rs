use std::collections::HashMap;

use lastraj_core::sampling::{BatchSampler, SamplerConfig};
use lastraj_core::trajectory::{Trajectory, TrajectoryDataset};
use lastraj_nn::{
    discriminate, generate, spectral_normalize, Adam, DSequence, DiscriminatorParams, GeneratorParams,
    GeneratorVars, Rollout, RolloutOptions, StoreFeatures, Tape, Tensor, TimeSource, Token, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{anneal_temperature, LossProfile, ProfileKind, TrainerConfig};
use crate::history::{TrainHistory, UpdateRecord};
use crate::losses::{
    bce_discriminator, bce_generator, feature_matching, time_alignment_tape, wasserstein_discriminator,
    wasserstein_generator,
};
use crate::sample::{latent, store_features};
use crate::{Diagnostic, Result, TrainError};

/// Real trajectories in model units (times divided by `b_bound`).
#[derive(Debug, Clone, PartialEq)]
pub struct RealBatch {
    pub items: Vec<Vec<usize>>,
    pub times: Vec<Vec<[f64; 2]>>,
    pub contexts: Tensor,
}

impl RealBatch {
    pub fn new(trajectories: &[Trajectory], indices: &[usize], b_bound: f64) -> Result<Self> {
        if indices.is_empty() {
            return Err(TrainError::Config("empty real batch".into()));
        }
        let pick: Vec<&Trajectory> = indices.iter().map(|&i| &trajectories[i]).collect();
        let contexts: Vec<Vec<f64>> = pick.iter().map(|t| t.context.0.clone()).collect();
        Ok(RealBatch {
            items: pick.iter().map(|t| t.steps.iter().map(|s| s.item as usize).collect()).collect(),
            times: pick
                .iter()
                .map(|t| t.steps.iter().map(|s| [s.intra / b_bound, s.inter / b_bound]).collect())
                .collect(),
            contexts: Tensor::from_rows(&contexts)?,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sequences(&self) -> Vec<DSequence> {
        self.items
            .iter()
            .zip(&self.times)
            .map(|(i, t)| DSequence::observed(i, t))
            .collect()
    }
}

/// A generated batch together with the tape that produced it, so the
/// generator step can backpropagate through the same rollout.
pub struct FakeBatch {
    pub tape: Tape,
    pub vars: GeneratorVars,
    pub rollout: Rollout,
    pub contexts: Tensor,
}

impl FakeBatch {
    pub fn lengths(&self) -> Vec<usize> {
        (0..self.rollout.len()).map(|i| self.rollout.length(i)).collect()
    }

    /// Discriminator view copied onto `tape` as constants.
    fn detached(&self, tape: &mut Tape) -> Vec<DSequence> {
        let mut map: HashMap<usize, Var> = HashMap::new();
        let mut copy = |v: Var, tape: &mut Tape| *map.entry(v.id()).or_insert_with(|| tape.constant(self.tape.value(v).clone()));
        (0..self.rollout.len())
            .map(|i| {
                let s = self.rollout.sequence(i);
                DSequence {
                    tokens: s
                        .tokens
                        .into_iter()
                        .map(|t| match t {
                            Token::Soft(v, r) => Token::Soft(copy(v, tape), r),
                            other => other,
                        })
                        .collect(),
                    times: s
                        .times
                        .into_iter()
                        .map(|t| match t {
                            TimeSource::Row(v, r) => TimeSource::Row(copy(v, tape), r),
                            other => other,
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DStep {
    pub loss: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GStep {
    pub total: f64,
    pub adv: f64,
    pub intra: f64,
    pub inter: f64,
    pub feature: f64,
    pub clamped: usize,
}

/// Sets the time-head biases so that an untrained generator emits the mean
/// observed step times.
fn init_time_bias(gen: &mut GeneratorParams, dataset: &TrajectoryDataset) {
    let b = dataset.meta.b_bound;
    let (mut intra, mut inter, mut n) = (0.0, 0.0, 0usize);
    for s in dataset.trajectories.iter().flat_map(|t| &t.steps) {
        intra += s.intra / b;
        inter += s.inter / b;
        n += 1;
    }
    let inv_softplus = |y: f64| {
        let y = y.max(1e-6);
        y + (-(-y).exp_m1()).ln()
    };
    for (name, mean) in [("gen.intra.b", intra), ("gen.inter.b", inter)] {
        let i = gen.params.names().iter().position(|x| x == name).expect("time head bias");
        let v = inv_softplus(mean / n.max(1) as f64);
        gen.params.get_mut(i).data.fill(v);
    }
}

/// Generator, discriminator and their optimizers.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
    pub feats: StoreFeatures,
    pub profile: LossProfile,
    pub t_max: usize,
    /// Time losses are reported in data units, model times times `b_bound`.
    pub b_bound: f64,
    gen_opt: Adam,
    disc_opt: Adam,
    spectral_iters: usize,
    straight_through: bool,
}

/// Replaces every relaxed token by `soft + (onehot - soft)` with the
/// bracket held constant: the value is the sampled one-hot vector while
/// gradients still flow through the relaxation.
fn straight_through(tape: &mut Tape, rollout: &mut Rollout, end: usize) {
    let mut hard: Vec<Tensor> = rollout
        .steps
        .iter()
        .map(|s| {
            let [r, c] = tape.shape(s.soft);
            Tensor::zeros(r, c)
        })
        .collect();
    for i in 0..rollout.len() {
        for (t, &r) in rollout.rows[i].iter().enumerate() {
            hard[t].set(r, rollout.items[i][t], 1.0);
        }
        if let Some((_, r)) = rollout.terminal[i] {
            hard[rollout.length(i)].set(r, end, 1.0);
        }
    }
    let mut map = HashMap::new();
    for (step, h) in rollout.steps.iter_mut().zip(hard) {
        let delta = h.zip_map(tape.value(step.soft), |a, b| a - b);
        let delta = tape.constant(delta);
        let st = tape.add(step.soft, delta);
        map.insert(step.soft.id(), st);
        step.soft = st;
    }
    for term in rollout.terminal.iter_mut().flatten() {
        term.0 = map[&term.0.id()];
    }
}

/// Splits sorted discriminator rows into those of the first `n` sequences
/// and the rest.
fn split_sorted(tape: &mut Tape, v: Var, order: &[usize], n: usize) -> (Var, Var) {
    let (a, b): (Vec<usize>, Vec<usize>) = (0..order.len()).partition(|&k| order[k] < n);
    (tape.select_rows(v, &a), tape.select_rows(v, &b))
}

fn stack(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Tensor::new(a.rows + b.rows, a.cols, data).expect("matching widths")
}

fn collect_grads(grads: &mut lastraj_nn::Grads, vars: &[Var]) -> Vec<Option<Tensor>> {
    vars.iter().map(|&v| grads.take(v)).collect()
}

impl Trainer {
    pub fn new(
        gen: GeneratorParams,
        disc: DiscriminatorParams,
        feats: StoreFeatures,
        profile: LossProfile,
        config: &TrainerConfig,
        t_max: usize,
        b_bound: f64,
    ) -> Result<Self> {
        config.validate()?;
        profile.validate()?;
        feats.validate(&gen.dims)?;
        let gen_opt = Adam::new(config.adam(), &gen.params);
        let disc_opt = Adam::new(config.adam(), &disc.params);
        Ok(Trainer {
            gen,
            disc,
            feats,
            profile,
            t_max,
            b_bound,
            gen_opt,
            disc_opt,
            spectral_iters: config.spectral_iters,
            straight_through: config.straight_through,
        })
    }

    /// Fresh models for a dataset, initialized from `rng`.
    pub fn init<R: Rng + ?Sized>(
        dataset: &TrajectoryDataset,
        config: &TrainerConfig,
        profile: LossProfile,
        rng: &mut R,
    ) -> Result<Self> {
        let feats = store_features(&dataset.meta, &dataset.trajectories);
        let dims = config
            .model
            .dims(&dataset.meta, feats.neighbor.cols, dataset.context_width());
        let mut gen = GeneratorParams::new(dims.clone(), rng)?;
        init_time_bias(&mut gen, dataset);
        let disc = DiscriminatorParams::new(dims, rng)?;
        Trainer::new(gen, disc, feats, profile, config, dataset.meta.t_max, dataset.meta.b_bound)
    }

    /// Free-running rollout under the given contexts, recorded on a fresh tape.
    pub fn rollout<R: Rng + ?Sized>(&self, contexts: &Tensor, tau: f64, rng: &mut R) -> Result<FakeBatch> {
        let mut tape = Tape::new();
        let vars = self.gen.bind(&mut tape, true);
        let z = latent(contexts.rows, self.gen.dims.latent, rng);
        let opts = RolloutOptions {
            tau,
            t_max: self.t_max,
            hard_inputs: false,
        };
        let mut rollout = generate(&mut tape, &vars, &self.gen.dims, &self.feats, contexts, &z, &opts, rng)?;
        if self.straight_through {
            straight_through(&mut tape, &mut rollout, self.gen.dims.item_count);
        }
        Ok(FakeBatch {
            tape,
            vars,
            rollout,
            contexts: contexts.clone(),
        })
    }

    /// One discriminator update against a detached fake batch. A non-finite
    /// loss is returned without touching the parameters.
    pub fn discriminator_step(&mut self, real: &RealBatch, fake: &FakeBatch) -> Result<DStep> {
        if real.is_empty() || fake.rollout.is_empty() {
            return Err(TrainError::Config("discriminator step needs nonempty batches".into()));
        }
        let mut tape = Tape::new();
        let dv = self.disc.bind(&mut tape, true);
        let mut seqs = real.sequences();
        seqs.extend(fake.detached(&mut tape));
        let ctx = stack(&real.contexts, &fake.contexts);
        let out = discriminate(&mut tape, &dv, &self.disc.dims, &self.feats, &seqs, &ctx)?;
        let (r, f) = split_sorted(&mut tape, out.logits, &out.order, real.len());
        let (loss, clamped) = match self.profile.kind {
            ProfileKind::Wasserstein => (wasserstein_discriminator(&mut tape, r, f), 0),
            _ => bce_discriminator(&mut tape, r, f),
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Ok(DStep { loss: value, clamped });
        }
        let mut grads = tape.backward(loss)?;
        let g = collect_grads(&mut grads, &dv.all);
        self.disc_opt.update(&mut self.disc.params, &g)?;
        if self.profile.kind == ProfileKind::Wasserstein {
            self.normalize_critic()?;
        }
        Ok(DStep { loss: value, clamped })
    }

    /// Divides every critic weight matrix by its top singular value.
    pub fn normalize_critic(&mut self) -> Result<()> {
        for i in self.disc.linear_weights() {
            let w = spectral_normalize(self.disc.params.get(i), self.spectral_iters)?;
            *self.disc.params.get_mut(i) = w;
        }
        Ok(())
    }

    /// One generator update through the recorded rollout; fake trajectory
    /// `i` is paired with real trajectory `i` for the time losses.
    pub fn generator_step(&mut self, fake: FakeBatch, real: &RealBatch) -> Result<GStep> {
        let FakeBatch {
            mut tape,
            vars,
            rollout,
            contexts,
        } = fake;
        if rollout.len() != real.len() {
            return Err(TrainError::Config("generated and real batches differ in size".into()));
        }
        let dv = self.disc.bind(&mut tape, false);
        let fake_seqs: Vec<DSequence> = (0..rollout.len()).map(|i| rollout.sequence(i)).collect();
        let dims = &self.disc.dims;
        let (fake_logits, fm) = if self.profile.kind == ProfileKind::FeatureMatching {
            let mut seqs = real.sequences();
            seqs.extend(fake_seqs);
            let ctx = stack(&real.contexts, &contexts);
            let out = discriminate(&mut tape, &dv, dims, &self.feats, &seqs, &ctx)?;
            let (_, fl) = split_sorted(&mut tape, out.logits, &out.order, real.len());
            let (rf, ff) = split_sorted(&mut tape, out.feats, &out.order, real.len());
            (fl, Some(feature_matching(&mut tape, rf, ff)))
        } else {
            let out = discriminate(&mut tape, &dv, dims, &self.feats, &fake_seqs, &contexts)?;
            (out.logits, None)
        };
        let (adv, clamped) = match self.profile.kind {
            ProfileKind::Wasserstein => (wasserstein_generator(&mut tape, fake_logits), 0),
            _ => bce_generator(&mut tape, fake_logits),
        };
        let (intra, inter) = time_alignment_tape(&mut tape, &rollout, &real.times);
        let intra = tape.scale(intra, self.b_bound);
        let inter = tape.scale(inter, self.b_bound);
        let mut total = adv;
        if self.profile.kind == ProfileKind::TimeAligned {
            let t = tape.add(intra, inter);
            let t = tape.scale(t, self.profile.lambda_time);
            total = tape.add(total, t);
        }
        if let Some(fm) = fm {
            total = tape.add(total, fm);
        }
        let step = GStep {
            total: tape.value(total).item(),
            adv: tape.value(adv).item(),
            intra: tape.value(intra).item(),
            inter: tape.value(inter).item(),
            feature: fm.map_or(0.0, |v| tape.value(v).item()),
            clamped,
        };
        if !step.total.is_finite() {
            return Ok(step);
        }
        let mut grads = tape.backward(total)?;
        let g = collect_grads(&mut grads, &vars.all);
        self.gen_opt.update(&mut self.gen.params, &g)?;
        Ok(step)
    }
}

pub struct TrainOutput {
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
    pub feats: StoreFeatures,
    pub history: TrainHistory,
}

/// The alternating loop: per update one real batch from the sampler, one
/// rollout under the same contexts, a discriminator step, then a generator
/// step. The temperature is annealed once per epoch and training stops once
/// the epoch-mean generator loss has not improved for `patience` epochs.
///
/// The sampler's batch size is overridden by `config.batch_size`.
pub fn train(
    dataset: &TrajectoryDataset,
    sampler: &SamplerConfig,
    config: &TrainerConfig,
    profile: LossProfile,
) -> Result<TrainOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let trainer = Trainer::init(dataset, config, profile, &mut rng)?;
    train_from(trainer, dataset, sampler, config, &mut rng)
}

/// The loop of [`train`] on an existing trainer; `rng` drives latents and
/// Gumbel noise.
pub fn train_from<R: Rng + ?Sized>(
    mut trainer: Trainer,
    dataset: &TrajectoryDataset,
    sampler: &SamplerConfig,
    config: &TrainerConfig,
    rng: &mut R,
) -> Result<TrainOutput> {
    config.validate()?;
    let mut batches = BatchSampler::new(
        dataset,
        &SamplerConfig {
            batch_size: config.batch_size,
            ..sampler.clone()
        },
    )?;
    let per_epoch = config
        .batches_per_epoch
        .unwrap_or_else(|| dataset.len().div_ceil(config.batch_size));
    let b = dataset.meta.b_bound;
    let mut tau = config.tau_init;
    let mut history = TrainHistory {
        final_tau: tau,
        ..TrainHistory::default()
    };
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for epoch in 0..config.epochs {
        let mut g_sum = 0.0;
        for _ in 0..per_epoch {
            let update = history.records.len();
            let batch = batches.next_batch();
            let real = RealBatch::new(&dataset.trajectories, &batch.indices, b)?;
            let fake = trainer.rollout(&real.contexts, tau, rng)?;
            let fake_lengths = fake.lengths();
            let d = trainer.discriminator_step(&real, &fake)?;
            let g = if d.loss.is_finite() {
                Some(trainer.generator_step(fake, &real)?)
            } else {
                None
            };
            let bad = match g {
                None => Some("discriminator loss"),
                Some(g) if !g.total.is_finite() => Some("generator loss"),
                Some(_) if !(trainer.gen.params.all_finite() && trainer.disc.params.all_finite()) => {
                    Some("parameters")
                }
                _ => None,
            };
            if let Some(what) = bad {
                let mut losses = vec![("loss_d".to_string(), d.loss)];
                if let Some(g) = g {
                    losses.extend([
                        ("loss_g".to_string(), g.total),
                        ("loss_adv".to_string(), g.adv),
                        ("loss_intra".to_string(), g.intra),
                        ("loss_inter".to_string(), g.inter),
                        ("loss_feature".to_string(), g.feature),
                    ]);
                }
                return Err(TrainError::NumericalAbort(Box::new(Diagnostic {
                    update,
                    epoch,
                    reason: format!("non-finite {what}"),
                    tau,
                    batch,
                    losses,
                    fake_lengths,
                })));
            }
            let g = g.expect("checked above");
            g_sum += g.total;
            history.records.push(UpdateRecord {
                update,
                epoch,
                bucket: batch.bucket,
                loss_d: d.loss,
                loss_g: g.total,
                loss_adv: g.adv,
                loss_intra: g.intra,
                loss_inter: g.inter,
                tau,
                clamped: d.clamped + g.clamped,
            });
        }
        history.epochs_run = epoch + 1;
        tau = anneal_temperature(tau, config.anneal, config.tau_min);
        history.final_tau = tau;
        let mean = g_sum / per_epoch as f64;
        if mean < best {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutput {
        gen: trainer.gen,
        disc: trainer.disc,
        feats: trainer.feats,
        history,
    })
}
