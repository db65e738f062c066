//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    attention_fuse, bilstm_encode, gumbel_matrix, gumbel_softmax_rows, lstm_cell, FusionProjection, LstmVars,
    SortedSteps,
};
use crate::model::{
    discriminate, generate, store_tables, DSequence, DiscriminatorParams, GeneratorParams, ModelDims, RolloutOptions,
    StoreFeatures, TimeSource, Token,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheck {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates where halving the step changed the difference quotient,
    /// i.e. a kink lies within the stencil.
    pub skipped: usize,
}

impl GradCheck {
    pub fn merge(&mut self, o: GradCheck) {
        self.worst = self.worst.max(o.worst);
        self.checked += o.checked;
        self.skipped += o.skipped;
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences over every coordinate of every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };
    let mut out = GradCheck::default();
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let analytic = grads.get(*v).map_or(0.0, |g| g.data[j]);
            let x0 = inputs[i].data[j];
            let mut quotient = |h: f64| -> Result<f64> {
                xs[i].data[j] = x0 + h;
                let up = eval(&xs)?;
                xs[i].data[j] = x0 - h;
                let down = eval(&xs)?;
                xs[i].data[j] = x0;
                Ok((up - down) / (2.0 * h))
            };
            let coarse = quotient(FD_STEP)?;
            let fine = quotient(FD_STEP / 2.0)?;
            if rel(coarse, fine) > REL_TOL {
                out.skipped += 1;
                continue;
            }
            out.checked += 1;
            out.worst = out.worst.max(rel(analytic, fine));
        }
    }
    Ok(out)
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor {
        rows: r,
        cols: c,
        data: (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect(),
    }
}

/// Random linear functional `sum(R ⊙ x)` of a tensor.
fn probe(tape: &mut Tape, x: Var, rng: &mut ChaCha8Rng) -> Var {
    let [r, c] = tape.shape(x);
    let w = tape.constant(rand_tensor(rng, r, c, 1.0));
    let m = tape.mul(x, w);
    tape.sum(m)
}

fn probe_all(tape: &mut Tape, xs: &[Var], seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = None;
    for &x in xs {
        let p = probe(tape, x, &mut rng);
        acc = Some(match acc {
            None => p,
            Some(a) => tape.add(a, p),
        });
    }
    acc.expect("at least one output")
}

fn lstm_config(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, inp, h) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let inputs = vec![
        rand_tensor(rng, n, inp, 1.5),
        rand_tensor(rng, n, h, 1.0),
        rand_tensor(rng, n, h, 1.0),
        rand_tensor(rng, inp, 4 * h, 1.0),
        rand_tensor(rng, h, 4 * h, 1.0),
        rand_tensor(rng, 1, 4 * h, 0.5),
    ];
    let seed = rng.gen();
    check_gradients(&inputs, |t, v| {
        let p = LstmVars {
            wx: v[3],
            wh: v[4],
            b: v[5],
        };
        let (h2, c2) = lstm_cell(t, v[0], v[1], v[2], &p)?;
        Ok(probe_all(t, &[h2, c2], seed))
    })
}

fn fusion_config(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let n = rng.gen_range(1..=3);
    let (ds, dn, dm, d) = (
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    );
    let inputs = vec![
        rand_tensor(rng, n, ds, 1.0),
        rand_tensor(rng, n, dn, 1.0),
        rand_tensor(rng, n, dm, 1.0),
        rand_tensor(rng, ds, d, 1.0),
        rand_tensor(rng, dn, d, 1.0),
        rand_tensor(rng, dm, d, 1.0),
        rand_tensor(rng, d, 1, 1.5),
    ];
    let seed = rng.gen();
    check_gradients(&inputs, |t, v| {
        let p = FusionProjection {
            w_store: v[3],
            w_neighbor: v[4],
            w_mall: v[5],
            w_attn: v[6],
        };
        let f = attention_fuse(t, v[0], v[1], v[2], &p)?;
        Ok(probe_all(t, &[f], seed))
    })
}

fn gumbel_config(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, k) = (rng.gen_range(1..=3), rng.gen_range(2..=6));
    let tau = rng.gen_range(0.1..2.0);
    let noise = gumbel_matrix(n, k, rng);
    let inputs = vec![rand_tensor(rng, n, k, 2.0)];
    let seed = rng.gen();
    check_gradients(&inputs, |t, v| {
        let (soft, _) = gumbel_softmax_rows(t, v[0], &noise, tau)?;
        Ok(probe_all(t, &[soft], seed))
    })
}

fn bilstm_config(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let n = rng.gen_range(1..=3);
    let mut lengths: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
    lengths.sort_unstable_by(|a, b| b.cmp(a));
    let (f, h, c) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(0..=2));
    let mut inputs: Vec<Tensor> = (0..lengths[0])
        .map(|t| rand_tensor(rng, lengths.iter().filter(|&&l| l > t).count(), f, 1.0))
        .collect();
    let base = inputs.len();
    inputs.push(rand_tensor(rng, n, c, 1.0));
    for _ in 0..2 {
        inputs.push(rand_tensor(rng, f, 4 * h, 1.0));
        inputs.push(rand_tensor(rng, h, 4 * h, 1.0));
        inputs.push(rand_tensor(rng, 1, 4 * h, 0.5));
    }
    inputs.push(rand_tensor(rng, 2 * h + c, 1, 1.0));
    inputs.push(rand_tensor(rng, 1, 1, 0.5));
    let seed = rng.gen();
    check_gradients(&inputs, |t, v| {
        let steps = SortedSteps {
            lengths: lengths.clone(),
            steps: v[..base].to_vec(),
        };
        let fwd = LstmVars {
            wx: v[base + 1],
            wh: v[base + 2],
            b: v[base + 3],
        };
        let bwd = LstmVars {
            wx: v[base + 4],
            wh: v[base + 5],
            b: v[base + 6],
        };
        let (feats, logits) = bilstm_encode(t, &steps, v[base], &fwd, &bwd, v[base + 7], v[base + 8])?;
        let score = t.sigmoid(logits);
        Ok(probe_all(t, &[feats, score], seed))
    })
}

fn tiny_dims(rng: &mut ChaCha8Rng) -> ModelDims {
    ModelDims {
        item_count: rng.gen_range(1..=3),
        categories: 2,
        floors: 2,
        neighbor_width: rng.gen_range(1..=2),
        context_width: rng.gen_range(0..=2),
        embed: rng.gen_range(1..=3),
        type_embed: 2,
        floor_embed: 1,
        latent: rng.gen_range(0..=2),
        hidden: rng.gen_range(1..=3),
        disc_hidden: rng.gen_range(1..=3),
    }
}

fn tiny_features(rng: &mut ChaCha8Rng, d: &ModelDims) -> StoreFeatures {
    StoreFeatures {
        categories: (0..d.item_count).map(|_| rng.gen_range(0..d.categories)).collect(),
        floors: (0..d.item_count).map(|_| rng.gen_range(0..d.floors)).collect(),
        neighbor: Tensor {
            rows: d.item_count,
            cols: d.neighbor_width,
            data: (0..d.item_count * d.neighbor_width).map(|_| rng.gen()).collect(),
        },
    }
}

fn fusion_table_config(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let dims = tiny_dims(rng);
    let feats = tiny_features(rng, &dims);
    let g = GeneratorParams::new(dims.clone(), rng)?;
    let n = rng.gen_range(1..=3);
    let ctx = rand_tensor(rng, n, dims.context_width, 1.0);
    let y = rand_tensor(rng, n, dims.vocab(), 1.0);
    let blocks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut inputs = g.params.tensors().to_vec();
    inputs.push(y);
    let np = g.params.len();
    let seed = rng.gen();
    check_gradients(&inputs, |t, v| {
        let fusion = g.vars_from(v[..np].to_vec()).fusion;
        let table = store_tables(t, &fusion, &feats, &ctx)?;
        let mixed = t.mix_rows(v[np], table, fusion.end, &blocks);
        Ok(probe_all(t, &[table, mixed], seed))
    })
}

fn generator_config(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let dims = tiny_dims(rng);
    let feats = tiny_features(rng, &dims);
    let g = GeneratorParams::new(dims.clone(), rng)?;
    let n = rng.gen_range(1..=3);
    let ctx = rand_tensor(rng, n, dims.context_width, 1.0);
    let z = rand_tensor(rng, n, dims.latent, 1.0);
    let opts = RolloutOptions {
        tau: rng.gen_range(0.3..1.5),
        t_max: rng.gen_range(1..=4),
        hard_inputs: false,
    };
    let noise_seed: u64 = rng.gen();
    let seed = rng.gen();
    let inputs = g.params.tensors().to_vec();
    check_gradients(&inputs, |t, v| {
        let gv = g.vars_from(v.to_vec());
        let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed);
        let r = generate(t, &gv, &dims, &feats, &ctx, &z, &opts, &mut nrng)?;
        let outs: Vec<Var> = r.steps.iter().flat_map(|s| [s.soft, s.times]).collect();
        Ok(probe_all(t, &outs, seed))
    })
}

fn discriminator_config(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let dims = tiny_dims(rng);
    let feats = tiny_features(rng, &dims);
    let d = DiscriminatorParams::new(dims.clone(), rng)?;
    let n = rng.gen_range(1..=3);
    let ctx = rand_tensor(rng, n, dims.context_width, 1.0);
    let lens: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
    let soft_rows: Vec<Tensor> = lens.iter().map(|&l| rand_tensor(rng, l, dims.vocab(), 1.0)).collect();
    let time_rows: Vec<Tensor> = lens.iter().map(|&l| rand_tensor(rng, l, 2, 1.0)).collect();
    let observed: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let items: Vec<Vec<usize>> = lens
        .iter()
        .map(|&l| (0..l).map(|_| rng.gen_range(0..dims.item_count)).collect())
        .collect();
    let np = d.params.len();
    let mut inputs = d.params.tensors().to_vec();
    inputs.extend(soft_rows.iter().cloned());
    inputs.extend(time_rows.iter().cloned());
    let seed = rng.gen();
    check_gradients(&inputs, |t, v| {
        let dv = d.vars_from(v[..np].to_vec());
        let seqs: Vec<DSequence> = (0..n)
            .map(|i| {
                if observed[i] {
                    let times: Vec<[f64; 2]> = (0..lens[i]).map(|s| [time_rows[i].get(s, 0), time_rows[i].get(s, 1)]).collect();
                    DSequence::observed(&items[i], &times)
                } else {
                    let (sv, tv) = (v[np + i], v[np + n + i]);
                    let mut tokens: Vec<_> = (0..lens[i]).map(|s| Token::Soft(sv, s)).collect();
                    let mut times: Vec<_> = (0..lens[i]).map(|s| TimeSource::Row(tv, s)).collect();
                    tokens.push(Token::End);
                    times.push(TimeSource::Value([0.0, 0.0]));
                    DSequence { tokens, times }
                }
            })
            .collect();
        let out = discriminate(t, &dv, &dims, &feats, &seqs, &ctx)?;
        let score = t.sigmoid(out.logits);
        Ok(probe_all(t, &[out.feats, score], seed))
    })
}

pub const LAYERS: [&str; 7] = [
    "lstm_cell",
    "attention_fuse",
    "gumbel_softmax",
    "bilstm_encode",
    "fusion_table",
    "generator_rollout",
    "discriminator",
];

/// Runs `configs` random configurations of each layer. Returns one summary
/// per entry of [`LAYERS`].
pub fn layer_suite(seed: u64, configs: usize) -> Result<Vec<(&'static str, GradCheck)>> {
    let runners: [fn(&mut ChaCha8Rng) -> Result<GradCheck>; 7] = [
        lstm_config,
        fusion_config,
        gumbel_config,
        bilstm_config,
        fusion_table_config,
        generator_config,
        discriminator_config,
    ];
    let mut out = Vec::new();
    for (k, (name, run)) in LAYERS.iter().zip(runners).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut acc = GradCheck::default();
        for _ in 0..configs {
            acc.merge(run(&mut rng)?);
        }
        out.push((*name, acc));
    }
    Ok(out)
}
