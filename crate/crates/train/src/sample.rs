use lastraj_core::trajectory::{DatasetMeta, Step, Trajectory};
use lastraj_nn::{generate, GeneratorParams, RolloutOptions, StoreFeatures, Tape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::Result;

/// Store features from the dataset meta and a set of observed trajectories.
/// The neighbour vector of item `i` is the Laplace-smoothed distribution of
/// the categories of the items visited right after `i`.
pub fn store_features(meta: &DatasetMeta, trajectories: &[Trajectory]) -> StoreFeatures {
    let n = meta.item_count;
    let categories: Vec<usize> = match &meta.categories {
        Some(c) => c.iter().map(|&x| x as usize).collect(),
        None => vec![0; n],
    };
    let floors: Vec<usize> = match &meta.floors {
        Some(f) => f.iter().map(|&x| x as usize).collect(),
        None => vec![0; n],
    };
    let width = meta.category_count().unwrap_or(1).max(1);
    let mut counts = Tensor::filled(n, width, 1.0);
    for t in trajectories {
        for w in t.steps.windows(2) {
            let (from, to) = (w[0].item as usize, w[1].item as usize);
            let c = categories[to];
            counts.set(from, c, counts.get(from, c) + 1.0);
        }
    }
    for r in 0..n {
        let row = counts.row_slice_mut(r);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    StoreFeatures {
        categories,
        floors,
        neighbor: counts,
    }
}

/// A generated trajectory in data units: model times are multiplied by
/// `b_bound`, and a step whose total exceeds `b_bound` is scaled back onto it.
pub fn to_trajectory(items: &[usize], times: &[[f64; 2]], b_bound: f64, context: &[f64]) -> Trajectory {
    let steps = items
        .iter()
        .zip(times)
        .map(|(&k, &[a, b])| {
            let (mut intra, mut inter) = (a * b_bound, b * b_bound);
            let total = intra + inter;
            if total > b_bound {
                intra *= b_bound / total;
                inter = (inter * b_bound / total).min(b_bound - intra);
            }
            Step::new(k as u32, intra, inter)
        })
        .collect();
    Trajectory::new(String::new(), steps, context.to_vec())
}

const CHUNK: usize = 256;

/// One hard-sampled trajectory per context, generated in chunks.
pub fn sample_trajectories<R: Rng + ?Sized>(
    gen: &GeneratorParams,
    feats: &StoreFeatures,
    contexts: &[Vec<f64>],
    t_max: usize,
    tau: f64,
    b_bound: f64,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let d = &gen.dims;
    let opts = RolloutOptions {
        tau,
        t_max,
        hard_inputs: true,
    };
    let mut out = Vec::with_capacity(contexts.len());
    for chunk in contexts.chunks(CHUNK) {
        let ctx = Tensor::from_rows(chunk)?;
        let z = latent(chunk.len(), d.latent, rng);
        let mut tape = Tape::new();
        let gv = gen.bind(&mut tape, false);
        let r = generate(&mut tape, &gv, d, feats, &ctx, &z, &opts, rng)?;
        for (i, c) in chunk.iter().enumerate() {
            out.push(to_trajectory(&r.items[i], &r.times[i], b_bound, c));
        }
    }
    Ok(out)
}

pub(crate) fn latent<R: Rng + ?Sized>(rows: usize, width: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(rows, width, data).expect("latent shape")
}
