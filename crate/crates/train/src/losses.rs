//! Adversarial and time-alignment losses.

use lastraj_core::trajectory::Trajectory;
use lastraj_nn::{Rollout, Tape, Tensor, Var};

/// Discriminator probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`
/// before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

/// Mean absolute per-step intra and inter differences over the first
/// `min(T, T̂)` steps.
///
/// # Panics
/// If either trajectory is empty.
pub fn time_alignment_losses(real: &Trajectory, fake: &Trajectory) -> (f64, f64) {
    assert!(!real.is_empty() && !fake.is_empty(), "time losses need nonempty trajectories");
    let m = real.len().min(fake.len());
    let (mut intra, mut inter) = (0.0, 0.0);
    for (a, b) in real.steps.iter().zip(&fake.steps).take(m) {
        intra += (a.intra - b.intra).abs();
        inter += (a.inter - b.inter).abs();
    }
    (intra / m as f64, inter / m as f64)
}

fn count_clamped(p: &Tensor) -> usize {
    p.data
        .iter()
        .filter(|&&v| !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&v))
        .count()
}

/// `mean log clamp(p)` and `mean log clamp(1 - p)` pieces for `p = σ(logits)`.
fn log_prob(tape: &mut Tape, logits: Var, complement: bool) -> (Var, usize) {
    let p = tape.sigmoid(logits);
    let clamped = count_clamped(tape.value(p));
    let p = if complement { tape.affine(p, -1.0, 1.0) } else { p };
    let p = tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let lp = tape.log(p);
    (tape.mean(lp), clamped)
}

/// `-mean log D(real) - mean log(1 - D(fake))`.
pub fn bce_discriminator(tape: &mut Tape, real_logits: Var, fake_logits: Var) -> (Var, usize) {
    let (a, ca) = log_prob(tape, real_logits, false);
    let (b, cb) = log_prob(tape, fake_logits, true);
    let s = tape.add(a, b);
    (tape.scale(s, -1.0), ca + cb)
}

/// `-mean log D(fake)`.
pub fn bce_generator(tape: &mut Tape, fake_logits: Var) -> (Var, usize) {
    let (a, c) = log_prob(tape, fake_logits, false);
    (tape.scale(a, -1.0), c)
}

/// Critic loss `mean D(fake) - mean D(real)` on raw scores.
pub fn wasserstein_discriminator(tape: &mut Tape, real_scores: Var, fake_scores: Var) -> Var {
    let f = tape.mean(fake_scores);
    let r = tape.mean(real_scores);
    tape.sub(f, r)
}

pub fn wasserstein_generator(tape: &mut Tape, fake_scores: Var) -> Var {
    let f = tape.mean(fake_scores);
    tape.scale(f, -1.0)
}

/// Squared distance between the batch-mean feature vectors.
pub fn feature_matching(tape: &mut Tape, real_feats: Var, fake_feats: Var) -> Var {
    let r = tape.mean_rows(real_feats);
    let f = tape.mean_rows(fake_feats);
    let d = tape.sub(r, f);
    let d = tape.square(d);
    tape.sum(d)
}

/// Batch means of the per-pair time losses, fake trajectory `i` paired with
/// `real[i]`. Real times are `[intra, inter]` per step in model units.
pub fn time_alignment_tape(tape: &mut Tape, fake: &Rollout, real: &[Vec<[f64; 2]>]) -> (Var, Var) {
    assert_eq!(fake.len(), real.len(), "one real trajectory per generated one");
    let n = real.len() as f64;
    let mut picks = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (i, r) in real.iter().enumerate() {
        let m = r.len().min(fake.length(i));
        assert!(m >= 1, "time losses need nonempty trajectories");
        for t in 0..m {
            picks.push((fake.steps[t].times, fake.rows[i][t]));
            targets.extend_from_slice(&r[t]);
            weights.push(1.0 / (m as f64 * n));
        }
    }
    let p = picks.len();
    let g = tape.gather_rows(&picks);
    let target = tape.constant(Tensor::new(p, 2, targets).expect("target shape"));
    let w = tape.constant(Tensor::new(p, 1, weights).expect("weight shape"));
    let d = tape.sub(g, target);
    let d = tape.abs(d);
    let d = tape.mul_col(d, w);
    let intra = tape.slice_cols(d, 0, 1);
    let inter = tape.slice_cols(d, 1, 1);
    (tape.sum(intra), tape.sum(inter))
}
