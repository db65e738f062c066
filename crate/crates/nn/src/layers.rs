use rand::distributions::Open01;
use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Negative slope of the attention score rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `in x 4H`, gate blocks ordered input, forget, output, candidate.
    pub wx: Var,
    /// `H x 4H`.
    pub wh: Var,
    /// `1 x 4H`.
    pub b: Var,
}

impl LstmVars {
    pub fn hidden(&self, tape: &Tape) -> usize {
        tape.shape(self.wh)[0]
    }

    pub fn input_width(&self, tape: &Tape) -> usize {
        tape.shape(self.wx)[0]
    }
}

/// One LSTM step on a batch of rows. Returns `(h', c')`.
pub fn lstm_cell(tape: &mut Tape, u: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let hid = p.hidden(tape);
    let [wx_r, wx_c] = tape.shape(p.wx);
    let (su, sh, sc) = (tape.shape(u), tape.shape(h), tape.shape(c));
    if wx_c != 4 * hid
        || tape.shape(p.wh) != [hid, 4 * hid]
        || tape.shape(p.b) != [1, 4 * hid]
        || su[1] != wx_r
        || sh != [su[0], hid]
        || sc != [su[0], hid]
    {
        return Err(NnError::Argument(format!(
            "lstm widths: input {su:?}, hidden {sh:?}, cell {sc:?}, wx {:?}",
            [wx_r, wx_c]
        )));
    }
    let a = tape.matmul(u, p.wx);
    let b = tape.matmul(h, p.wh);
    let pre = tape.add(a, b);
    let pre = tape.add_row(pre, p.b);
    let out = tape.lstm(pre, c);
    let h2 = tape.slice_cols(out, 0, hid);
    let c2 = tape.slice_cols(out, hid, hid);
    Ok((h2, c2))
}

/// Fuses three row-aligned projected group embeddings. Returns the fused
/// rows and the `n x 3` attention weights.
pub fn fuse_projected(tape: &mut Tape, s: Var, nb: Var, m: Var, w_attn: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(s);
    if tape.shape(nb) != shape || tape.shape(m) != shape || tape.shape(w_attn) != [shape[1], 1] {
        return Err(NnError::Argument(format!(
            "fusion widths: {shape:?}, {:?}, {:?}, score {:?}",
            tape.shape(nb),
            tape.shape(m),
            tape.shape(w_attn)
        )));
    }
    let es = tape.matmul(s, w_attn);
    let en = tape.matmul(nb, w_attn);
    let em = tape.matmul(m, w_attn);
    let e = tape.concat_cols(&[es, en, em]);
    let e = tape.leaky_relu(e, LEAKY_SLOPE);
    let alpha = tape.softmax_rows(e);
    let mut acc = None;
    for (j, g) in [s, nb, m].into_iter().enumerate() {
        let a = tape.slice_cols(alpha, j, 1);
        let term = tape.mul_col(g, a);
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term),
        });
    }
    Ok((acc.expect("three groups"), alpha))
}

#[derive(Debug, Clone, Copy)]
pub struct FusionProjection {
    pub w_store: Var,
    pub w_neighbor: Var,
    pub w_mall: Var,
    pub w_attn: Var,
}

/// Projects each group with a rectified linear map, then fuses.
pub fn attention_fuse(
    tape: &mut Tape,
    x_store: Var,
    x_neighbor: Var,
    x_mall: Var,
    p: &FusionProjection,
) -> Result<Var> {
    let pairs = [(x_store, p.w_store), (x_neighbor, p.w_neighbor), (x_mall, p.w_mall)];
    let mut groups = [x_store; 3];
    for (k, (x, w)) in pairs.into_iter().enumerate() {
        if tape.shape(x)[1] != tape.shape(w)[0] {
            return Err(NnError::Argument(format!(
                "fusion group {k}: input {:?}, projection {:?}",
                tape.shape(x),
                tape.shape(w)
            )));
        }
        let pre = tape.matmul(x, w);
        groups[k] = tape.relu(pre);
    }
    fuse_projected(tape, groups[0], groups[1], groups[2], p.w_attn).map(|r| r.0)
}

/// Draws a standard Gumbel variate.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub soft: Vec<f64>,
    pub hard: usize,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Result<GumbelSample> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(NnError::Argument(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(NnError::Argument("no logits".into()));
    }
    let perturbed: Vec<f64> = logits.iter().map(|l| l + gumbel_noise(rng)).collect();
    let hard = argmax(&perturbed);
    let m = perturbed[hard];
    let mut soft: Vec<f64> = perturbed.iter().map(|p| ((p - m) / tau).exp()).collect();
    let z: f64 = soft.iter().sum();
    soft.iter_mut().for_each(|s| *s /= z);
    Ok(GumbelSample { soft, hard })
}

/// Batched relaxation on the tape with caller-supplied noise. Returns the
/// soft rows and the per-row argmax of the perturbed logits.
pub fn gumbel_softmax_rows(tape: &mut Tape, logits: Var, noise: &Tensor, tau: f64) -> Result<(Var, Vec<usize>)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(NnError::Argument(format!("temperature must be positive, got {tau}")));
    }
    if tape.shape(logits) != noise.shape() {
        return Err(NnError::Argument("noise shape differs from logits".into()));
    }
    let g = tape.constant(noise.clone());
    let pert = tape.add(logits, g);
    let pv = tape.value(pert);
    let hard = (0..pv.rows).map(|r| argmax(pv.row_slice(r))).collect();
    let scaled = tape.scale(pert, 1.0 / tau);
    Ok((tape.softmax_rows(scaled), hard))
}

pub fn gumbel_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor {
        rows,
        cols,
        data: (0..rows * cols).map(|_| gumbel_noise(rng)).collect(),
    }
}

/// Step inputs for a batch of sequences sorted by nonincreasing length.
/// `steps[t]` holds one row per sequence longer than `t`.
#[derive(Debug, Clone)]
pub struct SortedSteps {
    pub lengths: Vec<usize>,
    pub steps: Vec<Var>,
}

impl SortedSteps {
    pub fn validate(&self, tape: &Tape) -> Result<usize> {
        if self.lengths.is_empty() {
            return Err(NnError::Argument("empty batch".into()));
        }
        if self.lengths.iter().any(|&l| l == 0) {
            return Err(NnError::Argument("empty sequence".into()));
        }
        if self.lengths.windows(2).any(|w| w[0] < w[1]) {
            return Err(NnError::Argument("lengths must be sorted nonincreasing".into()));
        }
        if self.steps.len() != self.lengths[0] {
            return Err(NnError::Argument("one step tensor per time index".into()));
        }
        let width = tape.shape(self.steps[0])[1];
        for (t, &s) in self.steps.iter().enumerate() {
            let active = self.lengths.iter().filter(|&&l| l > t).count();
            if tape.shape(s) != [active, width] {
                return Err(NnError::Argument(format!(
                    "step {t}: shape {:?}, expected [{active}, {width}]",
                    tape.shape(s)
                )));
            }
        }
        Ok(width)
    }
}

/// Sorts padded per-sequence step rows by length and keeps only valid rows.
/// `padded[i]` may carry arbitrary content past `lengths[i]`.
pub fn sorted_from_padded(tape: &mut Tape, padded: &[Tensor], lengths: &[usize]) -> Result<(SortedSteps, Vec<usize>)> {
    if padded.len() != lengths.len() {
        return Err(NnError::Argument("one length per sequence".into()));
    }
    if lengths.iter().any(|&l| l == 0) {
        return Err(NnError::Argument("empty sequence".into()));
    }
    for (p, &l) in padded.iter().zip(lengths) {
        if p.rows < l {
            return Err(NnError::Argument("sequence shorter than its length".into()));
        }
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
    let sorted: Vec<usize> = order.iter().map(|&i| lengths[i]).collect();
    if padded.iter().any(|p| p.cols != padded[0].cols) {
        return Err(NnError::Argument("step widths differ".into()));
    }
    let steps = (0..sorted.first().copied().unwrap_or(0))
        .map(|t| {
            let rows: Vec<Vec<f64>> = order
                .iter()
                .filter(|&&i| lengths[i] > t)
                .map(|&i| padded[i].row_slice(t).to_vec())
                .collect();
            tape.constant(Tensor::from_rows(&rows).expect("equal widths"))
        })
        .collect();
    Ok((SortedSteps { lengths: sorted, steps }, order))
}

/// Bidirectional encoder over exact lengths. Returns `[h_last_fwd;
/// h_first_bwd; context]` features and the affine output logits, in the
/// sorted order of `input`.
pub fn bilstm_encode(
    tape: &mut Tape,
    input: &SortedSteps,
    context: Var,
    fwd: &LstmVars,
    bwd: &LstmVars,
    w_out: Var,
    b_out: Var,
) -> Result<(Var, Var)> {
    input.validate(tape)?;
    let n = input.lengths.len();
    let hid = fwd.hidden(tape);
    if bwd.hidden(tape) != hid {
        return Err(NnError::Argument("direction widths differ".into()));
    }
    let cw = tape.shape(context);
    if cw[0] != n || tape.shape(w_out) != [2 * hid + cw[1], 1] || tape.shape(b_out) != [1, 1] {
        return Err(NnError::Argument(format!(
            "projection input {:?} does not match 2*{hid} + context {:?}",
            tape.shape(w_out),
            cw
        )));
    }
    let tmax = input.lengths[0];
    let active: Vec<usize> = (0..tmax)
        .map(|t| input.lengths.iter().filter(|&&l| l > t).count())
        .collect();

    let mut hs = Vec::with_capacity(tmax);
    let (mut h, mut c) = (None::<Var>, None::<Var>);
    for t in 0..tmax {
        let k = active[t];
        let (hp, cp) = match (h, c) {
            (Some(h), Some(c)) => (trim(tape, h, k), trim(tape, c, k)),
            _ => (tape.constant(Tensor::zeros(k, hid)), tape.constant(Tensor::zeros(k, hid))),
        };
        let (h2, c2) = lstm_cell(tape, input.steps[t], hp, cp, fwd)?;
        hs.push(h2);
        h = Some(h2);
        c = Some(c2);
    }
    let picks: Vec<(Var, usize)> = input
        .lengths
        .iter()
        .enumerate()
        .map(|(i, &l)| (hs[l - 1], i))
        .collect();
    let h_fwd = tape.gather_rows(&picks);

    let (mut h, mut c) = (None::<Var>, None::<Var>);
    for t in (0..tmax).rev() {
        let k = active[t];
        let (hp, cp) = match (h, c) {
            (Some(h), Some(c)) => (grow(tape, h, k), grow(tape, c, k)),
            _ => (tape.constant(Tensor::zeros(k, hid)), tape.constant(Tensor::zeros(k, hid))),
        };
        let (h2, c2) = lstm_cell(tape, input.steps[t], hp, cp, bwd)?;
        h = Some(h2);
        c = Some(c2);
    }
    let h_bwd = h.expect("at least one step");
    let feats = tape.concat_cols(&[h_fwd, h_bwd, context]);
    let logits = tape.matmul(feats, w_out);
    let logits = tape.add_row(logits, b_out);
    Ok((feats, logits))
}

fn trim(tape: &mut Tape, v: Var, k: usize) -> Var {
    if tape.shape(v)[0] == k {
        v
    } else {
        tape.slice_rows(v, 0, k)
    }
}

fn grow(tape: &mut Tape, v: Var, k: usize) -> Var {
    let [r, c] = tape.shape(v);
    if r == k {
        v
    } else {
        let z = tape.constant(Tensor::zeros(k - r, c));
        tape.concat_rows(&[v, z])
    }
}
