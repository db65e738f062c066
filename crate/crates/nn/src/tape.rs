//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! Operations panic on shape mismatch; those are programming errors.

use crate::tensor::{gemm, Tensor};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Vec<(Var, usize)>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    TileRows(Var, usize),
    RepeatRows(Var, usize),
    /// Saves `[i, f, o, g, tanh c]` per row and unit.
    Lstm(Var, Var, Vec<f64>),
    MixRows {
        y: Var,
        table: Var,
        end: Var,
        blocks: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by leaf.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through a single `exp`; absolute error stays at rounding level.
#[inline]
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul {:?} by {:?}", ta.shape(), tb.shape());
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        gemm(ta, false, tb, false, &mut out, 0.0);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shapes");
        let out = ta.zip_map(tb, f);
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(r));
        assert!(tr.rows == 1 && tr.cols == ta.cols, "add_row shapes");
        let mut out = ta.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_slice_mut(i).iter_mut().zip(&tr.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r), &[a, r])
    }

    /// Scales row `i` of `a` by `c[i]`, with `c` of shape `n x 1`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (ta, tc) = (self.value(a), self.value(c));
        assert!(tc.cols == 1 && tc.rows == ta.rows, "mul_col shapes");
        let mut out = ta.clone();
        for i in 0..out.rows {
            let s = tc.data[i];
            for o in out.row_slice_mut(i) {
                *o *= s;
            }
        }
        self.push(out, Op::MulCol(a, c), &[a, c])
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = ta.clone();
        for i in 0..out.rows {
            let row = out.row_slice_mut(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let ta = self.value(a);
        assert!(start + width <= ta.cols, "slice_cols range");
        let mut out = Tensor::zeros(ta.rows, width);
        for i in 0..ta.rows {
            out.row_slice_mut(i)
                .copy_from_slice(&ta.row_slice(i)[start..start + width]);
        }
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let ta = self.value(a);
        assert!(start + count <= ta.rows, "slice_rows range");
        let out = Tensor {
            rows: count,
            cols: ta.cols,
            data: ta.data[start * ta.cols..(start + count) * ta.cols].to_vec(),
        };
        self.push(out, Op::SliceRows(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows, rows, "concat_cols rows");
                self.value(p).cols
            })
            .sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            let dst = &mut out.data[i * cols..(i + 1) * cols];
            for &p in parts {
                let src = self.nodes[p.0].value.row_slice(i);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows cols");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor { rows, cols, data }, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Stacks the listed rows, possibly from different tensors.
    pub fn gather_rows(&mut self, picks: &[(Var, usize)]) -> Var {
        assert!(!picks.is_empty(), "gather of nothing");
        let cols = self.value(picks[0].0).cols;
        let mut data = Vec::with_capacity(picks.len() * cols);
        for &(v, r) in picks {
            let t = self.value(v);
            assert_eq!(t.cols, cols, "gather_rows cols");
            data.extend_from_slice(t.row_slice(r));
        }
        let inputs: Vec<Var> = picks.iter().map(|p| p.0).collect();
        self.push(
            Tensor {
                rows: picks.len(),
                cols,
                data,
            },
            Op::Gather(picks.to_vec()),
            &inputs,
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let picks: Vec<(Var, usize)> = rows.iter().map(|&r| (a, r)).collect();
        self.gather_rows(&picks)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(!t.is_empty(), "mean of empty tensor");
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Column means, `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(t.rows > 0, "mean_rows of empty tensor");
        let mut out = Tensor::zeros(1, t.cols);
        for i in 0..t.rows {
            for (o, v) in out.data.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        let n = t.rows as f64;
        for o in out.data.iter_mut() {
            *o /= n;
        }
        self.push(out, Op::MeanRows(a), &[a])
    }

    /// `[a; a; ...]`, `times` copies.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.len() * times);
        for _ in 0..times {
            data.extend_from_slice(&t.data);
        }
        let out = Tensor {
            rows: t.rows * times,
            cols: t.cols,
            data,
        };
        self.push(out, Op::TileRows(a, times), &[a])
    }

    /// Each row repeated `times` times in place.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.len() * times);
        for i in 0..t.rows {
            for _ in 0..times {
                data.extend_from_slice(t.row_slice(i));
            }
        }
        let out = Tensor {
            rows: t.rows * times,
            cols: t.cols,
            data,
        };
        self.push(out, Op::RepeatRows(a, times), &[a])
    }

    /// LSTM state update. `pre` holds gate pre-activations in the column
    /// order input, forget, output, candidate; returns `[h | c]`.
    pub fn lstm(&mut self, pre: Var, c_prev: Var) -> Var {
        let (tp, tc) = (self.value(pre), self.value(c_prev));
        let h = tc.cols;
        assert!(tp.cols == 4 * h && tp.rows == tc.rows, "lstm shapes");
        let mut out = Tensor::zeros(tp.rows, 2 * h);
        let mut cache = vec![0.0; tp.rows * 5 * h];
        for r in 0..tp.rows {
            let p = tp.row_slice(r);
            let cp = tc.row_slice(r);
            let o = &mut out.data[r * 2 * h..(r + 1) * 2 * h];
            let k = &mut cache[r * 5 * h..(r + 1) * 5 * h];
            for j in 0..h {
                let ig = sigmoid(p[j]);
                let fg = sigmoid(p[h + j]);
                let og = sigmoid(p[2 * h + j]);
                let gg = tanh(p[3 * h + j]);
                let c = fg * cp[j] + ig * gg;
                let tcv = tanh(c);
                o[j] = og * tcv;
                o[h + j] = c;
                k[j] = ig;
                k[h + j] = fg;
                k[2 * h + j] = og;
                k[3 * h + j] = gg;
                k[4 * h + j] = tcv;
            }
        }
        self.push(out, Op::Lstm(pre, c_prev, cache), &[pre, c_prev])
    }

    /// Row `i` of the result is `sum_k y[i,k] table[blocks[i]*K' + k]` over
    /// the first `K' = y.cols - 1` columns plus `y[i,K'] * end`.
    pub fn mix_rows(&mut self, y: Var, table: Var, end: Var, blocks: &[usize]) -> Var {
        let (ty, tt, te) = (self.value(y), self.value(table), self.value(end));
        let k = ty.cols - 1;
        let d = tt.cols;
        assert!(te.rows == 1 && te.cols == d, "mix_rows end row");
        assert_eq!(blocks.len(), ty.rows, "mix_rows blocks");
        assert!(k > 0 && tt.rows % k == 0, "mix_rows table blocks");
        let mut out = Tensor::zeros(ty.rows, d);
        for (i, &b) in blocks.iter().enumerate() {
            assert!((b + 1) * k <= tt.rows, "mix_rows block index");
            let yr = ty.row_slice(i);
            let o = &mut out.data[i * d..(i + 1) * d];
            for (kk, &w) in yr[..k].iter().enumerate() {
                if w != 0.0 {
                    for (ov, tv) in o.iter_mut().zip(tt.row_slice(b * k + kk)) {
                        *ov += w * tv;
                    }
                }
            }
            let w = yr[k];
            if w != 0.0 {
                for (ov, ev) in o.iter_mut().zip(&te.data) {
                    *ov += w * ev;
                }
            }
        }
        self.push(
            out,
            Op::MixRows {
                y,
                table,
                end,
                blocks: blocks.to_vec(),
            },
            &[y, table, end],
        )
    }

    /// Gradients of a scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NnError::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Grads { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let t = &self.nodes[v.0].value;
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols)))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let tb = val(b);
                    let mut ga = Tensor::zeros(g.rows, tb.rows);
                    gemm(g, false, tb, true, &mut ga, 0.0);
                    self.acc(grads, a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let ta = val(a);
                    let mut gb = Tensor::zeros(ta.cols, g.cols);
                    gemm(ta, true, g, false, &mut gb, 0.0);
                    self.acc(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, g.scale(-1.0));
            }
            &Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.acc(grads, a, g.zip_map(val(b), |x, y| x * y));
                }
                if self.nodes[b.0].needs_grad {
                    self.acc(grads, b, g.zip_map(val(a), |x, y| x * y));
                }
            }
            &Op::AddRow(a, r) => {
                self.acc(grads, a, g.clone());
                if let Some(gr) = self.slot(grads, r) {
                    for i in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row_slice(i)) {
                            *o += v;
                        }
                    }
                }
            }
            &Op::MulCol(a, c) => {
                let (ta, tc) = (val(a), val(c));
                if self.nodes[a.0].needs_grad {
                    let mut ga = g.clone();
                    for i in 0..ga.rows {
                        let s = tc.data[i];
                        for v in ga.row_slice_mut(i) {
                            *v *= s;
                        }
                    }
                    self.acc(grads, a, ga);
                }
                if let Some(gc) = self.slot(grads, c) {
                    for i in 0..g.rows {
                        gc.data[i] += g
                            .row_slice(i)
                            .iter()
                            .zip(ta.row_slice(i))
                            .map(|(x, y)| x * y)
                            .sum::<f64>();
                    }
                }
            }
            &Op::Affine(a, s) => self.acc(grads, a, g.scale(s)),
            &Op::Sigmoid(a) => self.acc(grads, a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
            &Op::Tanh(a) => self.acc(grads, a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
            &Op::Relu(a) => {
                self.acc(grads, a, g.zip_map(val(a), |g, x| if x > 0.0 { g } else { 0.0 }))
            }
            &Op::LeakyRelu(a, s) => {
                self.acc(grads, a, g.zip_map(val(a), |g, x| if x > 0.0 { g } else { s * g }))
            }
            &Op::Softplus(a) => self.acc(grads, a, g.zip_map(val(a), |g, x| g * sigmoid(x))),
            &Op::Exp(a) => self.acc(grads, a, g.zip_map(y, |g, y| g * y)),
            &Op::Log(a) => self.acc(grads, a, g.zip_map(val(a), |g, x| g / x)),
            &Op::Abs(a) => self.acc(
                grads,
                a,
                g.zip_map(val(a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            ),
            &Op::Square(a) => self.acc(grads, a, g.zip_map(val(a), |g, x| 2.0 * g * x)),
            &Op::Clamp(a, lo, hi) => self.acc(
                grads,
                a,
                g.zip_map(val(a), |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 }),
            ),
            &Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for i in 0..ga.rows {
                    let yr = y.row_slice(i);
                    let dot: f64 = g.row_slice(i).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (v, yv) in ga.row_slice_mut(i).iter_mut().zip(yr) {
                        *v = yv * (*v - dot);
                    }
                }
                self.acc(grads, a, ga);
            }
            &Op::SliceCols(a, start) => {
                if let Some(ga) = self.slot(grads, a) {
                    for i in 0..g.rows {
                        let dst = &mut ga.row_slice_mut(i)[start..start + g.cols];
                        for (d, v) in dst.iter_mut().zip(g.row_slice(i)) {
                            *d += v;
                        }
                    }
                }
            }
            &Op::SliceRows(a, start) => {
                if let Some(ga) = self.slot(grads, a) {
                    let off = start * g.cols;
                    for (d, v) in ga.data[off..off + g.len()].iter_mut().zip(&g.data) {
                        *d += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols;
                    if let Some(gp) = self.slot(grads, p) {
                        for i in 0..g.rows {
                            for (d, v) in gp.row_slice_mut(i).iter_mut().zip(&g.row_slice(i)[off..off + w]) {
                                *d += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        for (d, v) in gp.data.iter_mut().zip(&g.data[off..off + n]) {
                            *d += v;
                        }
                    }
                    off += n;
                }
            }
            Op::Gather(picks) => {
                for (k, &(v, r)) in picks.iter().enumerate() {
                    if let Some(gv) = self.slot(grads, v) {
                        for (d, s) in gv.row_slice_mut(r).iter_mut().zip(g.row_slice(k)) {
                            *d += s;
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                let t = val(a);
                self.acc(grads, a, Tensor::filled(t.rows, t.cols, g.item()));
            }
            &Op::Mean(a) => {
                let t = val(a);
                self.acc(grads, a, Tensor::filled(t.rows, t.cols, g.item() / t.len() as f64));
            }
            &Op::MeanRows(a) => {
                let t = val(a);
                let n = t.rows as f64;
                let mut ga = Tensor::zeros(t.rows, t.cols);
                for i in 0..t.rows {
                    for (d, v) in ga.row_slice_mut(i).iter_mut().zip(&g.data) {
                        *d = v / n;
                    }
                }
                self.acc(grads, a, ga);
            }
            &Op::TileRows(a, times) => {
                if let Some(ga) = self.slot(grads, a) {
                    let n = ga.len();
                    for t in 0..times {
                        for (d, v) in ga.data.iter_mut().zip(&g.data[t * n..(t + 1) * n]) {
                            *d += v;
                        }
                    }
                }
            }
            &Op::RepeatRows(a, times) => {
                if let Some(ga) = self.slot(grads, a) {
                    for i in 0..ga.rows {
                        for s in 0..times {
                            let src = g.row_slice(i * times + s);
                            for (d, v) in ga.row_slice_mut(i).iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::Lstm(pre, c_prev, cache) => {
                let (pre, c_prev) = (*pre, *c_prev);
                let (tp, tc) = (val(pre), val(c_prev));
                let h = tc.cols;
                let mut gp = Tensor::zeros(tp.rows, 4 * h);
                let mut gc = Tensor::zeros(tc.rows, h);
                for r in 0..tp.rows {
                    let cp = tc.row_slice(r);
                    let gr = g.row_slice(r);
                    let k = &cache[r * 5 * h..(r + 1) * 5 * h];
                    let row = &mut gp.data[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let (ig, fg, og, gg, tcv) = (k[j], k[h + j], k[2 * h + j], k[3 * h + j], k[4 * h + j]);
                        let dc = gr[h + j] + gr[j] * og * (1.0 - tcv * tcv);
                        row[j] = dc * gg * ig * (1.0 - ig);
                        row[h + j] = dc * cp[j] * fg * (1.0 - fg);
                        row[2 * h + j] = gr[j] * tcv * og * (1.0 - og);
                        row[3 * h + j] = dc * ig * (1.0 - gg * gg);
                        gc.data[r * h + j] = dc * fg;
                    }
                }
                self.acc(grads, pre, gp);
                self.acc(grads, c_prev, gc);
            }
            Op::MixRows {
                y: yv,
                table,
                end,
                blocks,
            } => {
                let (ty, tt, te) = (val(*yv), val(*table), val(*end));
                let k = ty.cols - 1;
                if let Some(gy) = self.slot(grads, *yv) {
                    for (i, &b) in blocks.iter().enumerate() {
                        let gi = g.row_slice(i);
                        let row = gy.row_slice_mut(i);
                        for (kk, dst) in row[..k].iter_mut().enumerate() {
                            *dst += gi.iter().zip(tt.row_slice(b * k + kk)).map(|(a, b)| a * b).sum::<f64>();
                        }
                        row[k] += gi.iter().zip(&te.data).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if let Some(gt) = self.slot(grads, *table) {
                    for (i, &b) in blocks.iter().enumerate() {
                        let gi = g.row_slice(i);
                        for (kk, &w) in ty.row_slice(i)[..k].iter().enumerate() {
                            if w != 0.0 {
                                for (d, v) in gt.row_slice_mut(b * k + kk).iter_mut().zip(gi) {
                                    *d += w * v;
                                }
                            }
                        }
                    }
                }
                if let Some(ge) = self.slot(grads, *end) {
                    for i in 0..blocks.len() {
                        let w = ty.get(i, k);
                        if w != 0.0 {
                            for (d, v) in ge.data.iter_mut().zip(g.row_slice(i)) {
                                *d += w * v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(2, 2));
        assert!(matches!(t.backward(a), Err(NnError::Argument(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.param(Tensor::row(&[1.0, 2.0]));
        let c = t.constant(Tensor::row(&[3.0, 4.0]));
        let m = t.mul(a, c);
        let s = t.sum(m);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data, vec![3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut t = Tape::new();
        let a = t.param(Tensor::scalar(3.0));
        let sq = t.mul(a, a);
        let s = t.add(sq, a);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().item(), 7.0);
    }
}
