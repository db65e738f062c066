use rand::Rng;

use crate::layers::{
    bilstm_encode, fuse_projected, gumbel_matrix, gumbel_softmax_rows, lstm_cell, FusionProjection, LstmVars,
    SortedSteps,
};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Logit offset that removes the end token from the first step.
const END_MASK: f64 = -1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub item_count: usize,
    pub categories: usize,
    pub floors: usize,
    pub neighbor_width: usize,
    pub context_width: usize,
    pub embed: usize,
    pub type_embed: usize,
    pub floor_embed: usize,
    pub latent: usize,
    pub hidden: usize,
    pub disc_hidden: usize,
}

impl ModelDims {
    /// Widths from the published configuration table.
    pub fn published(
        item_count: usize,
        categories: usize,
        floors: usize,
        neighbor_width: usize,
        context_width: usize,
    ) -> Self {
        ModelDims {
            item_count,
            categories,
            floors,
            neighbor_width,
            context_width,
            embed: 32,
            type_embed: 16,
            floor_embed: 8,
            latent: 16,
            hidden: 128,
            disc_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("item_count", self.item_count),
            ("categories", self.categories),
            ("floors", self.floors),
            ("neighbor_width", self.neighbor_width),
            ("embed", self.embed),
            ("type_embed", self.type_embed),
            ("floor_embed", self.floor_embed),
            ("hidden", self.hidden),
            ("disc_hidden", self.disc_hidden),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(NnError::Argument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Store head width, including the end token.
    pub fn vocab(&self) -> usize {
        self.item_count + 1
    }

    pub fn store_input_width(&self) -> usize {
        self.item_count + self.type_embed + self.floor_embed
    }

    pub fn generator_input_width(&self) -> usize {
        self.embed + self.latent + self.context_width + 2
    }
}

/// Static per-store inputs of the fusion encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreFeatures {
    pub categories: Vec<usize>,
    pub floors: Vec<usize>,
    /// `item_count x neighbor_width`.
    pub neighbor: Tensor,
}

impl StoreFeatures {
    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        let n = dims.item_count;
        if self.categories.len() != n || self.floors.len() != n {
            return Err(NnError::Argument(format!("store features cover {} of {n} items", self.categories.len())));
        }
        if self.categories.iter().any(|&c| c >= dims.categories) || self.floors.iter().any(|&f| f >= dims.floors) {
            return Err(NnError::Argument("store category or floor out of range".into()));
        }
        if self.neighbor.shape() != [n, dims.neighbor_width] {
            return Err(NnError::Argument(format!(
                "neighbor features {:?}, expected [{n}, {}]",
                self.neighbor.shape(),
                dims.neighbor_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FusionIdx {
    type_emb: usize,
    floor_emb: usize,
    w_store: usize,
    w_neighbor: usize,
    w_mall: usize,
    w_attn: usize,
    end: usize,
}

impl FusionIdx {
    fn build<R: Rng + ?Sized>(ps: &mut ParamSet, prefix: &str, d: &ModelDims, rng: &mut R) -> Self {
        let mut add = |name: &str, r: usize, c: usize| ps.push(&format!("{prefix}.{name}"), Tensor::init_uniform(r, c, rng));
        FusionIdx {
            type_emb: add("type_emb", d.categories, d.type_embed),
            floor_emb: add("floor_emb", d.floors, d.floor_embed),
            w_store: add("w_store", d.store_input_width(), d.embed),
            w_neighbor: add("w_neighbor", d.neighbor_width, d.embed),
            w_mall: add("w_mall", d.context_width.max(1), d.embed),
            w_attn: add("w_attn", d.embed, 1),
            end: add("end_emb", 1, d.embed),
        }
    }

    fn bind(&self, v: &[Var]) -> FusionVars {
        FusionVars {
            type_emb: v[self.type_emb],
            floor_emb: v[self.floor_emb],
            proj: FusionProjection {
                w_store: v[self.w_store],
                w_neighbor: v[self.w_neighbor],
                w_mall: v[self.w_mall],
                w_attn: v[self.w_attn],
            },
            end: v[self.end],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub type_emb: Var,
    pub floor_emb: Var,
    pub proj: FusionProjection,
    pub end: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LstmIdx {
    wx: usize,
    wh: usize,
    b: usize,
}

impl LstmIdx {
    fn build<R: Rng + ?Sized>(ps: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        LstmIdx {
            wx: ps.push(&format!("{prefix}.wx"), Tensor::init_uniform(input, 4 * hidden, rng)),
            wh: ps.push(&format!("{prefix}.wh"), Tensor::init_uniform(hidden, 4 * hidden, rng)),
            b: ps.push(&format!("{prefix}.b"), Tensor::zeros(1, 4 * hidden)),
        }
    }

    fn bind(&self, v: &[Var]) -> LstmVars {
        LstmVars {
            wx: v[self.wx],
            wh: v[self.wh],
            b: v[self.b],
        }
    }
}

/// Mall-context rows for the fusion encoder; a zero-width context becomes a
/// single zero column.
fn context_rows(ctx: &Tensor) -> Tensor {
    if ctx.cols == 0 {
        Tensor::zeros(ctx.rows, 1)
    } else {
        ctx.clone()
    }
}

/// Fused embeddings of every store under every context row, laid out as
/// `n` blocks of `item_count` rows.
pub fn store_tables(tape: &mut Tape, fv: &FusionVars, feats: &StoreFeatures, ctx: &Tensor) -> Result<Var> {
    let n_items = feats.categories.len();
    let n = ctx.rows;
    if n == 0 {
        return Err(NnError::Argument("no contexts".into()));
    }
    let mut eye = Tensor::zeros(n_items, n_items);
    for i in 0..n_items {
        eye.set(i, i, 1.0);
    }
    let eye = tape.constant(eye);
    let types = tape.select_rows(fv.type_emb, &feats.categories);
    let floors = tape.select_rows(fv.floor_emb, &feats.floors);
    let x_store = tape.concat_cols(&[eye, types, floors]);
    let s = tape.matmul(x_store, fv.proj.w_store);
    let s = tape.relu(s);
    let nb = tape.constant(feats.neighbor.clone());
    let nb = tape.matmul(nb, fv.proj.w_neighbor);
    let nb = tape.relu(nb);
    let m = tape.constant(context_rows(ctx));
    let m = tape.matmul(m, fv.proj.w_mall);
    let m = tape.relu(m);
    let s = tape.tile_rows(s, n);
    let nb = tape.tile_rows(nb, n);
    let m = tape.repeat_rows(m, n_items);
    Ok(fuse_projected(tape, s, nb, m, fv.proj.w_attn)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub dims: ModelDims,
    pub params: ParamSet,
    fusion: FusionIdx,
    lstm: LstmIdx,
    out_w: usize,
    out_b: usize,
    intra_w: usize,
    intra_b: usize,
    inter_w: usize,
    inter_b: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratorVars {
    pub all: Vec<Var>,
    pub fusion: FusionVars,
    pub lstm: LstmVars,
    pub out_w: Var,
    pub out_b: Var,
    pub intra_w: Var,
    pub intra_b: Var,
    pub inter_w: Var,
    pub inter_b: Var,
}

impl GeneratorParams {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut ps = ParamSet::new();
        let fusion = FusionIdx::build(&mut ps, "gen.fusion", &dims, rng);
        let lstm = LstmIdx::build(&mut ps, "gen.lstm", dims.generator_input_width(), dims.hidden, rng);
        let h = dims.hidden;
        let out_w = ps.push("gen.store_out.w", Tensor::init_uniform(h, dims.vocab(), rng));
        let out_b = ps.push("gen.store_out.b", Tensor::zeros(1, dims.vocab()));
        let intra_w = ps.push("gen.intra.w", Tensor::init_uniform(h, 1, rng));
        let intra_b = ps.push("gen.intra.b", Tensor::zeros(1, 1));
        let inter_w = ps.push("gen.inter.w", Tensor::init_uniform(h, 1, rng));
        let inter_b = ps.push("gen.inter.b", Tensor::zeros(1, 1));
        Ok(GeneratorParams {
            dims,
            params: ps,
            fusion,
            lstm,
            out_w,
            out_b,
            intra_w,
            intra_b,
            inter_w,
            inter_b,
        })
    }

    /// Rebuilds from stored tensors, checking names and shapes.
    pub fn from_params(dims: ModelDims, params: ParamSet) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut g = GeneratorParams::new(dims, &mut rng)?;
        g.params.check_layout(&params)?;
        g.params = params;
        Ok(g)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GeneratorVars {
        self.vars_from(self.params.on_tape(tape, trainable))
    }

    /// Binds to existing tape variables, one per parameter in order.
    pub fn vars_from(&self, all: Vec<Var>) -> GeneratorVars {
        assert_eq!(all.len(), self.params.len(), "one variable per parameter");
        GeneratorVars {
            fusion: self.fusion.bind(&all),
            lstm: self.lstm.bind(&all),
            out_w: all[self.out_w],
            out_b: all[self.out_b],
            intra_w: all[self.intra_w],
            intra_b: all[self.intra_b],
            inter_w: all[self.inter_w],
            inter_b: all[self.inter_b],
            all,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub tau: f64,
    pub t_max: usize,
    /// Feed the embedding of the sampled store instead of the soft mixture.
    pub hard_inputs: bool,
}

#[derive(Debug, Clone)]
pub struct RolloutStep {
    /// Relaxed store distributions, one row per member.
    pub soft: Var,
    /// Time-head outputs `[intra, inter]` in model units.
    pub times: Var,
    /// Trajectory index of each row.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub items: Vec<Vec<usize>>,
    /// Per-step `[intra, inter]` in model units.
    pub times: Vec<Vec<[f64; 2]>>,
    pub steps: Vec<RolloutStep>,
    /// Row of each visited step inside `steps[t]`.
    pub rows: Vec<Vec<usize>>,
    /// Soft vector that selected the end token, or `None` when capped.
    pub terminal: Vec<Option<(Var, usize)>>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn length(&self, i: usize) -> usize {
        self.items[i].len()
    }

    /// Discriminator view of trajectory `i`, terminal step included.
    pub fn sequence(&self, i: usize) -> DSequence {
        let mut tokens = Vec::with_capacity(self.length(i) + 1);
        let mut times = Vec::with_capacity(self.length(i) + 1);
        for (t, &r) in self.rows[i].iter().enumerate() {
            tokens.push(Token::Soft(self.steps[t].soft, r));
            times.push(TimeSource::Row(self.steps[t].times, r));
        }
        tokens.push(match self.terminal[i] {
            Some((v, r)) => Token::Soft(v, r),
            None => Token::End,
        });
        times.push(TimeSource::Value([0.0, 0.0]));
        DSequence { tokens, times }
    }
}

fn context_latent(ctx: &Tensor, z: &Tensor, rows: &[usize]) -> Tensor {
    let w = ctx.cols + z.cols;
    let mut out = Tensor::zeros(rows.len(), w);
    for (r, &i) in rows.iter().enumerate() {
        let dst = out.row_slice_mut(r);
        dst[..z.cols].copy_from_slice(z.row_slice(i));
        dst[z.cols..].copy_from_slice(ctx.row_slice(i));
    }
    out
}

/// Free-running generation until the end token or `t_max` steps.
pub fn generate<R: Rng + ?Sized>(
    tape: &mut Tape,
    g: &GeneratorVars,
    dims: &ModelDims,
    feats: &StoreFeatures,
    ctx: &Tensor,
    z: &Tensor,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<Rollout> {
    let n = ctx.rows;
    if n == 0 || z.rows != n {
        return Err(NnError::Argument("one latent row per context row".into()));
    }
    if ctx.cols != dims.context_width || z.cols != dims.latent {
        return Err(NnError::Argument(format!(
            "context/latent widths {}/{}, expected {}/{}",
            ctx.cols, z.cols, dims.context_width, dims.latent
        )));
    }
    if opts.t_max == 0 {
        return Err(NnError::Argument("t_max must be positive".into()));
    }
    feats.validate(dims)?;
    let vocab = dims.vocab();
    let end = dims.item_count;
    let table = store_tables(tape, &g.fusion, feats, ctx)?;
    let mut mask = Tensor::zeros(n, vocab);
    for r in 0..n {
        mask.set(r, end, END_MASK);
    }
    let mask = tape.constant(mask);

    let mut out = Rollout {
        items: vec![Vec::new(); n],
        times: vec![Vec::new(); n],
        steps: Vec::new(),
        rows: vec![Vec::new(); n],
        terminal: vec![None; n],
    };
    let mut active: Vec<usize> = (0..n).collect();
    let mut h = tape.constant(Tensor::zeros(n, dims.hidden));
    let mut c = tape.constant(Tensor::zeros(n, dims.hidden));
    let mut prev_emb = tape.constant(Tensor::zeros(n, dims.embed));
    let mut prev_times = tape.constant(Tensor::zeros(n, 2));
    for t in 0..opts.t_max {
        let na = active.len();
        let zc = tape.constant(context_latent(ctx, z, &active));
        let u = tape.concat_cols(&[prev_emb, zc, prev_times]);
        (h, c) = lstm_cell(tape, u, h, c, &g.lstm)?;
        let logits = tape.matmul(h, g.out_w);
        let mut logits = tape.add_row(logits, g.out_b);
        if t == 0 {
            logits = tape.add(logits, mask);
        }
        let noise = gumbel_matrix(na, vocab, rng);
        let (soft, hard) = gumbel_softmax_rows(tape, logits, &noise, opts.tau)?;
        let intra = tape.matmul(h, g.intra_w);
        let intra = tape.add_row(intra, g.intra_b);
        let intra = tape.softplus(intra);
        let inter = tape.matmul(h, g.inter_w);
        let inter = tape.add_row(inter, g.inter_b);
        let inter = tape.softplus(inter);
        let times = tape.concat_cols(&[intra, inter]);
        out.steps.push(RolloutStep {
            soft,
            times,
            members: active.clone(),
        });
        let tv = tape.value(times).clone();
        let mut keep = Vec::with_capacity(na);
        for (r, &i) in active.iter().enumerate() {
            if hard[r] == end {
                out.terminal[i] = Some((soft, r));
            } else {
                out.items[i].push(hard[r]);
                out.times[i].push([tv.get(r, 0), tv.get(r, 1)]);
                out.rows[i].push(r);
                keep.push(r);
            }
        }
        if keep.is_empty() || t + 1 == opts.t_max {
            break;
        }
        let survivors: Vec<usize> = keep.iter().map(|&r| active[r]).collect();
        let (mut y, mut tm) = (soft, times);
        if keep.len() < na {
            h = tape.select_rows(h, &keep);
            c = tape.select_rows(c, &keep);
            y = tape.select_rows(y, &keep);
            tm = tape.select_rows(tm, &keep);
        }
        if opts.hard_inputs {
            let mut onehot = Tensor::zeros(keep.len(), vocab);
            for (r, &k) in keep.iter().enumerate() {
                onehot.set(r, hard[k], 1.0);
            }
            y = tape.constant(onehot);
        }
        prev_emb = tape.mix_rows(y, table, g.fusion.end, &survivors);
        prev_times = tm;
        active = survivors;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Item(usize),
    End,
    /// Row of a relaxed distribution over stores and the end token.
    Soft(Var, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSource {
    Value([f64; 2]),
    Row(Var, usize),
}

/// One sequence as the discriminator reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct DSequence {
    pub tokens: Vec<Token>,
    pub times: Vec<TimeSource>,
}

impl DSequence {
    /// Observed steps in model units followed by the terminal end step.
    pub fn observed(items: &[usize], times: &[[f64; 2]]) -> Self {
        let mut tokens: Vec<Token> = items.iter().map(|&i| Token::Item(i)).collect();
        let mut ts: Vec<TimeSource> = times.iter().map(|&t| TimeSource::Value(t)).collect();
        tokens.push(Token::End);
        ts.push(TimeSource::Value([0.0, 0.0]));
        DSequence { tokens, times: ts }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub dims: ModelDims,
    pub params: ParamSet,
    fusion: FusionIdx,
    fwd: LstmIdx,
    bwd: LstmIdx,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorVars {
    pub all: Vec<Var>,
    pub fusion: FusionVars,
    pub fwd: LstmVars,
    pub bwd: LstmVars,
    pub out_w: Var,
    pub out_b: Var,
}

#[derive(Debug, Clone)]
pub struct DOutput {
    /// `[h_last_fwd; h_first_bwd; context]`, sorted order.
    pub feats: Var,
    /// Pre-squashing scores, sorted order.
    pub logits: Var,
    /// `order[k]` is the batch index of sorted row `k`.
    pub order: Vec<usize>,
}

impl DiscriminatorParams {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut ps = ParamSet::new();
        let fusion = FusionIdx::build(&mut ps, "disc.fusion", &dims, rng);
        let hd = dims.disc_hidden;
        let fwd = LstmIdx::build(&mut ps, "disc.fwd", dims.embed + 2, hd, rng);
        let bwd = LstmIdx::build(&mut ps, "disc.bwd", dims.embed + 2, hd, rng);
        let out_w = ps.push("disc.out.w", Tensor::init_uniform(2 * hd + dims.context_width, 1, rng));
        let out_b = ps.push("disc.out.b", Tensor::zeros(1, 1));
        Ok(DiscriminatorParams {
            dims,
            params: ps,
            fusion,
            fwd,
            bwd,
            out_w,
            out_b,
        })
    }

    pub fn from_params(dims: ModelDims, params: ParamSet) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut d = DiscriminatorParams::new(dims, &mut rng)?;
        d.params.check_layout(&params)?;
        d.params = params;
        Ok(d)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> DiscriminatorVars {
        self.vars_from(self.params.on_tape(tape, trainable))
    }

    pub fn vars_from(&self, all: Vec<Var>) -> DiscriminatorVars {
        assert_eq!(all.len(), self.params.len(), "one variable per parameter");
        DiscriminatorVars {
            fusion: self.fusion.bind(&all),
            fwd: self.fwd.bind(&all),
            bwd: self.bwd.bind(&all),
            out_w: all[self.out_w],
            out_b: all[self.out_b],
            all,
        }
    }

    /// Indices of the weight matrices of every linear map, the ones spectral
    /// normalization acts on.
    pub fn linear_weights(&self) -> Vec<usize> {
        let f = &self.fusion;
        vec![
            f.w_store,
            f.w_neighbor,
            f.w_mall,
            f.w_attn,
            self.fwd.wx,
            self.fwd.wh,
            self.bwd.wx,
            self.bwd.wh,
            self.out_w,
        ]
    }
}

enum Pick {
    Row(Var, usize),
    Value(Vec<f64>),
}

fn assemble(tape: &mut Tape, picks: Vec<Pick>, width: usize) -> Var {
    let values: Vec<&Vec<f64>> = picks
        .iter()
        .filter_map(|p| match p {
            Pick::Value(v) => Some(v),
            Pick::Row(..) => None,
        })
        .collect();
    let mut consts = Tensor::zeros(values.len(), width);
    for (r, v) in values.iter().enumerate() {
        consts.row_slice_mut(r).copy_from_slice(v);
    }
    if values.len() == picks.len() {
        return tape.constant(consts);
    }
    let cv = (!values.is_empty()).then(|| tape.constant(consts));
    let mut k = 0;
    let rows: Vec<(Var, usize)> = picks
        .iter()
        .map(|p| match *p {
            Pick::Row(v, r) => (v, r),
            Pick::Value(_) => {
                k += 1;
                (cv.expect("constant rows"), k - 1)
            }
        })
        .collect();
    tape.gather_rows(&rows)
}

/// Scores a batch of sequences; `contexts` has one row per sequence.
pub fn discriminate(
    tape: &mut Tape,
    d: &DiscriminatorVars,
    dims: &ModelDims,
    feats: &StoreFeatures,
    seqs: &[DSequence],
    contexts: &Tensor,
) -> Result<DOutput> {
    if seqs.is_empty() {
        return Err(NnError::Argument("empty batch".into()));
    }
    if contexts.rows != seqs.len() || contexts.cols != dims.context_width {
        return Err(NnError::Argument("one context row per sequence".into()));
    }
    for s in seqs {
        if s.is_empty() {
            return Err(NnError::Argument("empty sequence".into()));
        }
        if s.times.len() != s.tokens.len() {
            return Err(NnError::Argument("tokens and times differ in length".into()));
        }
        if s.tokens.iter().any(|t| matches!(t, Token::Item(k) if *k >= dims.item_count)) {
            return Err(NnError::Argument("item index out of range".into()));
        }
    }
    feats.validate(dims)?;
    let vocab = dims.vocab();
    let table = store_tables(tape, &d.fusion, feats, contexts)?;
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by(|&a, &b| seqs[b].len().cmp(&seqs[a].len()));
    let lengths: Vec<usize> = order.iter().map(|&i| seqs[i].len()).collect();
    let mut steps = Vec::with_capacity(lengths[0]);
    for t in 0..lengths[0] {
        let members: Vec<usize> = order.iter().copied().filter(|&i| seqs[i].len() > t).collect();
        let ys = members
            .iter()
            .map(|&i| match seqs[i].tokens[t] {
                Token::Soft(v, r) => Pick::Row(v, r),
                tok => {
                    let mut row = vec![0.0; vocab];
                    row[match tok {
                        Token::Item(k) => k,
                        _ => dims.item_count,
                    }] = 1.0;
                    Pick::Value(row)
                }
            })
            .collect();
        let y = assemble(tape, ys, vocab);
        let ts = members
            .iter()
            .map(|&i| match seqs[i].times[t] {
                TimeSource::Row(v, r) => Pick::Row(v, r),
                TimeSource::Value(x) => Pick::Value(x.to_vec()),
            })
            .collect();
        let tm = assemble(tape, ts, 2);
        let emb = tape.mix_rows(y, table, d.fusion.end, &members);
        steps.push(tape.concat_cols(&[emb, tm]));
    }
    let mut ctx_sorted = Tensor::zeros(seqs.len(), dims.context_width);
    for (k, &i) in order.iter().enumerate() {
        ctx_sorted.row_slice_mut(k).copy_from_slice(contexts.row_slice(i));
    }
    let ctx = tape.constant(ctx_sorted);
    let (feats_v, logits) = bilstm_encode(tape, &SortedSteps { lengths, steps }, ctx, &d.fwd, &d.bwd, d.out_w, d.out_b)?;
    Ok(DOutput {
        feats: feats_v,
        logits,
        order,
    })
}
