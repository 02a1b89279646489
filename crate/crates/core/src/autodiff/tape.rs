//! Reverse-mode differentiation tape.
//!
//! Every primitive appends a node holding its forward value and the
//! information needed to route gradients back to its parents. Nodes are
//! recorded in topological order, so `backward` is a single reverse sweep.
//! Parameters live in a [`ParamStore`] borrowed by the tape; they are
//! referenced, never copied, and their gradients come back as
//! [`ParamGrads`].

use crate::error::{Error, Result};

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentMode {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Const,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Rotate(Var, Var),
    MatMul(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    GatherRows(Var, Vec<usize>),
    Segment {
        input: Var,
        segments: Vec<usize>,
        mode: SegmentMode,
        // Sum/Mean: per-segment counts; Max: winning row per output cell.
        aux: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    StraightThrough(Var, Var),
    Softmax(Var),
    PlackettLuce(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Tensor::zeros(0, 0),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push("add", v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push("sub", v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", v, Op::Mul(a, b), ng)
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(m);
        if self.shape(row) != (1, c) {
            return Err(Error::dim(
                "add_row",
                format!("matrix {r}x{c}, row {:?}", self.shape(row)),
            ));
        }
        let rv = self.value(row).data().to_vec();
        let mut v = self.value(m).clone();
        for i in 0..r {
            for (x, y) in v.row_slice_mut(i).iter_mut().zip(&rv) {
                *x += y;
            }
        }
        let ng = self.needs(m) || self.needs(row);
        self.push("add_row", v, Op::AddRow(m, row), ng)
    }

    /// Pairwise complex product: columns `(2k, 2k+1)` are one complex number.
    pub fn rotate(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("rotate", a, b)?;
        let (r, c) = self.shape(a);
        if c % 2 != 0 {
            return Err(Error::dim("rotate", format!("odd width {c}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut v = Tensor::zeros(r, c);
        for i in 0..r {
            let (x, y, o) = (av.row_slice(i), bv.row_slice(i), v.row_slice_mut(i));
            for k in (0..c).step_by(2) {
                o[k] = x[k] * y[k] - x[k + 1] * y[k + 1];
                o[k + 1] = x[k] * y[k + 1] + x[k + 1] * y[k];
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("rotate", v, Op::Rotate(a, b), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::dim("matmul", format!("{sa:?} · {sb:?}")));
        }
        let v = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", v, Op::MatMul(a, b), ng)
    }

    /// `x · w + b` with `b` a `1×m` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Multiplies row `i` of `m` by `col[i]`.
    pub fn scale_rows(&mut self, m: Var, col: Var) -> Result<Var> {
        let (r, c) = self.shape(m);
        if self.shape(col) != (r, 1) {
            return Err(Error::dim(
                "scale_rows",
                format!("matrix {r}x{c}, column {:?}", self.shape(col)),
            ));
        }
        let s = self.value(col).data().to_vec();
        let mut v = self.value(m).clone();
        for (i, si) in s.iter().enumerate() {
            for x in v.row_slice_mut(i) {
                *x *= si;
            }
        }
        let ng = self.needs(m) || self.needs(col);
        self.push("scale_rows", v, Op::ScaleRows(m, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push("scale", v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push("add_scalar", v, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push("relu", v, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push("tanh", v, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push("sigmoid", v, Op::Sigmoid(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push("exp", v, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        let ng = self.needs(a);
        self.push("log", v, Op::Log(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push("clamp", v, Op::Clamp(a, lo, hi), ng)
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(table);
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::Index {
                    kind: "gather row",
                    id,
                    len: r,
                });
            }
            data.extend_from_slice(src.row_slice(id));
        }
        let v = Tensor::from_vec(ids.len(), c, data)?;
        let ng = self.needs(table);
        self.push("gather_rows", v, Op::GatherRows(table, ids.to_vec()), ng)
    }

    /// Reduces the rows of `input` into `num_segments` rows. `segments[i]` is
    /// the output row of input row `i` and must be non-decreasing. Empty
    /// segments produce zeros; max ties resolve to the first row.
    pub fn segment_reduce(
        &mut self,
        input: Var,
        segments: &[usize],
        num_segments: usize,
        mode: SegmentMode,
    ) -> Result<Var> {
        let (r, c) = self.shape(input);
        if segments.len() != r {
            return Err(Error::dim(
                "segment_reduce",
                format!("{} segment ids for {r} rows", segments.len()),
            ));
        }
        if segments.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Contract("segment ids must be sorted".into()));
        }
        if let Some(&last) = segments.last() {
            if last >= num_segments {
                return Err(Error::Index {
                    kind: "segment",
                    id: last,
                    len: num_segments,
                });
            }
        }
        let x = self.value(input);
        let mut out = Tensor::zeros(num_segments, c);
        let aux = match mode {
            SegmentMode::Sum | SegmentMode::Mean => {
                let mut counts = vec![0usize; num_segments];
                for (i, &s) in segments.iter().enumerate() {
                    counts[s] += 1;
                    for (o, v) in out.row_slice_mut(s).iter_mut().zip(x.row_slice(i)) {
                        *o += v;
                    }
                }
                if mode == SegmentMode::Mean {
                    for (s, &n) in counts.iter().enumerate() {
                        if n > 0 {
                            let inv = 1.0 / n as f64;
                            out.row_slice_mut(s).iter_mut().for_each(|o| *o *= inv);
                        }
                    }
                }
                counts
            }
            SegmentMode::Max => {
                let mut arg = vec![usize::MAX; num_segments * c];
                for (i, &s) in segments.iter().enumerate() {
                    for (k, &v) in x.row_slice(i).iter().enumerate() {
                        let slot = s * c + k;
                        if arg[slot] == usize::MAX || v > out.get(s, k) {
                            arg[slot] = i;
                            out.set(s, k, v);
                        }
                    }
                }
                arg
            }
        };
        let ng = self.needs(input);
        self.push(
            "segment_reduce",
            out,
            Op::Segment {
                input,
                segments: segments.to_vec(),
                mode,
                aux,
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = match parts.first() {
            Some(&p) => self.shape(p).0,
            None => return Err(Error::dim("concat_cols", "no inputs")),
        };
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != r) {
            return Err(Error::dim(
                "concat_cols",
                format!("{r} rows vs {:?}", self.shape(bad)),
            ));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Tensor::zeros(r, total);
        for i in 0..r {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row_slice(i);
                v.row_slice_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = match parts.first() {
            Some(&p) => self.shape(p).1,
            None => return Err(Error::dim("concat_rows", "no inputs")),
        };
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != c) {
            return Err(Error::dim(
                "concat_rows",
                format!("{c} cols vs {:?}", self.shape(bad)),
            ));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let r = data.len() / c.max(1);
        let v = Tensor::from_vec(r, c, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push("sum", v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::dim("mean", "empty input"));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.needs(a);
        self.push("mean", v, Op::Mean(a), ng)
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.constant(v)
    }

    /// Returns `rep` unchanged in value while routing `Σ_j g_ij·rep_ij` into
    /// `p[i]` on the backward pass, i.e. the multiplier `1 − stop(p) + p`.
    pub fn straight_through(&mut self, rep: Var, p: Var) -> Result<Var> {
        let (r, _) = self.shape(rep);
        if self.shape(p) != (r, 1) {
            return Err(Error::dim(
                "straight_through",
                format!("{r} rows vs probabilities {:?}", self.shape(p)),
            ));
        }
        if let Some(&bad) = self
            .value(p)
            .data()
            .iter()
            .find(|&&x| !(x > 0.0 && x <= 1.0))
        {
            return Err(Error::Contract(format!(
                "selection probability {bad} outside (0, 1]"
            )));
        }
        let v = self.value(rep).clone();
        let ng = self.needs(rep) || self.needs(p);
        self.push("straight_through", v, Op::StraightThrough(rep, p), ng)
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::dim("softmax", "empty input"));
        }
        let v = Tensor::from_vec(t.rows(), t.cols(), softmax_slice(t.data()))?;
        let ng = self.needs(a);
        self.push("softmax", v, Op::Softmax(a), ng)
    }

    /// Log-probability of drawing `order` (an ordered sample without
    /// replacement) from the Plackett–Luce model with log-weights `scores`.
    pub fn plackett_luce_log_prob(&mut self, scores: Var, order: &[usize]) -> Result<Var> {
        let s = self.value(scores).data().to_vec();
        let mut remaining = vec![true; s.len()];
        let mut total = 0.0;
        for &o in order {
            if o >= s.len() || !remaining[o] {
                return Err(Error::Contract(format!(
                    "sample order entry {o} invalid or repeated"
                )));
            }
            let lse = log_sum_exp(
                s.iter()
                    .zip(&remaining)
                    .filter(|(_, &r)| r)
                    .map(|(x, _)| *x),
            );
            total += s[o] - lse;
            remaining[o] = false;
        }
        let ng = self.needs(scores);
        self.push(
            "plackett_luce_log_prob",
            Tensor::scalar(total),
            Op::PlackettLuce(scores, order.to_vec()),
            ng,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.route(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn route(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Const | Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(m, row) => {
                acc(*m, g.clone());
                let (r, c) = g.shape();
                let mut gr = Tensor::zeros(1, c);
                for i in 0..r {
                    for (o, v) in gr.data_mut().iter_mut().zip(g.row_slice(i)) {
                        *o += v;
                    }
                }
                acc(*row, gr);
            }
            Op::Rotate(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, c) = g.shape();
                let mut ga = Tensor::zeros(r, c);
                let mut gb = Tensor::zeros(r, c);
                for i in 0..r {
                    let (x, y, gi) = (av.row_slice(i), bv.row_slice(i), g.row_slice(i));
                    for k in (0..c).step_by(2) {
                        let (g0, g1) = (gi[k], gi[k + 1]);
                        ga.set(i, k, g0 * y[k] + g1 * y[k + 1]);
                        ga.set(i, k + 1, -g0 * y[k + 1] + g1 * y[k]);
                        gb.set(i, k, g0 * x[k] + g1 * x[k + 1]);
                        gb.set(i, k + 1, -g0 * x[k + 1] + g1 * x[k]);
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::ScaleRows(m, col) => {
                let (mv, cv) = (self.value(*m), self.value(*col));
                let (r, _) = g.shape();
                let mut gm = g.clone();
                let mut gc = Tensor::zeros(r, 1);
                for i in 0..r {
                    let s = cv.data()[i];
                    gm.row_slice_mut(i).iter_mut().for_each(|x| *x *= s);
                    let dot: f64 = g
                        .row_slice(i)
                        .iter()
                        .zip(mv.row_slice(i))
                        .map(|(a, b)| a * b)
                        .sum();
                    gc.data_mut()[i] = dot;
                }
                acc(*m, gm);
                acc(*col, gc);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::Tanh(a) => acc(*a, g.zip_map(out, |gi, y| gi * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |gi, y| gi * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, g.zip_map(out, |gi, y| gi * y)),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |gi, x| gi / x)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *a,
                    g.zip_map(
                        self.value(*a),
                        |gi, x| {
                            if x >= lo && x <= hi {
                                gi
                            } else {
                                0.0
                            }
                        },
                    ),
                );
            }
            Op::GatherRows(table, ids) => {
                let (r, c) = self.shape(*table);
                let mut gt = Tensor::zeros(r, c);
                for (i, &id) in ids.iter().enumerate() {
                    for (o, v) in gt.row_slice_mut(id).iter_mut().zip(g.row_slice(i)) {
                        *o += v;
                    }
                }
                acc(*table, gt);
            }
            Op::Segment {
                input,
                segments,
                mode,
                aux,
            } => {
                let (r, c) = self.shape(*input);
                let mut gi = Tensor::zeros(r, c);
                match mode {
                    SegmentMode::Sum | SegmentMode::Mean => {
                        for (i, &s) in segments.iter().enumerate() {
                            let scale = if *mode == SegmentMode::Mean {
                                1.0 / aux[s] as f64
                            } else {
                                1.0
                            };
                            for (o, v) in gi.row_slice_mut(i).iter_mut().zip(g.row_slice(s)) {
                                *o += v * scale;
                            }
                        }
                    }
                    SegmentMode::Max => {
                        for (slot, &row) in aux.iter().enumerate() {
                            if row != usize::MAX {
                                let (s, k) = (slot / c, slot % c);
                                let cur = gi.get(row, k);
                                gi.set(row, k, cur + g.get(s, k));
                            }
                        }
                    }
                }
                acc(*input, gi);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut gp = Tensor::zeros(r, c);
                    for i in 0..r {
                        gp.row_slice_mut(i)
                            .copy_from_slice(&g.row_slice(i)[off..off + c]);
                    }
                    off += c;
                    acc(p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let slice = g.data()[off * c..(off + r) * c].to_vec();
                    off += r;
                    acc(p, Tensor::from_vec(r, c, slice).expect("shape recorded"));
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Tensor::filled(r, c, g.data()[0] / (r * c) as f64));
            }
            Op::StraightThrough(rep, p) => {
                acc(*rep, g.clone());
                let rv = self.value(*rep);
                let r = rv.rows();
                let gp: Vec<f64> = (0..r)
                    .map(|i| {
                        g.row_slice(i)
                            .iter()
                            .zip(rv.row_slice(i))
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                acc(*p, Tensor::column(&gp));
            }
            Op::Softmax(a) => {
                let dot: f64 = g.data().iter().zip(out.data()).map(|(x, y)| x * y).sum();
                acc(*a, g.zip_map(out, |gi, y| y * (gi - dot)));
            }
            Op::PlackettLuce(scores, order) => {
                let s = self.value(*scores);
                let n = s.len();
                let mut gs = vec![0.0; n];
                let mut remaining = vec![true; n];
                for &o in order {
                    let lse = log_sum_exp(
                        s.data()
                            .iter()
                            .zip(&remaining)
                            .filter(|(_, &r)| r)
                            .map(|(x, _)| *x),
                    );
                    for j in 0..n {
                        if remaining[j] {
                            gs[j] -= (s.data()[j] - lse).exp();
                        }
                    }
                    gs[o] += 1.0;
                    remaining[o] = false;
                }
                let scale = g.data()[0];
                gs.iter_mut().for_each(|x| *x *= scale);
                acc(
                    *scores,
                    Tensor::from_vec(s.rows(), s.cols(), gs).expect("shape recorded"),
                );
            }
        }
    }
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Sums the gradients of every parameter node into a per-parameter buffer.
    pub fn param_grads(&self, tape: &Tape<'_>) -> ParamGrads {
        let mut out = ParamGrads::new(tape.params.len());
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                out.accumulate(*id, g);
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}
