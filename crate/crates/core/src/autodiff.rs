//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass. Calling
//! [`Tape::backward`] on a `1 × 1` output walks the record in reverse and
//! returns gradients for every node that depends on a parameter leaf.
//! Constant leaves never receive a gradient; this is how the frozen codebook
//! and stop-gradient inputs are kept out of the update.

use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Incoming-edge lists grouped by destination, self-loops included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    num_nodes: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl EdgeIndex {
    /// Builds the index from undirected edges, adding both directions and a
    /// self-loop for every node. Duplicate edges are collapsed.
    pub fn from_undirected(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut incoming: Vec<Vec<usize>> = (0..num_nodes).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            if a == b {
                continue;
            }
            incoming[b].push(a);
            incoming[a].push(b);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for mut list in incoming {
            list.sort_unstable();
            list.dedup();
            sources.extend(list);
            offsets.push(sources.len());
        }
        EdgeIndex {
            num_nodes,
            offsets,
            sources,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    /// Sources of the edges pointing at `dst`, including `dst` itself.
    pub fn incoming(&self, dst: usize) -> &[usize] {
        &self.sources[self.offsets[dst]..self.offsets[dst + 1]]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    PRelu(Var, Var),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    RowNormalize(Var),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    RowDot(Var, Var),
    MaskedLogSumExp(Var, Rc<Mat>),
    Sum(Var),
    Mean(Var),
    SelectRows(Var, Rc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    ReplaceRows {
        base: Var,
        token: Var,
        rows: Rc<Vec<usize>>,
    },
    GraphAttention {
        wh: Var,
        src_score: Var,
        dst_score: Var,
        graph: Rc<EdgeIndex>,
        slope: f64,
        alpha: Vec<f64>,
        raw: Vec<f64>,
    },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Mat> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Mat> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `a` (n × m) plus the row vector `b` (1 × m) on every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(b).nrows(), 1, "add_row expects a 1 × m bias");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::AddRow(a, b), rg)
    }

    /// Row `i` of `a` scaled by `b[i, 0]`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(b).ncols(), 1, "mul_col expects an n × 1 column");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MulCol(a, b), rg)
    }

    /// `a` scaled by the `1 × 1` value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let value = self.value(a) * k;
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::MulScalar(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let rg = self.rg(a);
        self.push(value, Op::AddConst(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { alpha * x.exp_m1() });
        let rg = self.rg(a);
        self.push(value, Op::Elu(a, alpha), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| leaky(x, slope));
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    /// Leaky rectifier with a learnable `1 × 1` negative slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Var {
        let s = self.scalar(slope);
        let value = self.value(a).mapv(|x| leaky(x, s));
        let rg = self.rg(a) || self.rg(slope);
        self.push(value, Op::PRelu(a, slope), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Ln(a), rg)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).mapv(|x| x.powf(p));
        let rg = self.rg(a);
        self.push(value, Op::Powf(a, p), rg)
    }

    /// Divides every row by its L2 norm. Callers guarantee nonzero rows.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / norm);
        }
        let rg = self.rg(a);
        self.push(value, Op::RowNormalize(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(a);
        self.push(value, Op::RowLogSoftmax(a), rg)
    }

    /// Per-row inner product, `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.value(a) * self.value(b);
        let value = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::RowDot(a, b), rg)
    }

    /// `ln Σ_j mask[i,j]·exp(a[i,j])` per row. Every row of `mask` must
    /// select at least one entry.
    pub fn masked_log_sum_exp(&mut self, a: Var, mask: Rc<Mat>) -> Var {
        let av = self.value(a);
        assert_eq!(av.dim(), mask.dim(), "mask shape must match input");
        let mut value = Mat::zeros((av.nrows(), 1));
        for (i, (row, mrow)) in av.rows().into_iter().zip(mask.rows()).enumerate() {
            let max = row
                .iter()
                .zip(mrow.iter())
                .filter(|(_, &m)| m != 0.0)
                .fold(f64::NEG_INFINITY, |acc, (&x, _)| acc.max(x));
            let s: f64 = row
                .iter()
                .zip(mrow.iter())
                .filter(|(_, &m)| m != 0.0)
                .map(|(&x, &m)| m * (x - max).exp())
                .sum();
            value[[i, 0]] = max + s.ln();
        }
        let rg = self.rg(a);
        self.push(value, Op::MaskedLogSumExp(a, mask), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Mat::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn select_rows(&mut self, a: Var, rows: Rc<Vec<usize>>) -> Var {
        let value = self.value(a).select(Axis(0), &rows);
        let rg = self.rg(a);
        self.push(value, Op::SelectRows(a, rows), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Copy of `base` whose listed rows are replaced by the `1 × m` `token`.
    pub fn replace_rows(&mut self, base: Var, token: Var, rows: Rc<Vec<usize>>) -> Var {
        let mut value = self.value(base).clone();
        let t = self.value(token).row(0).to_owned();
        for &r in rows.iter() {
            value.row_mut(r).assign(&t);
        }
        let rg = self.rg(base) || self.rg(token);
        self.push(value, Op::ReplaceRows { base, token, rows }, rg)
    }

    /// One attention head of a graph-attention layer.
    ///
    /// `wh` holds transformed node features (n × m); `src_score` and
    /// `dst_score` are the per-node halves of the attention logit (n × 1).
    /// Output row `i` is `Σ_j α_ij wh_j` over the incoming edges of `i`, with
    /// `α_i· = softmax(leaky_relu(dst_score_i + src_score_j))`.
    pub fn graph_attention(
        &mut self,
        wh: Var,
        src_score: Var,
        dst_score: Var,
        graph: Rc<EdgeIndex>,
        slope: f64,
    ) -> Var {
        let whv = self.value(wh);
        let ss = self.value(src_score);
        let ds = self.value(dst_score);
        let n = graph.num_nodes();
        assert_eq!(whv.nrows(), n, "feature rows must match graph size");
        let mut value = Mat::zeros((n, whv.ncols()));
        let mut alpha = Vec::with_capacity(graph.num_edges());
        let mut raw = Vec::with_capacity(graph.num_edges());
        for i in 0..n {
            let srcs = graph.incoming(i);
            let start = raw.len();
            for &j in srcs {
                raw.push(ds[[i, 0]] + ss[[j, 0]]);
            }
            let logits: Vec<f64> = raw[start..].iter().map(|&r| leaky(r, slope)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut out = value.row_mut(i);
            for (&j, e) in srcs.iter().zip(exps) {
                let a = e / total;
                alpha.push(a);
                out.scaled_add(a, &whv.row(j));
            }
        }
        let rg = self.rg(wh) || self.rg(src_score) || self.rg(dst_score);
        self.push(
            value,
            Op::GraphAttention {
                wh,
                src_score,
                dst_score,
                graph,
                slope,
                alpha,
                raw,
            },
            rg,
        )
    }

    /// Gradients of the scalar `output` with respect to every node that
    /// depends on a parameter.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward starts from a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::from_elem((1, 1), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    let d = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *b, d);
                }
            }
            Op::MulScalar(a, s) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.scalar(*s));
                }
                if self.rg(*s) {
                    let d = (g * self.value(*a)).sum();
                    self.accumulate(grads, *s, Mat::from_elem((1, 1), d));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Sigmoid(a) => {
                let d = Zip::from(g).and(out).map_collect(|&g, &y| g * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = Zip::from(g).and(out).map_collect(|&g, &y| g * (1.0 - y * y));
                self.accumulate(grads, *a, d);
            }
            Op::Elu(a, alpha) => {
                let d =
                    Zip::from(g)
                        .and(self.value(*a))
                        .and(out)
                        .map_collect(|&g, &x, &y| if x > 0.0 { g } else { g * (y + alpha) });
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| if x > 0.0 { g } else { g * slope });
                self.accumulate(grads, *a, d);
            }
            Op::PRelu(a, slope) => {
                let s = self.scalar(*slope);
                let av = self.value(*a);
                if self.rg(*a) {
                    let d = Zip::from(g)
                        .and(av)
                        .map_collect(|&g, &x| if x > 0.0 { g } else { g * s });
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*slope) {
                    let d: f64 = Zip::from(g)
                        .and(av)
                        .fold(0.0, |acc, &g, &x| if x > 0.0 { acc } else { acc + g * x });
                    self.accumulate(grads, *slope, Mat::from_elem((1, 1), d));
                }
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * out),
            Op::Ln(a) => self.accumulate(grads, *a, g / self.value(*a)),
            Op::Powf(a, p) => {
                let d = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| g * p * x.powf(p - 1.0));
                self.accumulate(grads, *a, d);
            }
            Op::RowNormalize(a) => {
                let av = self.value(*a);
                let mut d = Mat::zeros(av.dim());
                for (i, mut drow) in d.rows_mut().into_iter().enumerate() {
                    let x = av.row(i);
                    let y = out.row(i);
                    let gi = g.row(i);
                    let norm = x.dot(&x).sqrt();
                    let gy = gi.dot(&y);
                    Zip::from(&mut drow)
                        .and(&gi)
                        .and(&y)
                        .for_each(|d, &gv, &yv| *d = (gv - yv * gy) / norm);
                }
                self.accumulate(grads, *a, d);
            }
            Op::RowSoftmax(a) => {
                let gy = (g * out).sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = out * &(g - &gy);
                self.accumulate(grads, *a, d);
            }
            Op::RowLogSoftmax(a) => {
                let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = g - &(out.mapv(f64::exp) * &gs);
                self.accumulate(grads, *a, d);
            }
            Op::RowDot(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, self.value(*b) * g);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a) * g);
                }
            }
            Op::MaskedLogSumExp(a, mask) => {
                let av = self.value(*a);
                let mut d = Mat::zeros(av.dim());
                Zip::indexed(&mut d).and(av).and(&**mask).for_each(|(i, _), d, &x, &m| {
                    if m != 0.0 {
                        *d = g[[i, 0]] * m * (x - out[[i, 0]]).exp();
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let dim = self.value(*a).dim();
                let d = Mat::from_elem(dim, g[[0, 0]] / (dim.0 * dim.1) as f64);
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, rows) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (r, &src) in rows.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        let d = g.slice(ndarray::s![.., col..col + w]).to_owned();
                        self.accumulate(grads, p, d);
                    }
                    col += w;
                }
            }
            Op::ReplaceRows { base, token, rows } => {
                if self.rg(*base) {
                    let mut d = g.clone();
                    for &r in rows.iter() {
                        d.row_mut(r).fill(0.0);
                    }
                    self.accumulate(grads, *base, d);
                }
                if self.rg(*token) {
                    let mut d = Mat::zeros(self.value(*token).dim());
                    for &r in rows.iter() {
                        let mut row = d.row_mut(0);
                        row += &g.row(r);
                    }
                    self.accumulate(grads, *token, d);
                }
            }
            Op::GraphAttention {
                wh,
                src_score,
                dst_score,
                graph,
                slope,
                alpha,
                raw,
            } => {
                let whv = self.value(*wh);
                let n = graph.num_nodes();
                let mut dwh = Mat::zeros(whv.dim());
                let mut dsrc = Mat::zeros((n, 1));
                let mut ddst = Mat::zeros((n, 1));
                let mut e = 0;
                for i in 0..n {
                    let srcs = graph.incoming(i);
                    let gi = g.row(i);
                    let dalpha: Vec<f64> = srcs.iter().map(|&j| gi.dot(&whv.row(j))).collect();
                    let weighted: f64 = dalpha.iter().zip(&alpha[e..e + srcs.len()]).map(|(d, a)| d * a).sum();
                    for (k, &j) in srcs.iter().enumerate() {
                        let a = alpha[e + k];
                        let mut row = dwh.row_mut(j);
                        row.scaled_add(a, &gi);
                        let dlogit = a * (dalpha[k] - weighted);
                        let draw = if raw[e + k] > 0.0 { dlogit } else { dlogit * slope };
                        ddst[[i, 0]] += draw;
                        dsrc[[j, 0]] += draw;
                    }
                    e += srcs.len();
                }
                self.accumulate(grads, *wh, dwh);
                self.accumulate(grads, *src_score, dsrc);
                self.accumulate(grads, *dst_score, ddst);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(value: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
        let eps = 1e-6;
        let mut out = Mat::zeros(value.dim());
        for idx in 0..value.len() {
            let (r, c) = (idx / value.ncols(), idx % value.ncols());
            let mut p = value.clone();
            p[[r, c]] += eps;
            let mut m = value.clone();
            m[[r, c]] -= eps;
            out[[r, c]] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Mat, b: &Mat) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs())), "{a} vs {b}");
        }
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut t = Tape::new();
        let p = t.param(array![[1.0, 2.0]]);
        let z = t.scale(p, 0.0);
        let s = t.sum(z);
        let g = t.backward(s);
        assert!(g.get(p).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(array![[1.0, 2.0]]);
        let p = t.param(array![[3.0, 4.0]]);
        let m = t.mul(c, p);
        let s = t.sum(m);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn normalize_softmax_chain_matches_finite_differences() {
        let x0 = array![[0.3, -1.2, 0.7], [1.5, 0.2, -0.4]];
        let w = array![[0.2, 0.1], [-0.3, 0.5], [0.8, -0.6]];
        let f = |x: &Mat| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let wv = t.constant(w.clone());
            let n = t.row_normalize(xv);
            let h = t.matmul(n, wv);
            let s = t.row_log_softmax(h);
            let e = t.exp(s);
            let d = t.row_softmax(h);
            let q = t.mul(e, d);
            let l = t.sum(q);
            (t.scalar(l), t.backward(l).take(xv).unwrap())
        };
        let analytic = f(&x0).1;
        let numeric = numeric_grad(&x0, |x| f(x).0);
        assert_close(&analytic, &numeric);
    }

    #[test]
    fn graph_attention_matches_finite_differences() {
        let graph = Rc::new(EdgeIndex::from_undirected(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]));
        let wh0 = array![[0.1, 0.4], [-0.5, 0.3], [0.9, -0.2], [0.05, 0.6]];
        let s0 = array![[0.3], [-0.8], [0.45], [0.12]];
        let d0 = array![[-0.2], [0.6], [0.1], [-0.7]];
        let run = |wh: &Mat, s: &Mat, d: &Mat| {
            let mut t = Tape::new();
            let a = t.param(wh.clone());
            let b = t.param(s.clone());
            let c = t.param(d.clone());
            let out = t.graph_attention(a, b, c, graph.clone(), 0.2);
            let sq = t.mul(out, out);
            let l = t.sum(sq);
            let mut g = t.backward(l);
            (t.scalar(l), g.take(a).unwrap(), g.take(b).unwrap(), g.take(c).unwrap())
        };
        let (_, ga, gb, gc) = run(&wh0, &s0, &d0);
        assert_close(&ga, &numeric_grad(&wh0, |m| run(m, &s0, &d0).0));
        assert_close(&gb, &numeric_grad(&s0, |m| run(&wh0, m, &d0).0));
        assert_close(&gc, &numeric_grad(&d0, |m| run(&wh0, &s0, m).0));
    }

    #[test]
    fn masked_lse_and_replace_rows_match_finite_differences() {
        let a0 = array![[0.5, -0.3, 1.1], [0.2, 0.9, -1.4]];
        let tok0 = array![[0.7, -0.1, 0.3]];
        let mask = Rc::new(array![[1.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        let run = |a: &Mat, tok: &Mat| {
            let mut t = Tape::new();
            let av = t.param(a.clone());
            let tv = t.param(tok.clone());
            let r = t.replace_rows(av, tv, Rc::new(vec![1]));
            let l = t.masked_log_sum_exp(r, mask.clone());
            let p = t.powf(l, 2.0);
            let m = t.mean(p);
            let mut g = t.backward(m);
            (t.scalar(m), g.take(av).unwrap(), g.take(tv).unwrap())
        };
        let (_, ga, gt) = run(&a0, &tok0);
        assert_close(&ga, &numeric_grad(&a0, |m| run(m, &tok0).0));
        assert_close(&gt, &numeric_grad(&tok0, |m| run(&a0, m).0));
        assert_eq!(ga.row(1).sum(), 0.0);
    }

    #[test]
    fn edge_index_adds_self_loops_and_both_directions() {
        let g = EdgeIndex::from_undirected(3, &[(0, 1), (1, 0)]);
        assert_eq!(g.incoming(0), &[0, 1]);
        assert_eq!(g.incoming(1), &[0, 1]);
        assert_eq!(g.incoming(2), &[2]);
    }
}
