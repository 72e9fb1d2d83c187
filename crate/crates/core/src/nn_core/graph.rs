//! Reverse-mode differentiation over a per-sample tape.
//!
//! Every operation appends a node holding its forward value plus whatever
//! the backward pass needs. Parameters are leaves that borrow their values
//! from a [`ParamStore`]; [`Graph::backward`] returns their gradients.

use super::mat::{gemm, Mat, View, ViewMut};
use super::params::{Grads, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Guards the denominator of the relative squared error.
pub const REL_LOSS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which keys a query may attend to.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    None,
    /// Query `i` of `n` sees keys `j <= i + (m - n)` of `m`.
    Causal,
    /// `true` marks a key every query ignores.
    KeyPadding(Vec<bool>),
    /// Row-major `n x m`; `true` marks a blocked pair.
    Dense(Vec<bool>),
}

impl Mask {
    fn blocked(&self, i: usize, j: usize, n: usize, m: usize) -> bool {
        match self {
            Mask::None => false,
            Mask::Causal => j + n > i + m,
            Mask::KeyPadding(p) => p[j],
            Mask::Dense(d) => d[i * m + j],
        }
    }

    fn check(&self, n: usize, m: usize) {
        match self {
            Mask::KeyPadding(p) => assert_eq!(p.len(), m, "key padding mask length"),
            Mask::Dense(d) => assert_eq!(d.len(), n * m, "dense mask size"),
            _ => {}
        }
    }
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Mat>,
    },
    Concat(Var, Var),
    SliceRows(Var, usize),
    Embedding(Var, Vec<u32>),
    RelSquared {
        pred: Var,
        target: Mat,
        cols: Vec<bool>,
        denom: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        probs: Mat,
        ignore: u32,
        count: usize,
    },
}

struct Node {
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
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

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar of non-scalar node");
        m.data[0]
    }

    /// Per-head attention weights of an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[Mat]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.nodes.push(Node {
            value: Some(m),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, p: ParamId) -> Var {
        if let Some(v) = self.param_vars[p.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(p),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[p.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.rows, "matmul shapes {:?} {:?}", am.shape(), bm.shape());
        let mut c = Mat::zeros(am.rows, bm.cols);
        gemm(1.0, View::of(am), View::of(bm), 0.0, ViewMut::of(&mut c));
        self.push(c, Op::MatMul(a, b), &[a, b])
    }

    /// `x W + b` with `W: in x out` and `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let (wv, bv) = (self.param(w), self.param(b));
        let (xm, wm, bm) = (self.value(x), self.value(wv), self.value(bv));
        assert_eq!(xm.cols, wm.rows, "linear input width {} vs {}", xm.cols, wm.rows);
        assert_eq!(bm.shape(), (1, wm.cols), "linear bias shape");
        let mut y = Mat::zeros(xm.rows, wm.cols);
        for r in 0..y.rows {
            y.row_mut(r).copy_from_slice(&bm.data);
        }
        gemm(1.0, View::of(xm), View::of(wm), 1.0, ViewMut::of(&mut y));
        self.push(y, Op::Linear(x, wv, bv), &[x, wv, bv])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "add shapes");
        let mut c = am.clone();
        c.add_assign(bm);
        self.push(c, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.shape(), (1, am.cols), "add_row shapes");
        let mut c = am.clone();
        for r in 0..c.rows {
            for (x, y) in c.row_mut(r).iter_mut().zip(&rm.data) {
                *x += y;
            }
        }
        self.push(c, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.shape(), (1, am.cols), "mul_row shapes");
        let mut c = am.clone();
        for r in 0..c.rows {
            for (x, y) in c.row_mut(r).iter_mut().zip(&rm.data) {
                *x *= y;
            }
        }
        self.push(c, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut c = self.value(a).clone();
        c.scale(s);
        self.push(c, Op::Scale(a, s), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut c = self.value(a).clone();
        for x in &mut c.data {
            *x = gelu(*x);
        }
        self.push(c, Op::Gelu(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: ParamId, bias: ParamId) -> Var {
        let (gv, bv) = (self.param(gain), self.param(bias));
        let (xm, gm, bm) = (self.value(x), self.value(gv), self.value(bv));
        assert_eq!(gm.shape(), (1, xm.cols), "layer norm gain shape");
        let (xhat, rstd) = normalize_rows(xm);
        let mut y = xhat.clone();
        for r in 0..y.rows {
            for ((o, g), b) in y.row_mut(r).iter_mut().zip(&gm.data).zip(&bm.data) {
                *o = *o * g + b;
            }
        }
        self.push(
            y,
            Op::LayerNorm {
                x,
                gain: gv,
                bias: bv,
                xhat,
                rstd,
            },
            &[x, gv, bv],
        )
    }

    /// Multi-head `softmax(Q K^T / sqrt(d_k)) V` on already projected
    /// `Q: n x D`, `K, V: m x D`; heads split `D` into equal column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &Mask) -> Var {
        let (out, probs) = attention_forward(self.value(q), self.value(k), self.value(v), heads, mask);
        self.push(out, Op::Attention { q, k, v, heads, probs }, &[q, k, v])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let c = Mat::vstack(self.value(a), self.value(b));
        self.push(c, Op::Concat(a, b), &[a, b])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let c = self.value(a).rows_slice(start, len);
        self.push(c, Op::SliceRows(a, start), &[a])
    }

    /// Rows of an embedding table selected by `ids`.
    pub fn embedding(&mut self, table: ParamId, ids: &[u32]) -> Var {
        let tv = self.param(table);
        let t = self.value(tv);
        let mut c = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            assert!((id as usize) < t.rows, "embedding id {id} out of range");
            c.row_mut(r).copy_from_slice(t.row(id as usize));
        }
        self.push(c, Op::Embedding(tv, ids.to_vec()), &[tv])
    }

    /// `|pred - target|^2 / (|target|^2 + eps)` over the columns with
    /// `cols[j] = true`.
    pub fn rel_squared(&mut self, pred: Var, target: &Mat, cols: &[bool]) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "loss shapes");
        assert_eq!(cols.len(), p.cols, "loss column mask");
        let (mut num, mut den) = (0.0, REL_LOSS_EPS);
        for r in 0..p.rows {
            for j in (0..p.cols).filter(|&j| cols[j]) {
                let t = target.get(r, j);
                num += (p.get(r, j) - t).powi(2);
                den += t * t;
            }
        }
        self.push(
            Mat::from_vec(1, 1, vec![num / den]),
            Op::RelSquared {
                pred,
                target: target.clone(),
                cols: cols.to_vec(),
                denom: den,
            },
            &[pred],
        )
    }

    /// Mean negative log-likelihood of `targets` over rows whose target is
    /// not `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: u32) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, targets.len(), "one target per logit row");
        let probs = softmax_rows(l);
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            total -= log_softmax_at(l.row(r), t as usize);
            count += 1;
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                ignore,
                count,
            },
            &[logits],
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Grads::new(self.params.len());
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads, &mut out);
        }
        out
    }

    fn backward_node(&self, i: usize, g: Mat, grads: &mut [Option<Mat>], out: &mut Grads) {
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(m) => m.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(p) => out.accumulate(*p, g),
            Op::MatMul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut da = Mat::zeros(am.rows, am.cols);
                gemm(1.0, View::of(&g), View::of(bm).t(), 0.0, ViewMut::of(&mut da));
                let mut db = Mat::zeros(bm.rows, bm.cols);
                gemm(1.0, View::of(am).t(), View::of(&g), 0.0, ViewMut::of(&mut db));
                acc(*a, da);
                acc(*b, db);
            }
            Op::Linear(x, w, b) => {
                let (xm, wm) = (self.value(*x), self.value(*w));
                if self.nodes[x.0].needs_grad {
                    let mut dx = Mat::zeros(xm.rows, xm.cols);
                    gemm(1.0, View::of(&g), View::of(wm).t(), 0.0, ViewMut::of(&mut dx));
                    acc(*x, dx);
                }
                let mut dw = Mat::zeros(wm.rows, wm.cols);
                gemm(1.0, View::of(xm).t(), View::of(&g), 0.0, ViewMut::of(&mut dw));
                acc(*w, dw);
                acc(*b, col_sums(&g));
            }
            Op::Add(a, b) => {
                acc(*b, g.clone());
                acc(*a, g);
            }
            Op::AddRow(a, row) => {
                acc(*row, col_sums(&g));
                acc(*a, g);
            }
            Op::MulRow(a, row) => {
                let (am, rm) = (self.value(*a), self.value(*row));
                let mut drow = Mat::zeros(1, am.cols);
                let mut da = g;
                for r in 0..da.rows {
                    for j in 0..am.cols {
                        drow.data[j] += da.get(r, j) * am.get(r, j);
                        da.data[r * am.cols + j] *= rm.data[j];
                    }
                }
                acc(*row, drow);
                acc(*a, da);
            }
            Op::Scale(a, s) => {
                let mut d = g;
                d.scale(*s);
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let mut d = g;
                for (dv, xv) in d.data.iter_mut().zip(&x.data) {
                    *dv *= gelu_grad(*xv);
                }
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gm = self.value(*gain);
                let n = xhat.cols as f64;
                let mut dx = Mat::zeros(xhat.rows, xhat.cols);
                let mut dgain = Mat::zeros(1, xhat.cols);
                for r in 0..xhat.rows {
                    let (gr, xr) = (g.row(r), xhat.row(r));
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..xhat.cols {
                        let d = gr[j] * gm.data[j];
                        mean_d += d;
                        mean_dx += d * xr[j];
                        dgain.data[j] += gr[j] * xr[j];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    let out = dx.row_mut(r);
                    for j in 0..xhat.cols {
                        let d = gr[j] * gm.data[j];
                        out[j] = rstd[r] * (d - mean_d - xr[j] * mean_dx);
                    }
                }
                acc(*bias, col_sums(&g));
                acc(*gain, dgain);
                acc(*x, dx);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (dq, dk, dv) =
                    attention_backward(self.value(*q), self.value(*k), self.value(*v), *heads, probs, &g);
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Concat(a, b) => {
                let ra = self.value(*a).rows;
                acc(*a, g.rows_slice(0, ra));
                acc(*b, g.rows_slice(ra, g.rows - ra));
            }
            Op::SliceRows(a, start) => {
                let am = self.value(*a);
                let mut d = Mat::zeros(am.rows, am.cols);
                d.data[start * am.cols..(start + g.rows) * am.cols].copy_from_slice(&g.data);
                acc(*a, d);
            }
            Op::Embedding(table, ids) => {
                let t = self.value(*table);
                let mut d = Mat::zeros(t.rows, t.cols);
                for (r, &id) in ids.iter().enumerate() {
                    for (x, y) in d.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                acc(*table, d);
            }
            Op::RelSquared {
                pred,
                target,
                cols,
                denom,
            } => {
                let p = self.value(*pred);
                let s = g.data[0] * 2.0 / denom;
                let d = Mat::from_fn(p.rows, p.cols, |r, j| {
                    if cols[j] {
                        s * (p.get(r, j) - target.get(r, j))
                    } else {
                        0.0
                    }
                });
                acc(*pred, d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                ignore,
                count,
            } => {
                let mut d = Mat::zeros(probs.rows, probs.cols);
                if *count > 0 {
                    let s = g.data[0] / *count as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let row = d.row_mut(r);
                        for (x, p) in row.iter_mut().zip(probs.row(r)) {
                            *x = s * p;
                        }
                        row[t as usize] -= s;
                    }
                }
                acc(*logits, d);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn col_sums(g: &Mat) -> Mat {
    let mut s = Mat::zeros(1, g.cols);
    for r in 0..g.rows {
        for (a, b) in s.data.iter_mut().zip(g.row(r)) {
            *a += b;
        }
    }
    s
}

/// Per-row `(x - mean) / sqrt(var + eps)` and the `1 / sqrt(var + eps)`.
pub fn normalize_rows(x: &Mat) -> (Mat, Vec<f64>) {
    let n = x.cols as f64;
    let mut out = x.clone();
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        rstd.push(s);
    }
    (out, rstd)
}

pub fn softmax_rows(x: &Mat) -> Mat {
    let mut p = x.clone();
    for r in 0..p.rows {
        let row = p.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[t] - lse
}

pub(crate) fn attention_forward(q: &Mat, k: &Mat, v: &Mat, heads: usize, mask: &Mask) -> (Mat, Vec<Mat>) {
    let (n, m, d) = (q.rows, k.rows, q.cols);
    assert_eq!(k.cols, d, "attention key width");
    assert_eq!(v.shape(), (m, d), "attention value shape");
    assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
    mask.check(n, m);
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Mat::zeros(n, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut s = Mat::zeros(n, m);
        gemm(
            scale,
            View::cols_of(q, h * dk, dk),
            View::cols_of(k, h * dk, dk).t(),
            0.0,
            ViewMut::of(&mut s),
        );
        for i in 0..n {
            let row = s.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for (j, x) in row.iter().enumerate() {
                if !mask.blocked(i, j, n, m) {
                    max = max.max(*x);
                }
            }
            let mut sum = 0.0;
            for (j, x) in row.iter_mut().enumerate() {
                if mask.blocked(i, j, n, m) {
                    *x = 0.0;
                } else {
                    *x = (*x - max).exp();
                    sum += *x;
                }
            }
            if sum > 0.0 {
                for x in row.iter_mut() {
                    *x /= sum;
                }
            }
        }
        gemm(
            1.0,
            View::of(&s),
            View::cols_of(v, h * dk, dk),
            0.0,
            ViewMut::cols_of(&mut out, h * dk, dk),
        );
        probs.push(s);
    }
    (out, probs)
}

fn attention_backward(q: &Mat, k: &Mat, v: &Mat, heads: usize, probs: &[Mat], g: &Mat) -> (Mat, Mat, Mat) {
    let (n, m, d) = (q.rows, k.rows, q.cols);
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Mat::zeros(n, d);
    let mut dkm = Mat::zeros(m, d);
    let mut dv = Mat::zeros(m, d);
    for (h, p) in probs.iter().enumerate() {
        let c0 = h * dk;
        // dV_h = P^T dO_h
        gemm(
            1.0,
            View::of(p).t(),
            View::cols_of(g, c0, dk),
            0.0,
            ViewMut::cols_of(&mut dv, c0, dk),
        );
        // dP = dO_h V_h^T
        let mut ds = Mat::zeros(n, m);
        gemm(
            1.0,
            View::cols_of(g, c0, dk),
            View::cols_of(v, c0, dk).t(),
            0.0,
            ViewMut::of(&mut ds),
        );
        // dS = P * (dP - rowsum(dP * P)), then the score scale.
        for i in 0..n {
            let (pr, dr) = (p.row(i), ds.row_mut(i));
            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for (x, pv) in dr.iter_mut().zip(pr) {
                *x = pv * (*x - dot) * scale;
            }
        }
        gemm(
            1.0,
            View::of(&ds),
            View::cols_of(k, c0, dk),
            0.0,
            ViewMut::cols_of(&mut dq, c0, dk),
        );
        gemm(
            1.0,
            View::of(&ds).t(),
            View::cols_of(q, c0, dk),
            0.0,
            ViewMut::cols_of(&mut dkm, c0, dk),
        );
    }
    (dq, dkm, dv)
}
