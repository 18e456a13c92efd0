//! Define-by-run reverse-mode differentiation over dense row-major
//! matrices. A [`Graph`] is built fresh for every forward pass; values are
//! computed eagerly as nodes are added, and [`Graph::backward`] walks the
//! node list in reverse.

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    /// One row of a parameter matrix.
    Row(ParamId, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise multiply by a fixed mask.
    MulConst(Var, Vec<f64>),
    /// `x · W` for a vector x and an (in × out) matrix W.
    VecMat(Var, Var),
    /// `M · x` for an (r × c) matrix M and a length-c vector x.
    MatVec(Var, Var),
    Dot(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    /// Stacks equal-length vectors as matrix rows.
    Stack(Vec<Var>),
    Softmax(Var),
    /// `-log softmax(logits)[target]`.
    CrossEntropyLogits(Var, usize),
    /// `-log max(p[target], eps)`.
    NegLogPick(Var, usize),
    /// Summed binary cross-entropy with clamped probabilities.
    Bce(Var, Vec<f64>),
    Sum(Var),
    SumAll(Vec<Var>),
    /// Row i of the matrix multiplied by element i of the vector.
    ScaleRows(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

pub const PROB_EPS: f64 = 1e-12;

/// Computation graph borrowing a parameter store for its lifetime.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(1024),
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

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.data(*id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Number of elements.
    pub fn size(&self, v: Var) -> usize {
        let (r, c) = self.shape(v);
        r * c
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(Op::Const, 1, n, value)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for {rows}x{cols}", value.len())));
        }
        Ok(self.push(Op::Const, rows, cols, value))
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params.param(id);
        let (rows, cols) = (p.rows, p.cols);
        self.push(Op::Param(id), rows, cols, Vec::new())
    }

    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let p = self.params.param(id);
        if row >= p.rows {
            return Err(Error::TokenOutOfRange { id: row, size: p.rows });
        }
        let value = p.row(row).to_vec();
        let cols = p.cols;
        Ok(self.push(Op::Row(id, row), 1, cols, value))
    }

    fn same_size(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (na, nb) = (self.size(a), self.size(b));
        if na != nb {
            return Err(Error::Shape(format!("{what}: {na} vs {nb} elements")));
        }
        Ok(na)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_size(a, b, "elementwise op")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let (r, c) = self.shape(a);
        Ok(self.push(op, r, c, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * k).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Scale(a, k), r, c, value)
    }

    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.size(a) {
            return Err(Error::Shape("mask length".into()));
        }
        let value = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let (r, c) = self.shape(a);
        Ok(self.push(Op::MulConst(a, mask), r, c, value))
    }

    pub fn vecmat(&mut self, x: Var, w: Var) -> Result<Var> {
        let (rows, cols) = self.shape(w);
        if self.size(x) != rows {
            return Err(Error::Shape(format!(
                "vecmat: vector of {} vs matrix {rows}x{cols}",
                self.size(x)
            )));
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; cols];
        for (i, &xi) in xv.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &wv[i * cols..(i + 1) * cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        Ok(self.push(Op::VecMat(x, w), 1, cols, out))
    }

    /// `x · W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.vecmat(x, w)?;
        self.add(y, b)
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (rows, cols) = self.shape(m);
        if self.size(x) != cols {
            return Err(Error::Shape(format!(
                "matvec: matrix {rows}x{cols} vs vector of {}",
                self.size(x)
            )));
        }
        let mv = self.value(m);
        let xv = self.value(x);
        let out = (0..rows)
            .map(|r| mv[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(Op::MatVec(m, x), 1, rows, out))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_size(a, b, "dot")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), 1, 1, vec![v]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Sigmoid(a), r, c, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Tanh(a), r, c, value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        let n = value.len();
        self.push(Op::Concat(parts.to_vec()), 1, n, value)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.size(a) {
            return Err(Error::Shape("slice out of range".into()));
        }
        let value = self.value(a)[start..start + len].to_vec();
        Ok(self.push(Op::Slice(a, start), 1, len, value))
    }

    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Shape("stack of zero vectors".into()))?;
        let cols = self.size(first);
        let mut value = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if self.size(r) != cols {
                return Err(Error::Shape("stack: ragged rows".into()));
            }
            value.extend_from_slice(self.value(r));
        }
        Ok(self.push(Op::Stack(rows.to_vec()), rows.len(), cols, value))
    }

    pub fn scale_rows(&mut self, m: Var, k: Var) -> Result<Var> {
        let (rows, cols) = self.shape(m);
        if self.size(k) != rows {
            return Err(Error::Shape(format!("scale_rows: {rows} rows vs {} factors", self.size(k))));
        }
        let mv = self.value(m);
        let kv = self.value(k);
        let value = (0..rows * cols).map(|i| mv[i] * kv[i / cols]).collect();
        Ok(self.push(Op::ScaleRows(m, k), rows, cols, value))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = softmax(self.value(a))?;
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Softmax(a), r, c, value))
    }

    /// Softmax where positions with `mask[i] == false` get zero weight and
    /// no gradient.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.size(a) {
            return Err(Error::Shape("mask length".into()));
        }
        let value = masked_softmax(self.value(a), mask)?;
        let (r, c) = self.shape(a);
        Ok(self.push(Op::Softmax(a), r, c, value))
    }

    pub fn cross_entropy_logits(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.size(logits);
        if target >= n {
            return Err(Error::TokenOutOfRange { id: target, size: n });
        }
        let lv = self.value(logits);
        let v = log_sum_exp(lv) - lv[target];
        Ok(self.push(Op::CrossEntropyLogits(logits, target), 1, 1, vec![v]))
    }

    pub fn neg_log_pick(&mut self, probs: Var, target: usize) -> Result<Var> {
        let n = self.size(probs);
        if target >= n {
            return Err(Error::TokenOutOfRange { id: target, size: n });
        }
        let v = -self.value(probs)[target].max(PROB_EPS).ln();
        Ok(self.push(Op::NegLogPick(probs, target), 1, 1, vec![v]))
    }

    pub fn bce(&mut self, probs: Var, labels: Vec<f64>) -> Result<Var> {
        if labels.len() != self.size(probs) {
            return Err(Error::Shape("bce label length".into()));
        }
        let v = binary_cross_entropy(self.value(probs), &labels);
        Ok(self.push(Op::Bce(probs, labels), 1, 1, vec![v]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().sum();
        self.push(Op::Sum(a), 1, 1, vec![v])
    }

    /// Sum of scalar nodes, accumulated in order.
    pub fn sum_all(&mut self, scalars: &[Var]) -> Result<Var> {
        let mut v = 0.0;
        for &s in scalars {
            if self.size(s) != 1 {
                return Err(Error::Shape("sum_all expects scalars".into()));
            }
            v += self.value(s)[0];
        }
        Ok(self.push(Op::SumAll(scalars.to_vec()), 1, 1, vec![v]))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        check_dropout_p(p)?;
        if !training || p == 0.0 {
            return Ok(a);
        }
        let mask = dropout_mask(self.size(a), p, rng);
        self.mul_const(a, mask)
    }

    /// Accumulates d(loss)/d(param) into `grads` for every parameter the
    /// loss depends on.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.size(loss) != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {} elements",
                self.size(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    let buf = grads.buffer(*id, g.len());
                    add_into(buf, &g);
                }
                Op::Row(id, r) => {
                    let p = self.params.param(*id);
                    let buf = grads.buffer(*id, p.data.len());
                    add_into(&mut buf[r * p.cols..(r + 1) * p.cols], &g);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, self, *a, &g);
                    acc(&mut adj, self, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, self, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut adj, self, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(g, x)| g * x).collect();
                    acc(&mut adj, self, *a, &ga);
                    acc(&mut adj, self, *b, &gb);
                }
                Op::Scale(a, k) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * k).collect();
                    acc(&mut adj, self, *a, &ga);
                }
                Op::MulConst(a, mask) => {
                    let ga: Vec<f64> = g.iter().zip(mask).map(|(x, m)| x * m).collect();
                    acc(&mut adj, self, *a, &ga);
                }
                Op::VecMat(x, w) => {
                    let (rows, cols) = self.shape(*w);
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let gx: Vec<f64> = (0..rows)
                        .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(&mut adj, self, *x, &gx);
                    self.acc_with(&mut adj, grads, *w, |buf| {
                        for (r, &xr) in xv.iter().enumerate() {
                            if xr == 0.0 {
                                continue;
                            }
                            for (b, gc) in buf[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                                *b += xr * gc;
                            }
                        }
                    });
                }
                Op::MatVec(m, x) => {
                    let (rows, cols) = self.shape(*m);
                    let mv = self.value(*m);
                    let xv = self.value(*x);
                    let mut gx = vec![0.0; cols];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        for (o, a) in gx.iter_mut().zip(&mv[r * cols..(r + 1) * cols]) {
                            *o += gr * a;
                        }
                    }
                    acc(&mut adj, self, *x, &gx);
                    self.acc_with(&mut adj, grads, *m, |buf| {
                        for (r, &gr) in g.iter().enumerate().take(rows) {
                            if gr == 0.0 {
                                continue;
                            }
                            for (b, xc) in buf[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *b += gr * xc;
                            }
                        }
                    });
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = self.value(*b).iter().map(|y| y * g[0]).collect();
                    let gb: Vec<f64> = self.value(*a).iter().map(|x| x * g[0]).collect();
                    acc(&mut adj, self, *a, &ga);
                    acc(&mut adj, self, *b, &gb);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> =
                        g.iter().zip(&node.value).map(|(g, s)| g * s * (1.0 - s)).collect();
                    acc(&mut adj, self, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> =
                        g.iter().zip(&node.value).map(|(g, t)| g * (1.0 - t * t)).collect();
                    acc(&mut adj, self, *a, &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.size(p);
                        acc(&mut adj, self, p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let mut ga = vec![0.0; self.size(*a)];
                    ga[*start..*start + g.len()].copy_from_slice(&g);
                    acc(&mut adj, self, *a, &ga);
                }
                Op::Stack(rows) => {
                    let cols = node.cols;
                    for (r, &v) in rows.iter().enumerate() {
                        acc(&mut adj, self, v, &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let ga: Vec<f64> = g.iter().zip(y).map(|(g, y)| y * (g - dot)).collect();
                    acc(&mut adj, self, *a, &ga);
                }
                Op::CrossEntropyLogits(a, t) => {
                    let mut ga = softmax(self.value(*a))?;
                    ga[*t] -= 1.0;
                    for x in &mut ga {
                        *x *= g[0];
                    }
                    acc(&mut adj, self, *a, &ga);
                }
                Op::NegLogPick(a, t) => {
                    let p = self.value(*a)[*t];
                    let mut ga = vec![0.0; self.size(*a)];
                    if p > PROB_EPS {
                        ga[*t] = -g[0] / p;
                    }
                    acc(&mut adj, self, *a, &ga);
                }
                Op::Bce(a, labels) => {
                    let ga: Vec<f64> = self
                        .value(*a)
                        .iter()
                        .zip(labels)
                        .map(|(&p, &l)| {
                            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                                0.0
                            } else {
                                g[0] * (p - l) / (p * (1.0 - p))
                            }
                        })
                        .collect();
                    acc(&mut adj, self, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.size(*a)];
                    acc(&mut adj, self, *a, &ga);
                }
                Op::ScaleRows(m, k) => {
                    let cols = node.cols;
                    let mv = self.value(*m);
                    let kv = self.value(*k);
                    let gm: Vec<f64> = g.iter().enumerate().map(|(i, g)| g * kv[i / cols]).collect();
                    let gk: Vec<f64> = (0..kv.len())
                        .map(|r| {
                            g[r * cols..(r + 1) * cols]
                                .iter()
                                .zip(&mv[r * cols..(r + 1) * cols])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    acc(&mut adj, self, *m, &gm);
                    acc(&mut adj, self, *k, &gk);
                }
                Op::SumAll(parts) => {
                    for &p in parts {
                        acc(&mut adj, self, p, &g[..1]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Routes a matrix gradient straight into the parameter buffer when
    /// the matrix is a parameter, avoiding a dense intermediate.
    fn acc_with(
        &self,
        adj: &mut [Option<Vec<f64>>],
        grads: &mut Gradients,
        target: Var,
        fill: impl FnOnce(&mut [f64]),
    ) {
        match &self.nodes[target.0].op {
            Op::Const => {}
            Op::Param(id) => {
                let len = self.params.data(*id).len();
                fill(grads.buffer(*id, len));
            }
            _ => {
                let len = self.size(target);
                let slot = adj[target.0].get_or_insert_with(|| vec![0.0; len]);
                fill(slot);
            }
        }
    }
}

fn acc(adj: &mut [Option<Vec<f64>>], graph: &Graph<'_>, target: Var, g: &[f64]) {
    if matches!(graph.nodes[target.0].op, Op::Const) {
        return;
    }
    match &mut adj[target.0] {
        Some(buf) => add_into(buf, g),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn add_into(buf: &mut [f64], g: &[f64]) {
    for (a, b) in buf.iter_mut().zip(g) {
        *a += b;
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

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax. NaN input is an error.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    masked_softmax(x, &vec![true; x.len()])
}

pub fn masked_softmax(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in softmax input".into()));
    }
    let m = x
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("softmax over fully masked input".into()));
    }
    let mut out: Vec<f64> = x
        .iter()
        .zip(mask)
        .map(|(v, &keep)| if keep { (v - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}

pub fn log_softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in log_softmax input".into()));
    }
    let lse = log_sum_exp(x);
    Ok(x.iter().map(|v| v - lse).collect())
}

/// `-ln p[target]`, with `p[target]` clamped at 1e-12. The flag reports
/// whether clamping happened.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<(f64, bool)> {
    let p = *probs
        .get(target)
        .ok_or(Error::TokenOutOfRange { id: target, size: probs.len() })?;
    let clamped = p < PROB_EPS;
    Ok((-p.max(PROB_EPS).ln(), clamped))
}

pub fn binary_cross_entropy(probs: &[f64], labels: &[f64]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(l * p.ln() + (1.0 - l) * (1.0 - p).ln())
        })
        .sum()
}

fn check_dropout_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
    }
    Ok(())
}

fn dropout_mask<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Plain-array dropout with the same semantics as [`Graph::dropout`].
pub fn dropout<R: Rng>(x: &[f64], p: f64, training: bool, rng: &mut R) -> Result<Vec<f64>> {
    check_dropout_p(p)?;
    if !training || p == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), p, rng);
    Ok(x.iter().zip(mask).map(|(a, m)| a * m).collect())
}
