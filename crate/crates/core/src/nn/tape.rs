//! Vector-level reverse-mode differentiation.
//!
//! A [`Tape`] records a computation over vectors and matrices as it is
//! evaluated. Parameter leaves borrow their values from a [`ModelParams`]
//! store; [`Tape::backward`] returns gradients for every parameter touched.

use super::params::{Gradients, ModelParams, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScalarMul(Var, Var),
    Dot(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Sum(Vec<Var>),
    Row(Var, usize),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    SoftmaxCrossEntropy(Var, usize),
    BinaryCrossEntropy(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn len_of(&self, v: Var) -> usize {
        let n = &self.nodes[v.0];
        n.rows * n.cols
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    fn vector(&mut self, op: Op, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(op, n, 1, value)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.vector(Op::Input, value)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.input(vec![0.0; len])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params.get(id);
        let (rows, cols) = (p.rows, p.cols);
        self.push(Op::Param(id), rows, cols, Vec::new())
    }

    /// Matrix-vector product `w x`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (rows, cols) = (self.nodes[w.0].rows, self.nodes[w.0].cols);
        let (wv, xv) = (self.value(w), self.value(x));
        assert_eq!(xv.len(), cols, "matvec shape mismatch");
        let out = (0..rows)
            .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.vector(Op::MatVec(w, x), out)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise shape mismatch");
        let out = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        self.vector(op, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.vector(Op::Scale(a, c), out)
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x + c).collect();
        self.vector(Op::Offset(a), out)
    }

    /// One-element `s` times vector `v`.
    pub fn scalar_mul(&mut self, s: Var, v: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(v).iter().map(|x| x * k).collect();
        self.vector(Op::ScalarMul(s, v), out)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "dot shape mismatch");
        let d = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        self.vector(Op::Dot(a, b), vec![d])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.vector(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.vector(Op::Sigmoid(a), out)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|&p| self.len_of(p)).sum());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.vector(Op::Concat(parts.to_vec()), out)
    }

    /// Elementwise sum of equal-length vectors.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum of nothing");
        let mut out = self.value(parts[0]).to_vec();
        for &p in &parts[1..] {
            for (o, x) in out.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        self.vector(Op::Sum(parts.to_vec()), out)
    }

    pub fn mean(&mut self, parts: &[Var]) -> Var {
        let s = self.sum(parts);
        self.scale(s, 1.0 / parts.len() as f64)
    }

    /// Row `r` of matrix node `table`.
    pub fn row(&mut self, table: Var, r: usize) -> Var {
        let cols = self.nodes[table.0].cols;
        assert!(r < self.nodes[table.0].rows, "row {r} out of range");
        let out = self.value(table)[r * cols..(r + 1) * cols].to_vec();
        self.vector(Op::Row(table, r), out)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax(self.value(a));
        self.vector(Op::Softmax(a), out)
    }

    /// `sum_i weights[i] * values[i]`.
    pub fn weighted_sum(&mut self, weights: Var, values: &[Var]) -> Var {
        let w = self.value(weights).to_vec();
        assert_eq!(w.len(), values.len(), "weighted_sum arity mismatch");
        let mut out = vec![0.0; self.len_of(values[0])];
        for (&wi, &v) in w.iter().zip(values) {
            for (o, x) in out.iter_mut().zip(self.value(v)) {
                *o += wi * x;
            }
        }
        self.vector(Op::WeightedSum(weights, values.to_vec()), out)
    }

    /// `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - l[target];
        self.vector(Op::SoftmaxCrossEntropy(logits, target), vec![loss])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.len(), targets.len(), "bce shape mismatch");
        let loss = l.iter().zip(&targets).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / l.len() as f64;
        self.vector(Op::BinaryCrossEntropy(logits, targets), vec![loss])
    }

    /// Softmax attention of `query` over `keys` with scaled dot products,
    /// mixing `values`. An empty neighborhood yields a zero vector of
    /// `value_dim` entries.
    pub fn attention(&mut self, query: Var, keys: &[Var], values: &[Var], value_dim: usize) -> Var {
        assert_eq!(keys.len(), values.len(), "keys and values differ in count");
        if keys.is_empty() {
            return self.zeros(value_dim);
        }
        let scale = 1.0 / (self.len_of(query) as f64).sqrt();
        let scores: Vec<Var> = keys
            .iter()
            .map(|&k| {
                let d = self.dot(query, k);
                self.scale(d, scale)
            })
            .collect();
        let scores = self.concat(&scores);
        let weights = self.softmax(scores);
        self.weighted_sum(weights, values)
    }

    /// Reverse sweep from the one-element node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.len_of(loss), 1, "backward needs a scalar loss");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];
        let mut out = Gradients {
            slots: vec![None; self.params.len()],
        };

        fn acc(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
            let g = &mut grads[v.0];
            if g.is_empty() {
                *g = vec![0.0; len];
            }
            g
        }

        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = out.slots[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
                    for (s, x) in slot.iter_mut().zip(&g) {
                        *s += x;
                    }
                }
                Op::MatVec(w, x) => {
                    let (rows, cols) = (self.nodes[w.0].rows, self.nodes[w.0].cols);
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    let gw = acc(&mut grads, *w, rows * cols);
                    for r in 0..rows {
                        if g[r] != 0.0 {
                            for (slot, &xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *slot += g[r] * xc;
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, cols);
                    for r in 0..rows {
                        if g[r] != 0.0 {
                            for (slot, &wc) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                *slot += g[r] * wc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for ((s, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                        *s += gi * bi;
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for ((s, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                        *s += gi * ai;
                    }
                }
                Op::Scale(a, c) => add_into(acc(&mut grads, *a, g.len()), &g, *c),
                Op::Offset(a) => add_into(acc(&mut grads, *a, g.len()), &g, 1.0),
                Op::ScalarMul(s, v) => {
                    let k = self.scalar(*s);
                    let vv = self.value(*v);
                    let ds: f64 = g.iter().zip(vv).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *s, 1)[0] += ds;
                    add_into(acc(&mut grads, *v, g.len()), &g, k);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    add_into(acc(&mut grads, *a, av.len()), bv, g[0]);
                    add_into(acc(&mut grads, *b, bv.len()), av, g[0]);
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((s, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *s += gi * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((s, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *s += gi * y * (1.0 - y);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.len_of(p);
                        add_into(acc(&mut grads, p, len), &g[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        add_into(acc(&mut grads, p, g.len()), &g, 1.0);
                    }
                }
                Op::Row(table, r) => {
                    let n = &self.nodes[table.0];
                    let (rows, cols) = (n.rows, n.cols);
                    let gt = acc(&mut grads, *table, rows * cols);
                    add_into(&mut gt[r * cols..(r + 1) * cols], &g, 1.0);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((s, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *s += yi * (gi - gy);
                    }
                }
                Op::WeightedSum(weights, values) => {
                    let w = self.value(*weights).to_vec();
                    let mut gw = vec![0.0; w.len()];
                    for (j, &v) in values.iter().enumerate() {
                        let vv = self.value(v);
                        gw[j] = g.iter().zip(vv).map(|(a, b)| a * b).sum();
                        add_into(acc(&mut grads, v, g.len()), &g, w[j]);
                    }
                    add_into(acc(&mut grads, *weights, w.len()), &gw, 1.0);
                }
                Op::SoftmaxCrossEntropy(logits, target) => {
                    let mut p = softmax(self.value(*logits));
                    p[*target] -= 1.0;
                    add_into(acc(&mut grads, *logits, p.len()), &p, g[0]);
                }
                Op::BinaryCrossEntropy(logits, targets) => {
                    let l = self.value(*logits);
                    let k = l.len() as f64;
                    let d: Vec<f64> = l.iter().zip(targets).map(|(&z, &y)| (sigmoid(z) - y) / k).collect();
                    add_into(acc(&mut grads, *logits, d.len()), &d, g[0]);
                }
            }
        }
        out
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}
