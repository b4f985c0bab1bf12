//! A small reverse-mode tape over `f64` vectors.
//!
//! Parameters live in a [`ParamStore`] as dense row-major matrices. A
//! [`Graph`] borrows one store, records operations as it evaluates them and
//! accumulates parameter gradients into a [`Gradients`] buffer on
//! [`Graph::backward`]. Ops are coarse (affine maps, a fused LSTM cell,
//! batched dot products) because the models here are tiny and node overhead
//! dominates otherwise.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp, ln, sigmoid, sqrt, tanh};

/// Index of a parameter inside its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Named dense parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a `rows x cols` parameter drawn from `N(0, std^2)`.
    pub fn add_gaussian<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..rows * cols).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; rows * cols]
        };
        self.push(name, rows, cols, data)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.push(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn push(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert_eq!(data.len(), rows * cols, "parameter {name} has wrong size");
        self.params.push(Param {
            name: String::from(name),
            rows,
            cols,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Sets every entry to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "parameter count {} does not match {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols {
                return Err(Error::InvalidConfig(alloc::format!(
                    "parameter {} ({}x{}) does not match {} ({}x{})",
                    b.name,
                    b.rows,
                    b.cols,
                    a.name,
                    a.rows,
                    a.cols
                )));
            }
        }
        Ok(())
    }
}

/// Dense gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Self {
            data: store.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn clear(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.data.iter().flatten().map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Row(ParamId, usize),
    Linear {
        w: ParamId,
        row0: usize,
        rows: usize,
        b: Option<(ParamId, usize)>,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Dot(Var, Var),
    DotMany(Var, Vec<Var>),
    DotRows(Var, ParamId, usize, usize),
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
    LogSoftmax(Var),
    Softmax(Var),
    Pick(Var, usize),
    LogSumExp(Var),
    Stack(Vec<Var>),
    Scatter(Var, Vec<usize>),
    Lstm { gates: Var, c: Var },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// A tape of operations over one parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
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

    #[inline]
    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant; no gradient flows out of it.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The whole parameter, flattened row-major.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).data.clone();
        self.push(value, Op::Param(id))
    }

    /// One row of a matrix parameter, e.g. an embedding lookup.
    pub fn row(&mut self, id: ParamId, r: usize) -> Var {
        let value = self.params.get(id).row(r).to_vec();
        self.push(value, Op::Row(id, r))
    }

    /// `W x + b` with the full matrix.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let rows = self.params.get(w).rows;
        self.linear_block(w, 0, rows, b.map(|b| (b, 0)), x)
    }

    /// `W[row0..row0+rows] x + b[off..off+rows]`.
    pub fn linear_block(
        &mut self,
        w: ParamId,
        row0: usize,
        rows: usize,
        b: Option<(ParamId, usize)>,
        x: Var,
    ) -> Var {
        let wp = self.params.get(w);
        let xv = &self.nodes[x.0].value;
        assert_eq!(wp.cols, xv.len(), "linear {}: input size", wp.name);
        let mut out = match b {
            Some((b, off)) => self.params.get(b).data[off..off + rows].to_vec(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = wp.row(row0 + r);
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(
            out,
            Op::Linear {
                w,
                row0,
                rows,
                b,
                x,
            },
        )
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "elementwise size mismatch");
        let value = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Scales vector `v` by the scalar node `s`.
    pub fn mul_scalar(&mut self, s: Var, v: Var) -> Var {
        let k = self.scalar(s);
        let value = self.nodes[v.0].value.iter().map(|x| k * x).collect();
        self.push(value, Op::MulScalar(s, v))
    }

    /// `k * a + c` elementwise.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| k * x + c).collect();
        self.push(value, Op::Affine(a, k))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(value, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, ln, Op::Log(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice(a, start))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "dot size mismatch");
        let v = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        self.push(vec![v], Op::Dot(a, b))
    }

    /// `[q . k_0, q . k_1, ...]`.
    pub fn dot_many(&mut self, q: Var, keys: &[Var]) -> Var {
        let qv = &self.nodes[q.0].value;
        let value = keys
            .iter()
            .map(|k| {
                let kv = &self.nodes[k.0].value;
                qv.iter().zip(kv).map(|(x, y)| x * y).sum()
            })
            .collect();
        self.push(value, Op::DotMany(q, keys.to_vec()))
    }

    /// `[q . W_r for r in row0..row0+rows]`.
    pub fn dot_rows(&mut self, q: Var, w: ParamId, row0: usize, rows: usize) -> Var {
        let wp = self.params.get(w);
        let qv = &self.nodes[q.0].value;
        let value = (row0..row0 + rows)
            .map(|r| wp.row(r).iter().zip(qv).map(|(x, y)| x * y).sum())
            .collect();
        self.push(value, Op::DotRows(q, w, row0, rows))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().sum();
        self.push(vec![v], Op::Sum(a))
    }

    /// `sum_k w_k * s_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|(s, w)| w * self.scalar(*s)).sum();
        self.push(vec![v], Op::WeightedSum(terms.to_vec()))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = crate::math::log_softmax(&self.nodes[a.0].value);
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = crate::math::softmax(&self.nodes[a.0].value);
        self.push(value, Op::Softmax(a))
    }

    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let v = self.nodes[a.0].value[i];
        self.push(vec![v], Op::Pick(a, i))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let v = crate::math::log_sum_exp(&self.nodes[a.0].value);
        self.push(vec![v], Op::LogSumExp(a))
    }

    /// Concatenates scalar nodes into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let value = scalars.iter().map(|s| self.scalar(*s)).collect();
        self.push(value, Op::Stack(scalars.to_vec()))
    }

    /// `out[idx[k]] += a[k]` into a zero vector of length `size`.
    pub fn scatter(&mut self, a: Var, idx: &[usize], size: usize) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.len(), idx.len(), "scatter index count");
        let mut value = vec![0.0; size];
        for (k, &i) in idx.iter().enumerate() {
            value[i] += av[k];
        }
        self.push(value, Op::Scatter(a, idx.to_vec()))
    }

    /// Fused LSTM cell. `gates` holds pre-activations `[i; f; g; o]` of
    /// width `4H`; returns `[h'; c']`.
    pub fn lstm_cell(&mut self, gates: Var, c: Var) -> Var {
        let gv = &self.nodes[gates.0].value;
        let cv = &self.nodes[c.0].value;
        let h = cv.len();
        assert_eq!(gv.len(), 4 * h, "lstm gate width");
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(gv[k]);
            let f = sigmoid(gv[h + k]);
            let g = tanh(gv[2 * h + k]);
            let o = sigmoid(gv[3 * h + k]);
            let cn = f * cv[k] + i * g;
            out[h + k] = cn;
            out[k] = o * tanh(cn);
        }
        self.push(out, Op::Lstm { gates, c })
    }

    /// Backpropagates from the scalar `loss` with seed 1.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        self.backward_seeded(&[(loss, vec![1.0])], grads);
    }

    /// Backpropagates from several nodes with explicit upstream gradients.
    pub fn backward_seeded(&self, seeds: &[(Var, Vec<f64>)], grads: &mut Gradients) {
        let Some(last) = seeds.iter().map(|(v, _)| v.0).max() else {
            return;
        };
        let mut adj: Vec<Vec<f64>> = (0..=last).map(|_| Vec::new()).collect();
        for (v, g) in seeds {
            assert_eq!(g.len(), self.nodes[v.0].value.len(), "seed size");
            accumulate(&mut adj[v.0], g);
        }
        for n in (0..=last).rev() {
            if adj[n].is_empty() {
                continue;
            }
            let g = core::mem::take(&mut adj[n]);
            self.backprop_node(n, &g, &mut adj, grads);
        }
    }

    fn backprop_node(&self, n: usize, g: &[f64], adj: &mut [Vec<f64>], grads: &mut Gradients) {
        let node = &self.nodes[n];
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => accumulate(&mut grads.data[id.0], g),
            Op::Row(id, r) => {
                let cols = self.params.get(*id).cols;
                let dst = &mut grads.data[id.0][r * cols..(r + 1) * cols];
                dst.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::Linear {
                w,
                row0,
                rows,
                b,
                x,
            } => {
                let wp = self.params.get(*w);
                let xv = val(*x);
                let cols = wp.cols;
                let mut dx = vec![0.0; cols];
                {
                    let gw = &mut grads.data[w.0];
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let base = (row0 + r) * cols;
                        let wrow = &wp.data[base..base + cols];
                        let grow = &mut gw[base..base + cols];
                        for k in 0..cols {
                            grow[k] += gr * xv[k];
                            dx[k] += gr * wrow[k];
                        }
                    }
                }
                if let Some((b, off)) = b {
                    let gb = &mut grads.data[b.0][*off..off + rows];
                    gb.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                add_to(adj, *x, &dx);
            }
            Op::Add(a, b) => {
                add_to(adj, *a, g);
                add_to(adj, *b, g);
            }
            Op::Sub(a, b) => {
                add_to(adj, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                add_to(adj, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                add_to(adj, *a, &da);
                add_to(adj, *b, &db);
            }
            Op::MulScalar(s, v) => {
                let k = val(*s)[0];
                let ds: f64 = g.iter().zip(val(*v)).map(|(x, y)| x * y).sum();
                let dv: Vec<f64> = g.iter().map(|x| k * x).collect();
                add_to(adj, *s, &[ds]);
                add_to(adj, *v, &dv);
            }
            Op::Affine(a, k) => {
                let da: Vec<f64> = g.iter().map(|x| k * x).collect();
                add_to(adj, *a, &da);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = g.iter().zip(&node.value).map(|(x, y)| x * (1.0 - y * y)).collect();
                add_to(adj, *a, &da);
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = g.iter().zip(&node.value).map(|(x, y)| x * y * (1.0 - y)).collect();
                add_to(adj, *a, &da);
            }
            Op::Exp(a) => {
                let da: Vec<f64> = g.iter().zip(&node.value).map(|(x, y)| x * y).collect();
                add_to(adj, *a, &da);
            }
            Op::Log(a) => {
                let da: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x / y).collect();
                add_to(adj, *a, &da);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    add_to(adj, *p, &g[off..off + len]);
                    off += len;
                }
            }
            Op::Slice(a, start) => {
                let len = val(*a).len();
                let dst = slot(adj, *a, len);
                dst[*start..start + g.len()].iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            Op::Dot(a, b) => {
                let da: Vec<f64> = val(*b).iter().map(|y| g[0] * y).collect();
                let db: Vec<f64> = val(*a).iter().map(|y| g[0] * y).collect();
                add_to(adj, *a, &da);
                add_to(adj, *b, &db);
            }
            Op::DotMany(q, keys) => {
                let qv = val(*q);
                let mut dq = vec![0.0; qv.len()];
                for (k, key) in keys.iter().enumerate() {
                    if g[k] == 0.0 {
                        continue;
                    }
                    let kv = val(*key);
                    let dk: Vec<f64> = qv.iter().map(|x| g[k] * x).collect();
                    dq.iter_mut().zip(kv).for_each(|(a, b)| *a += g[k] * b);
                    add_to(adj, *key, &dk);
                }
                add_to(adj, *q, &dq);
            }
            Op::DotRows(q, w, row0, rows) => {
                let wp = self.params.get(*w);
                let qv = val(*q);
                let cols = wp.cols;
                let mut dq = vec![0.0; cols];
                let gw = &mut grads.data[w.0];
                for r in 0..*rows {
                    let gr = g[r];
                    if gr == 0.0 {
                        continue;
                    }
                    let base = (row0 + r) * cols;
                    for k in 0..cols {
                        dq[k] += gr * wp.data[base + k];
                        gw[base + k] += gr * qv[k];
                    }
                }
                add_to(adj, *q, &dq);
            }
            Op::Sum(a) => {
                let len = val(*a).len();
                add_to(adj, *a, &vec![g[0]; len]);
            }
            Op::WeightedSum(terms) => {
                for (s, w) in terms {
                    add_to(adj, *s, &[w * g[0]]);
                }
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                let da: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(x, lp)| x - exp(*lp) * total)
                    .collect();
                add_to(adj, *a, &da);
            }
            Op::Softmax(a) => {
                let inner: f64 = g.iter().zip(&node.value).map(|(x, p)| x * p).sum();
                let da: Vec<f64> = g.iter().zip(&node.value).map(|(x, p)| p * (x - inner)).collect();
                add_to(adj, *a, &da);
            }
            Op::Pick(a, i) => {
                let len = val(*a).len();
                slot(adj, *a, len)[*i] += g[0];
            }
            Op::LogSumExp(a) => {
                let m = node.value[0];
                let da: Vec<f64> = val(*a).iter().map(|x| g[0] * exp(x - m)).collect();
                add_to(adj, *a, &da);
            }
            Op::Stack(scalars) => {
                for (k, s) in scalars.iter().enumerate() {
                    add_to(adj, *s, &[g[k]]);
                }
            }
            Op::Scatter(a, idx) => {
                let da: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
                add_to(adj, *a, &da);
            }
            Op::Lstm { gates, c } => {
                let gv = val(*gates);
                let cv = val(*c);
                let h = cv.len();
                let mut dg = vec![0.0; 4 * h];
                let mut dc = vec![0.0; h];
                for k in 0..h {
                    let i = sigmoid(gv[k]);
                    let f = sigmoid(gv[h + k]);
                    let gg = tanh(gv[2 * h + k]);
                    let o = sigmoid(gv[3 * h + k]);
                    let tc = tanh(node.value[h + k]);
                    let dh = g[k];
                    let dcn = g[h + k] + dh * o * (1.0 - tc * tc);
                    dg[3 * h + k] = dh * tc * o * (1.0 - o);
                    dg[k] = dcn * gg * i * (1.0 - i);
                    dg[h + k] = dcn * cv[k] * f * (1.0 - f);
                    dg[2 * h + k] = dcn * i * (1.0 - gg * gg);
                    dc[k] = dcn * f;
                }
                add_to(adj, *gates, &dg);
                add_to(adj, *c, &dc);
            }
        }
    }
}

#[inline]
fn accumulate(dst: &mut Vec<f64>, src: &[f64]) {
    if dst.is_empty() {
        dst.extend_from_slice(src);
    } else {
        dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
    }
}

#[inline]
fn add_to(adj: &mut [Vec<f64>], v: Var, g: &[f64]) {
    accumulate(&mut adj[v.0], g);
}

#[inline]
fn slot(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
    let s = &mut adj[v.0];
    if s.is_empty() {
        s.resize(len, 0.0);
    }
    s
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - crate::math::powf(self.beta1, t);
        let c2 = 1.0 - crate::math::powf(self.beta2, t);
        for (k, p) in store.params.iter_mut().enumerate() {
            let g = &grads.data[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for j in 0..p.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p.data[j] -= self.lr * mh / (sqrt(vh) + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_forward_and_backward() {
        let mut store = ParamStore::new();
        let w = store.push("w", 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = store.push("b", 2, 1, vec![0.5, -0.5]);
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, -1.0]);
        let y = g.linear(w, Some(b), x);
        assert_eq!(g.value(y), &[-0.5, -1.5]);
        let s = g.sum(y);
        let mut grads = Gradients::zeros(&store);
        g.backward(s, &mut grads);
        assert_eq!(grads.get(w), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(grads.get(b), &[1.0, 1.0]);
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut store = ParamStore::new();
        store.push("a", 1, 2, vec![0.0, 0.0]);
        let mut grads = Gradients::zeros(&store);
        grads.data[0] = vec![3.0, 4.0];
        assert_eq!(grads.clip_norm(1.0), 5.0);
        assert!((grads.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = store.add_gaussian("p", 1, 1, 0.0, &mut rng);
        let mut opt = Adam::new(&store, 0.1);
        let mut grads = Gradients::zeros(&store);
        grads.data[0][0] = 2.0;
        opt.update(&mut store, &grads);
        assert!((store.get(p).data[0] + 0.1).abs() < 1e-6);
    }
}
