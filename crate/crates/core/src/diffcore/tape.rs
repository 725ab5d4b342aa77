//! Reverse-mode differentiation over a recorded op list.
//!
//! Every op evaluates eagerly and appends a node holding its output plus
//! whatever the backward rule needs. [`Tape::backward`] walks the nodes in
//! reverse and accumulates one gradient per registered parameter.

use std::collections::HashMap;

use crate::diffcore::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Act(Var, Activation),
    SoftmaxRows(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<S> },
    Mean(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    SliceCols { a: Var, start: usize },
    ConvexMix { alpha: Var, t: Var, i: Var },
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    GatherRows { table: Var, ids: Vec<usize> },
    StackRows(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients keyed by parameter, one per parameter registered on the tape.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: HashMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }
}

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

fn check_same<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) {
    let m = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut z = S::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o = *o / z;
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Registers a parameter; gradients for it appear in [`Tape::backward`]'s result.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    /// `x·Wᵀ + b` for `x` of shape `[n]` or `[batch, n]`, `W` of shape `[m, n]`, `b` of shape `[m]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, n) = match wv.shape() {
            [m, n] => (*m, *n),
            s => return Err(Error::dim(format!("affine weight must be 2-D, got {s:?}"))),
        };
        let (rows, xn) = xv.rows_cols();
        if xn != n || xv.shape().len() > 2 {
            return Err(Error::dim(format!(
                "affine input {:?} does not match weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        if bv.shape() != [m] {
            return Err(Error::dim(format!(
                "affine bias {:?} does not match output width {m}",
                bv.shape()
            )));
        }
        let mut out = xv.matmul(wv, true)?;
        for r in 0..rows {
            for (o, &bb) in out.data_mut()[r * m..(r + 1) * m].iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        if xv.shape().len() == 1 {
            out = out.reshape(&[m])?;
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, Op::Affine { x, w, b }, rg))
    }

    /// `a·b`, or `a·bᵀ` when `transpose_b`.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b), transpose_b)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b, transpose_b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let out = match kind {
            Activation::Relu => self.value(a).map(|x| x.max(S::zero())),
            Activation::Sigmoid => self.value(a).map(sigmoid),
        };
        let rg = self.rg(&[a]);
        self.push(out, Op::Act(a, kind), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = v.rows_cols();
        let mut out = Tensor::zeros(v.shape());
        for i in 0..r {
            softmax_row(&v.data()[i * c..(i + 1) * c], &mut out.data_mut()[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Per-row `−log softmax(logits)[label]`; returns shape `[rows]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (rows, k) = v.rows_cols();
        if k < 2 {
            return Err(Error::dim(format!("cross entropy needs at least 2 classes, got {k}")));
        }
        if labels.len() != rows {
            return Err(Error::dim(format!(
                "{} labels for {rows} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index {
                index: bad,
                classes: k,
            });
        }
        let mut probs = vec![S::zero(); rows * k];
        let mut losses = Vec::with_capacity(rows);
        for (i, &y) in labels.iter().enumerate() {
            let row = &v.data()[i * k..(i + 1) * k];
            let m = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let z: S = row.iter().map(|&x| (x - m).exp()).sum();
            losses.push(m + z.ln() - row[y]);
            softmax_row(row, &mut probs[i * k..(i + 1) * k]);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::vector(losses),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / S::of(v.len() as f64));
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// `[a | b]` along columns; rank-1 inputs are treated as single rows.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let ((ra, ca), (rb, cb)) = (va.rows_cols(), vb.rows_cols());
        if ra != rb {
            return Err(Error::dim(format!("concat rows {ra} vs {rb}")));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let shape = if va.shape().len() == 1 && vb.shape().len() == 1 {
            vec![ca + cb]
        } else {
            vec![ra, ca + cb]
        };
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = v.rows_cols();
        if len == 0 || start + len > c {
            return Err(Error::dim(format!("column slice {start}..{} of {c}", start + len)));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols { a, start }, rg))
    }

    /// Row-wise convex combination `alpha_r·t_r + (1 − alpha_r)·i_r`.
    ///
    /// `alpha` holds one weight per row of `t` and `i`.
    pub fn convex_mix(&mut self, alpha: Var, t: Var, i: Var) -> Result<Var> {
        check_same(self.value(t), self.value(i), "convex_mix")?;
        let (rows, cols) = self.value(t).rows_cols();
        let av = self.value(alpha);
        if av.len() != rows {
            return Err(Error::dim(format!(
                "convex_mix needs {rows} weights, got {}",
                av.len()
            )));
        }
        let (tv, iv) = (self.value(t), self.value(i));
        let mut out = Tensor::zeros(tv.shape());
        for r in 0..rows {
            let a = av.data()[r];
            let one_minus = S::one() - a;
            for c in 0..cols {
                let k = r * cols + c;
                out.data_mut()[k] = mix_within(a, one_minus, tv.data()[k], iv.data()[k]);
            }
        }
        let rg = self.rg(&[alpha, t, i]);
        Ok(self.push(out, Op::ConvexMix { alpha, t, i }, rg))
    }

    /// 3×3 convolution, stride 1, zero "same" padding.
    ///
    /// `x`: `[batch, c_in, h, w]`, `w`: `[c_out, c_in, 3, 3]`, `b`: `[c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [n, ci, h, wd] = *xv.shape() else {
            return Err(Error::dim(format!("conv input must be 4-D, got {:?}", xv.shape())));
        };
        let [co, wci, 3, 3] = *wv.shape() else {
            return Err(Error::dim(format!("conv kernel must be [c_out, c_in, 3, 3], got {:?}", wv.shape())));
        };
        if wci != ci || bv.shape() != [co] {
            return Err(Error::dim(format!(
                "conv kernel {:?} / bias {:?} incompatible with input {:?}",
                wv.shape(),
                bv.shape(),
                xv.shape()
            )));
        }
        let (xd, wdta, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![S::zero(); n * co * h * wd];
        for s in 0..n {
            for o in 0..co {
                let plane = &mut out[(s * co + o) * h * wd..(s * co + o + 1) * h * wd];
                plane.iter_mut().for_each(|p| *p = bd[o]);
                for c in 0..ci {
                    let inp = &xd[(s * ci + c) * h * wd..(s * ci + c + 1) * h * wd];
                    let k = &wdta[(o * ci + c) * 9..(o * ci + c + 1) * 9];
                    for y in 0..h {
                        for xx in 0..wd {
                            let mut acc = S::zero();
                            for ky in 0..3 {
                                let iy = y as isize + ky as isize - 1;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..3 {
                                    let ix = xx as isize + kx as isize - 1;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += k[ky * 3 + kx] * inp[iy as usize * wd + ix as usize];
                                }
                            }
                            plane[y * wd + xx] += acc;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, co, h, wd], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, Op::Conv2d { x, w, b }, rg))
    }

    /// 2×2 max pooling, stride 2 (odd trailing rows/cols are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = *xv.shape() else {
            return Err(Error::dim(format!("pool input must be 4-D, got {:?}", xv.shape())));
        };
        if h < 2 || w < 2 {
            return Err(Error::dim(format!("spatial size {h}×{w} too small for 2×2 pooling")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let d = xv.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Mean over spatial positions: `[batch, c, h, w]` → `[batch, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = *xv.shape() else {
            return Err(Error::dim(format!("pool input must be 4-D, got {:?}", xv.shape())));
        };
        let hw = S::of((h * w) as f64);
        let out: Vec<S> = xv
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<S>() / hw)
            .collect();
        let out = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Selects rows of a `[vocab, d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = tv.rows_cols();
        if ids.is_empty() {
            return Err(Error::dim("gather with no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary { id, vocab: v });
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(out, Op::GatherRows { table, ids: ids.to_vec() }, rg))
    }

    /// Stacks equally sized vectors (or single rows) into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(first) = rows.first() else {
            return Err(Error::dim("stack of zero rows"));
        };
        let width = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            let v = self.value(r);
            if v.len() != width {
                return Err(Error::dim(format!("stack row widths {width} vs {}", v.len())));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows.len(), width], data)?;
        let rg = self.rg(rows);
        Ok(self.push(out, Op::StackRows(rows.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Accumulates gradients of a single-element `loss` into every registered parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));
        let mut out: HashMap<ParamId, Tensor<S>> = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(id, g);
                    }
                }
                continue;
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, m) = g.rows_cols();
                let g2 = g.clone().reshape(&[rows, m])?;
                if self.wants(*x) {
                    let gx = g2.matmul(wv, false)?.reshape(xv.shape())?;
                    Self::acc(grads, *x, gx);
                }
                if self.wants(*w) {
                    let (xr, xc) = xv.rows_cols();
                    let x2 = xv.clone().reshape(&[xr, xc])?;
                    Self::acc(grads, *w, g2.tmatmul(&x2)?);
                }
                if self.wants(*b) {
                    let mut gb = vec![S::zero(); m];
                    for r in 0..rows {
                        for (acc, &v) in gb.iter_mut().zip(g2.row(r)) {
                            *acc += v;
                        }
                    }
                    Self::acc(grads, *b, Tensor::vector(gb));
                }
            }
            Op::MatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    // dA = G·Bᵀ (or G·B when the forward used Bᵀ)
                    let ga = g.matmul(bv, !*transpose_b)?.reshape(av.shape())?;
                    Self::acc(grads, *a, ga);
                }
                if self.wants(*b) {
                    let (ar, ac) = av.rows_cols();
                    let a2 = av.clone().reshape(&[ar, ac])?;
                    let gb = if *transpose_b {
                        g.tmatmul(&a2)?
                    } else {
                        a2.tmatmul(g)?
                    };
                    Self::acc(grads, *b, gb.reshape(bv.shape())?);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    Self::acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    Self::acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    Self::acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    Self::acc(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    Self::acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.wants(*b) {
                    Self::acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                Self::acc(grads, *a, g.map(|x| x * c));
            }
            Op::Act(a, kind) => {
                let ga = match kind {
                    Activation::Relu => g.zip_map(self.value(*a), |gg, x| {
                        if x > S::zero() {
                            gg
                        } else {
                            S::zero()
                        }
                    })?,
                    Activation::Sigmoid => {
                        g.zip_map(&node.value, |gg, s| gg * s * (S::one() - s))?
                    }
                };
                Self::acc(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = node.value.rows_cols();
                let mut ga = Tensor::zeros(node.value.shape());
                for i in 0..r {
                    let s = &node.value.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot: S = s.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..c {
                        ga.data_mut()[i * c + j] = s[j] * (gr[j] - dot);
                    }
                }
                Self::acc(grads, *a, ga);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let lv = self.value(*logits);
                let (_, k) = lv.rows_cols();
                let mut gl = Tensor::zeros(lv.shape());
                for (i, &y) in labels.iter().enumerate() {
                    let up = g.data()[i];
                    for j in 0..k {
                        let onehot = if j == y { S::one() } else { S::zero() };
                        gl.data_mut()[i * k + j] = up * (probs[i * k + j] - onehot);
                    }
                }
                Self::acc(grads, *logits, gl);
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let scale = g.data()[0] / S::of(av.len() as f64);
                Self::acc(grads, *a, Tensor::full(av.shape(), scale));
            }
            Op::Sum(a) => {
                Self::acc(grads, *a, Tensor::full(self.value(*a).shape(), g.data()[0]));
            }
            Op::ConcatCols(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ((r, ca), (_, cb)) = (va.rows_cols(), vb.rows_cols());
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * cb);
                for i in 0..r {
                    let row = &g.data()[i * (ca + cb)..(i + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                if self.wants(*a) {
                    Self::acc(grads, *a, Tensor::new(va.shape().to_vec(), ga)?);
                }
                if self.wants(*b) {
                    Self::acc(grads, *b, Tensor::new(vb.shape().to_vec(), gb)?);
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let (r, c) = av.rows_cols();
                let (_, len) = g.rows_cols();
                let mut ga = Tensor::zeros(av.shape());
                for i in 0..r {
                    ga.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                Self::acc(grads, *a, ga);
            }
            Op::ConvexMix { alpha, t, i } => {
                let (tv, iv, av) = (self.value(*t), self.value(*i), self.value(*alpha));
                let (rows, cols) = tv.rows_cols();
                let mut gt = Tensor::zeros(tv.shape());
                let mut gi = Tensor::zeros(iv.shape());
                let mut ga = Tensor::zeros(av.shape());
                for r in 0..rows {
                    let a = av.data()[r];
                    let mut da = S::zero();
                    for c in 0..cols {
                        let k = r * cols + c;
                        let gg = g.data()[k];
                        gt.data_mut()[k] = a * gg;
                        gi.data_mut()[k] = (S::one() - a) * gg;
                        da += gg * (tv.data()[k] - iv.data()[k]);
                    }
                    ga.data_mut()[r] = da;
                }
                if self.wants(*t) {
                    Self::acc(grads, *t, gt);
                }
                if self.wants(*i) {
                    Self::acc(grads, *i, gi);
                }
                if self.wants(*alpha) {
                    Self::acc(grads, *alpha, ga);
                }
            }
            Op::Conv2d { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [n, ci, h, wd] = *xv.shape() else { unreachable!() };
                let co = wv.shape()[0];
                let (xd, wdta, gd) = (xv.data(), wv.data(), g.data());
                let mut gx = vec![S::zero(); xd.len()];
                let mut gw = vec![S::zero(); wdta.len()];
                let mut gb = vec![S::zero(); co];
                for s in 0..n {
                    for o in 0..co {
                        let gplane = &gd[(s * co + o) * h * wd..(s * co + o + 1) * h * wd];
                        gb[o] += gplane.iter().copied().sum::<S>();
                        for c in 0..ci {
                            let in_off = (s * ci + c) * h * wd;
                            let k_off = (o * ci + c) * 9;
                            for y in 0..h {
                                for xx in 0..wd {
                                    let gg = gplane[y * wd + xx];
                                    if gg == S::zero() {
                                        continue;
                                    }
                                    for ky in 0..3 {
                                        let iy = y as isize + ky as isize - 1;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..3 {
                                            let ix = xx as isize + kx as isize - 1;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            let p = in_off + iy as usize * wd + ix as usize;
                                            gw[k_off + ky * 3 + kx] += gg * xd[p];
                                            gx[p] += gg * wdta[k_off + ky * 3 + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    Self::acc(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                }
                if self.wants(*w) {
                    Self::acc(grads, *w, Tensor::new(wv.shape().to_vec(), gw)?);
                }
                if self.wants(*b) {
                    Self::acc(grads, *b, Tensor::vector(gb));
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.shape());
                for (&src, &gg) in argmax.iter().zip(g.data()) {
                    gx.data_mut()[src] += gg;
                }
                Self::acc(grads, *x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.value(*x);
                let [_, _, h, w] = *xv.shape() else { unreachable!() };
                let inv = S::one() / S::of((h * w) as f64);
                let mut gx = Vec::with_capacity(xv.len());
                for &gg in g.data() {
                    gx.extend(std::iter::repeat_n(gg * inv, h * w));
                }
                Self::acc(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let (_, d) = tv.rows_cols();
                let mut gt = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt.data_mut()[id * d + j] += g.data()[r * d + j];
                    }
                }
                Self::acc(grads, *table, gt);
            }
            Op::StackRows(rows) => {
                let width = g.rows_cols().1;
                for (r, &v) in rows.iter().enumerate() {
                    if self.wants(v) {
                        let part = g.data()[r * width..(r + 1) * width].to_vec();
                        let shape = self.value(v).shape().to_vec();
                        Self::acc(grads, v, Tensor::new(shape, part)?);
                    }
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                Self::acc(grads, *a, g.clone().reshape(&shape)?);
            }
        }
        Ok(())
    }
}

/// `a·t + one_minus·i`, pulled back onto the segment `[min(t, i), max(t, i)]`
/// when rounding lands it an ulp outside. NaN passes through.
pub fn mix_within<S: Scalar>(a: S, one_minus: S, t: S, i: S) -> S {
    let v = a * t + one_minus * i;
    let (lo, hi) = if t < i { (t, i) } else { (i, t) };
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::params::Group;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn affine_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1., 2.]));
        let w = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = tape.constant(t(&[2], &[0., 0.]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2.]);
    }

    #[test]
    fn affine_direct_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1., 1.]));
        let w = tape.constant(t(&[2, 2], &[1., 1., 0., 1.]));
        let b = tape.constant(t(&[2], &[1., 0.]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 1.]);
    }

    #[test]
    fn affine_bias_gradient_is_ones() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Group::Projection, t(&[3, 2], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6])).unwrap();
        let b = store.add("b", Group::Projection, t(&[3], &[0.0; 3])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.7, -1.1]));
        let (wv, bv) = (tape.param(&store, w), tape.param(&store, b));
        let y = tape.affine(x, wv, bv).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[1., 1., 1.]);
        // dW = 1 ⊗ x
        assert_eq!(g.get(w).unwrap().data(), &[0.7, -1.1, 0.7, -1.1, 0.7, -1.1]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[1., 2., 3.]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.affine(x, w, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn activations() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[0.0, 3f64.ln(), -2.0, 3.0]));
        let s = tape.sigmoid(x);
        let r = tape.relu(x);
        let sv = tape.value(s).data();
        assert_eq!(sv[0], 0.5);
        assert!((sv[1] - 0.75).abs() < 1e-15);
        assert_eq!(&tape.value(r).data()[2..], &[0.0, 3.0]);
    }

    #[test]
    fn sigmoid_stays_in_open_interval_for_moderate_inputs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[-30.0, -5.0, 5.0, 30.0]));
        let s = tape.sigmoid(x);
        assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(t(&[2, 3], &[0.5, 0.5, 0.5, 30.0, 0.0, 0.0]));
        let ce = tape.cross_entropy(z, &[1, 0]).unwrap();
        let v = tape.value(ce).data();
        assert!((v[0] - 3f64.ln()).abs() < 1e-15);
        assert!(v[1] < 1e-9 && v[1] >= 0.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(t(&[3], &[0., 0., 0.]));
        assert!(matches!(
            tape.cross_entropy(z, &[3]),
            Err(Error::Index { index: 3, classes: 3 })
        ));
    }

    #[test]
    fn cross_entropy_survives_huge_logits() {
        let mut tape = Tape::<f32>::new();
        let z = tape.constant(Tensor::from_f64(&[3], &[1e4, -1e4, 0.0]).unwrap());
        let ce = tape.cross_entropy(z, &[1]).unwrap();
        assert!(tape.value(ce).is_finite());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1., 2.]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unused_registered_param_gets_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", Group::Classifier, t(&[2], &[1., 2.])).unwrap();
        let mut tape = Tape::new();
        let _ = tape.param(&store, p);
        let c = tape.constant(Tensor::scalar(4.0));
        let g = tape.backward(c).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(p).unwrap().data(), &[0., 0.]);
    }

    #[test]
    fn conv_of_constant_image_interior() {
        // interior pre-activation = (sum of kernel) * c + bias
        let mut tape = Tape::<f64>::new();
        let c = 1.5;
        let img = tape.constant(Tensor::full(&[1, 1, 5, 5], c));
        let kernel: Vec<f64> = (1..=9).map(|i| i as f64 * 0.1).collect();
        let s: f64 = kernel.iter().sum();
        let w = tape.constant(t(&[1, 1, 3, 3], &kernel));
        let b = tape.constant(t(&[1], &[0.25]));
        let y = tape.conv2d(img, w, b).unwrap();
        let v = tape.value(y);
        assert!((v.data()[2 * 5 + 2] - (s * c + 0.25)).abs() < 1e-12);
        // corner sees only the 4 kernel taps 5,6,8,9
        let corner = (0.5 + 0.6 + 0.8 + 0.9) * c + 0.25;
        assert!((v.data()[0] - corner).abs() < 1e-12);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 4], &[1., 5., 2., 0., 3., 4., 9., 1.]));
        let p = tape.max_pool2(x).unwrap();
        assert_eq!(tape.value(p).data(), &[5., 9.]);
    }
}
