//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! take and return [`Var`] handles; [`Tape::backward`] walks the records in
//! reverse and accumulates gradients for every node that depends on a
//! parameter. Broadcasting is limited to trailing-axis alignment: the right
//! operand's shape must equal a suffix of the left operand's shape.
//!
//! Row-wise operations (softmax, layer norm, concatenation along columns)
//! treat the last axis as the row and all leading axes as the row index.

use std::ops::Range;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all leading axes.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
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
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    Gelu(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    Slice(Var, Range<usize>, Range<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `[m x k]` and `op(b)` is `[k x n]`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Strides of op(a) as [m x k] and op(b) as [k x n].
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the
    // strides above address only those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn suffix_broadcastable(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(a).data, false, &self.value(b).data, false, &mut out, 0.0);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !suffix_broadcastable(&ta.shape, &tb.shape) {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} onto {:?}",
                tb.shape, ta.shape
            )));
        }
        let nb = tb.data.len().max(1);
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data[i % nb]))
            .collect();
        let shape = ta.shape.clone();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape, data }, op, rg))
    }

    /// `a + b`, with `b` broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| v * c).collect(),
        };
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        let rg = self.needs(&[a]);
        self.push(out, op, rg)
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        if c == 0 || t.is_empty() {
            return Err(Error::config("softmax over an empty axis"));
        }
        let mut data = t.data.clone();
        for row in data.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let shape = t.shape.clone();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Softmax(a), rg))
    }

    /// Normalize each row to zero mean and unit variance (no affine).
    pub fn layernorm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        if c == 0 || t.is_empty() {
            return Err(Error::config("layer norm over an empty axis"));
        }
        let mut data = t.data.clone();
        let mut inv_std = Vec::with_capacity(t.rows());
        for row in data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let shape = t.shape.clone();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::LayerNorm(a, inv_std), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::config("mean of an empty tensor"));
        }
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Mean over the rows of a 2-D tensor, giving shape `[cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() != 2 || t.shape[0] == 0 {
            return Err(Error::shape(format!("mean_rows of {:?}", t.shape)));
        }
        let (r, c) = (t.shape[0], t.shape[1]);
        let mut out = vec![0.0; c];
        for row in t.data.chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(vec![c], out)?, Op::MeanRows(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() != 2 {
            return Err(Error::shape(format!("transpose of {:?}", t.shape)));
        }
        let (r, c) = (t.shape[0], t.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data[i * c + j];
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(shape.to_vec(), t.data.clone())?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Rows of a 2-D tensor in `idx` order; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() != 2 {
            return Err(Error::shape(format!("gather_rows of {:?}", t.shape)));
        }
        let (r, c) = (t.shape[0], t.shape[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!("row index {bad} out of {r}")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&t.data[i * c..(i + 1) * c]);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::GatherRows(a, idx.to_vec()),
            rg,
        ))
    }

    /// 2-D sub-block.
    pub fn slice(&mut self, a: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() != 2 || rows.end > t.shape[0] || cols.end > t.shape[1] {
            return Err(Error::shape(format!(
                "slice [{rows:?}, {cols:?}] of {:?}",
                t.shape
            )));
        }
        let c = t.shape[1];
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            out.extend_from_slice(&t.data[i * c + cols.start..i * c + cols.end]);
        }
        let shape = vec![rows.len(), cols.len()];
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice(a, rows, cols), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::shape("concat of nothing")),
        };
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != 2 || t.shape[1] != c {
                return Err(Error::shape(format!("concat_rows part {:?} vs {c} cols", t.shape)));
            }
            rows += t.shape[0];
            out.extend_from_slice(&t.data);
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::new(vec![rows, c], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::shape("concat of nothing")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape.len() != 2 || t.shape[0] != r {
                return Err(Error::shape(format!("concat_cols part {:?} vs {r} rows", t.shape)));
            }
            widths.push(t.shape[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = &self.nodes[p.0].value;
            for i in 0..r {
                out[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&t.data[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::new(vec![r, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Sum `g` (shaped like the broadcast result) down to `len` trailing
    /// elements.
    fn reduce_to(g: &[f64], len: usize) -> Vec<f64> {
        if g.len() == len {
            return g.to_vec();
        }
        let mut out = vec![0.0; len];
        for chunk in g.chunks(len) {
            out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Populate gradients of `loss` with respect to every node that depends
    /// on a parameter. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; re-run the forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &g)?;
            self.nodes[i].op = op;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &[f64]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, &self.value(*b).data, true, &mut ga, 0.0);
                    self.accumulate(*a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, &self.value(*a).data, true, g, false, &mut gb, 0.0);
                    self.accumulate(*b, gb);
                }
            }
            Op::Add(a, b) => {
                let nb = self.value(*b).len();
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, Self::reduce_to(g, nb));
            }
            Op::Sub(a, b) => {
                let nb = self.value(*b).len();
                self.accumulate(*a, g.to_vec());
                let neg: Vec<f64> = Self::reduce_to(g, nb).into_iter().map(|v| -v).collect();
                self.accumulate(*b, neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.value(*a).data, &self.value(*b).data);
                let nb = tb.len();
                let ga: Vec<f64> = g.iter().enumerate().map(|(j, v)| v * tb[j % nb]).collect();
                let prod: Vec<f64> = g.iter().zip(ta).map(|(v, x)| v * x).collect();
                let gb = Self::reduce_to(&prod, nb);
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Scale(a, c) => {
                let ga = g.iter().map(|v| v * c).collect();
                self.accumulate(*a, ga);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let c = y.cols();
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), out) in g.chunks(c).zip(y.data.chunks(c)).zip(ga.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::LayerNorm(a, inv_std) => {
                let y = &self.nodes[i].value;
                let c = y.cols();
                let mut ga = vec![0.0; g.len()];
                for (r, ((gr, yr), out)) in g
                    .chunks(c)
                    .zip(y.data.chunks(c))
                    .zip(ga.chunks_mut(c))
                    .enumerate()
                {
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / c as f64;
                    for j in 0..c {
                        out[j] = inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Gelu(a) => {
                let x = &self.value(*a).data;
                let ga = g.iter().zip(x).map(|(v, &x)| v * gelu_grad(x)).collect();
                self.accumulate(*a, ga);
            }
            Op::Softplus(a) => {
                let x = &self.value(*a).data;
                let ga = g.iter().zip(x).map(|(v, &x)| v * sigmoid(x)).collect();
                self.accumulate(*a, ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(*a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(*a, vec![g[0] / n as f64; n]);
            }
            Op::MeanRows(a) => {
                let r = self.shape(*a)[0];
                let ga: Vec<f64> = (0..r).flat_map(|_| g.iter().map(|v| v / r as f64)).collect();
                self.accumulate(*a, ga);
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut ga = vec![0.0; r * c];
                for p in 0..r {
                    for q in 0..c {
                        ga[p * c + q] = g[q * r + p];
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Reshape(a) => self.accumulate(*a, g.to_vec()),
            Op::GatherRows(a, idx) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut ga = vec![0.0; r * c];
                for (k, &src) in idx.iter().enumerate() {
                    ga[src * c..(src + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(o, v)| *o += v);
                }
                self.accumulate(*a, ga);
            }
            Op::Slice(a, rows, cols) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let w = cols.len();
                let mut ga = vec![0.0; r * c];
                for (k, row) in rows.clone().enumerate() {
                    ga[row * c + cols.start..row * c + cols.end]
                        .copy_from_slice(&g[k * w..(k + 1) * w]);
                }
                self.accumulate(*a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let r = self.value(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    self.accumulate(p, gp);
                    offset += w;
                }
            }
        }
        Ok(())
    }
}
