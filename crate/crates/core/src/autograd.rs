//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tape`] appends a node holding its forward value,
//! so node indices are already a topological order. [`Tape::backward`]
//! walks them in reverse once, accumulating into the gradient buffers of
//! leaves created with `requires_grad`.
//!
//! ```
//! use coins_core::autograd::Tape;
//! use coins_core::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().item(), 6.0);
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gelu, gelu_grad, gemm, layer_norm_rows, log_sum_exp, softmax_rows, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    CausalMask(Var),
    CrossEntropy {
        logits: Var,
        dlogits: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of equal shapes, or a `[rows, cols]` matrix plus a
    /// `[cols]` row vector broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let mut value = self.value(a).clone();
            value.add_assign(self.value(b))?;
            let rg = self.rg(&[a, b]);
            return Ok(self.push(value, Op::Add(a, b), rg));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let cols = sb[0];
            let bias = self.value(b).data().to_vec();
            let mut value = self.value(a).clone();
            for row in value.data_mut().chunks_mut(cols) {
                for (v, &bb) in row.iter_mut().zip(&bias) {
                    *v += bb;
                }
            }
            let rg = self.rg(&[a, b]);
            return Ok(self.push(value, Op::AddRow(a, b), rg));
        }
        Err(Error::shape("add", sa, sb))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mul", sa, sb));
        }
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("embedding", s, &[ids.len()])),
        };
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            let id = id as usize;
            if id >= rows {
                return Err(Error::Range {
                    what: "token id",
                    value: id as i64,
                    min: 0,
                    max: rows as i64 - 1,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax along `axis` of a vector or matrix.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let value = match (v.shape().len(), axis) {
            (1, 0) | (2, 1) => {
                let cols = *v.shape().last().unwrap();
                let mut out = v.clone();
                softmax_rows(out.data_mut(), cols);
                out
            }
            (2, 0) => {
                let mut t = v.transpose2()?;
                let cols = t.shape()[1];
                softmax_rows(t.data_mut(), cols);
                t.transpose2()?
            }
            _ => return Err(Error::shape("softmax", v.shape(), &[axis])),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of width `cols`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (_, cols) = self.value(x).dims2()?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (mut xhat, mut rstd) = (Vec::new(), Vec::new());
        let out = layer_norm_rows(
            self.value(x).data(),
            cols,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            &mut xhat,
            &mut rstd,
        );
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Inverted dropout. `p = 0` returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::c(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (r0, c0) = self.value(first).dims2()?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => false,
            };
            if !ok || self.shape(p).len() != 2 {
                return Err(Error::shape("concat", self.shape(first), self.shape(p)));
            }
            dims.push((r, c));
        }
        let value = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum::<usize>();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![rows, c0], data)?
        } else {
            let cols = dims.iter().map(|d| d.1).sum::<usize>();
            let mut data = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::new(vec![r0, cols], data)?
        };
        let rg = self.rg(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` rows (axis 0) or columns (axis 1) of a matrix starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2()?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => 0,
        };
        if v.shape().len() != 2 || start + len > extent {
            return Err(Error::shape("slice", v.shape(), &[axis, start, len]));
        }
        let value = if axis == 0 {
            Tensor::new(vec![len, c], v.data()[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&v.row(i)[start..start + len]);
            }
            Tensor::new(vec![r, len], data)?
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice { x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose2()?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    /// Sets entries above the diagonal of a square score matrix to `-inf`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2()?;
        if r != c || v.shape().len() != 2 {
            return Err(Error::shape("causal_mask", v.shape(), &[r, r]));
        }
        let mut value = v.clone();
        let data = value.data_mut();
        for i in 0..r {
            for j in i + 1..c {
                data[i * c + j] = T::neg_infinity();
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::CausalMask(x), rg))
    }

    /// Negative log-likelihood of `targets` under `softmax(logits)` over the
    /// rows where `mask` is set, reduced to a scalar. An all-false mask gives
    /// a zero loss.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[bool],
        reduction: Reduction,
    ) -> Result<Var> {
        let v = self.value(logits);
        let (t, vocab) = v.dims2()?;
        if targets.len() != t || mask.len() != t || v.shape().len() != 2 {
            return Err(Error::shape(
                "cross_entropy_masked",
                v.shape(),
                &[targets.len(), mask.len()],
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            log::warn!("cross_entropy_masked: empty loss mask, loss defined as 0");
        }
        let weight = match reduction {
            Reduction::Mean if count > 0 => T::one() / T::c(count as f64),
            _ => T::one(),
        };
        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); t * vocab];
        for (p, (&tgt, &on)) in targets.iter().zip(mask).enumerate() {
            if !on {
                continue;
            }
            let tgt = tgt as usize;
            if tgt >= vocab {
                return Err(Error::Range {
                    what: "target id",
                    value: tgt as i64,
                    min: 0,
                    max: vocab as i64 - 1,
                });
            }
            let row = v.row(p);
            let lse = log_sum_exp(row);
            loss += lse - row[tgt];
            let drow = &mut dlogits[p * vocab..(p + 1) * vocab];
            for (d, &z) in drow.iter_mut().zip(row) {
                *d = (z - lse).exp() * weight;
            }
            drow[tgt] = drow[tgt] - weight;
        }
        let value = Tensor::scalar(loss * weight);
        let rg = self.rg(&[logits]);
        Ok(self.push(value, Op::CrossEntropy { logits, dlogits }, rg))
    }

    /// Back-propagates from a scalar `loss`, accumulating into leaf grads.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, g, &mut grads)?;
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, i: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = va.dims2()?;
                let n = vb.dims2()?.1;
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(m, n, k, g.data(), false, vb.data(), true, &mut da, false);
                    self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), da)?)?;
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(k, m, n, va.data(), true, g.data(), false, &mut db, false);
                    self.accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), db)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *b, g.clone())?;
                self.accumulate(grads, *a, g)?;
            }
            Op::AddRow(a, b) => {
                if self.requires_grad(*b) {
                    let cols = self.shape(*b)[0];
                    let mut db = vec![T::zero(); cols];
                    for row in g.data().chunks(cols) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![cols], db)?)?;
                }
                self.accumulate(grads, *a, g)?;
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.requires_grad(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), d)?)?;
                }
                if self.requires_grad(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), d)?)?;
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                self.accumulate(grads, *a, g.map(|v| v * f))?;
            }
            Op::Sum(a) => {
                let s = g.item();
                self.accumulate(grads, *a, Tensor::full(self.shape(*a).to_vec(), s))?;
            }
            Op::Embedding { table, ids } => {
                let shape = self.shape(*table).to_vec();
                let cols = shape[1];
                let mut d = Tensor::zeros(shape);
                let dd = d.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dd[id as usize * cols..(id as usize + 1) * cols];
                    for (x, &y) in dst.iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                self.accumulate(grads, *table, d)?;
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let dx = match (y.shape().len(), axis) {
                    (2, 0) => {
                        let yt = y.transpose2()?;
                        let gt = g.transpose2()?;
                        softmax_backward(&yt, &gt)?.transpose2()?
                    }
                    _ => softmax_backward(y, &g)?,
                };
                self.accumulate(grads, *x, dx)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = self.shape(*gamma)[0];
                let gam = self.value(*gamma).data();
                let n = T::c(cols as f64);
                if self.requires_grad(*gamma) || self.requires_grad(*beta) {
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    for (grow, hrow) in g.data().chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::new(vec![cols], dg)?)?;
                    self.accumulate(grads, *beta, Tensor::new(vec![cols], db)?)?;
                }
                if self.requires_grad(*x) {
                    let mut dx = Vec::with_capacity(g.numel());
                    for ((grow, hrow), &r) in g.data().chunks(cols).zip(xhat.chunks(cols)).zip(rstd) {
                        let mut mean_dy = T::zero();
                        let mut mean_dy_h = T::zero();
                        for j in 0..cols {
                            let dy = grow[j] * gam[j];
                            mean_dy += dy;
                            mean_dy_h += dy * hrow[j];
                        }
                        mean_dy = mean_dy / n;
                        mean_dy_h = mean_dy_h / n;
                        for j in 0..cols {
                            let dy = grow[j] * gam[j];
                            dx.push(r * (dy - mean_dy - hrow[j] * mean_dy_h));
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?)?;
                }
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gg, &xx)| gg * gelu_grad(xx))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), d)?)?;
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?)?;
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).dims2()?;
                    if self.requires_grad(p) {
                        let d = if *axis == 0 {
                            g.data()[offset * cols..(offset + pr) * cols].to_vec()
                        } else {
                            let mut d = Vec::with_capacity(rows * pc);
                            for r in 0..rows {
                                d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                            }
                            d
                        };
                        self.accumulate(grads, p, Tensor::new(vec![pr, pc], d)?)?;
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x).to_vec();
                let (_, c) = (shape[0], shape[1]);
                let (gr, gc) = g.dims2()?;
                let mut d = Tensor::zeros(shape);
                let dd = d.data_mut();
                if *axis == 0 {
                    dd[start * c..(start + gr) * c].copy_from_slice(g.data());
                } else {
                    for r in 0..gr {
                        dd[r * c + start..r * c + start + gc].copy_from_slice(g.row(r));
                    }
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, g.transpose2()?)?;
            }
            Op::CausalMask(x) => {
                let (r, c) = g.dims2()?;
                let mut d = g;
                let dd = d.data_mut();
                for i in 0..r {
                    for j in i + 1..c {
                        dd[i * c + j] = T::zero();
                    }
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::CrossEntropy { logits, dlogits } => {
                let s = g.item();
                let d = dlogits.iter().map(|&v| v * s).collect();
                self.accumulate(grads, *logits, Tensor::new(self.shape(*logits).to_vec(), d)?)?;
            }
        }
        Ok(())
    }
}

fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = *y.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks(cols).zip(g.data().chunks(cols)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(y.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 12.0);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn unrelated_leaf_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unrelated = tape.param(Tensor::scalar(5.0));
        let c = tape.constant(Tensor::scalar(7.0));
        let y = tape.mul(x, c).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(unrelated).is_none_or(|g| g.item() == 0.0));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros([2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn dropout_zero_is_identity_and_seeded_dropout_repeats() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::from_fn([4, 4], |i| i as f32));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(tape.dropout(x, 0.0, &mut rng).unwrap(), x);

        let a = tape.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = tape.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn uniform_cross_entropy_is_log_vocab() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(Tensor::zeros([1, 8]));
        let loss = tape
            .cross_entropy_masked(logits, &[3], &[true], Reduction::Mean)
            .unwrap();
        assert!((tape.value(loss).item() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_cross_entropy_vanishes() {
        let mut tape = Tape::<f64>::new();
        let mut l = Tensor::zeros([1, 5]);
        l.data_mut()[2] = 30.0;
        let logits = tape.param(l);
        let loss = tape
            .cross_entropy_masked(logits, &[2], &[true], Reduction::Mean)
            .unwrap();
        assert!(tape.value(loss).item() < 1e-6);
    }

    #[test]
    fn empty_mask_gives_zero_loss() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(Tensor::from_fn([2, 3], |i| i as f64));
        let loss = tape
            .cross_entropy_masked(logits, &[0, 1], &[false, false], Reduction::Mean)
            .unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        tape.backward(loss).unwrap();
        assert!(tape.grad(logits).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_sum_vs_mean() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(Tensor::from_fn([3, 4], |i| (i as f64).cos()));
        let mask = [true, false, true];
        let mean = tape
            .cross_entropy_masked(logits, &[0, 1, 2], &mask, Reduction::Mean)
            .unwrap();
        let sum = tape
            .cross_entropy_masked(logits, &[0, 1, 2], &mask, Reduction::Sum)
            .unwrap();
        assert!((tape.value(sum).item() - 2.0 * tape.value(mean).item()).abs() < 1e-12);
    }

    #[test]
    fn add_reports_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::zeros([2, 3]));
        let b = tape.param(Tensor::zeros([3, 2]));
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn([3, 5], |i| (i as f64 * 1.7).sin() * 4.0));
        for axis in [0, 1] {
            let y = tape.softmax(x, axis).unwrap();
            let v = if axis == 1 {
                tape.value(y).clone()
            } else {
                tape.value(y).transpose2().unwrap()
            };
            let (r, c) = v.dims2().unwrap();
            for i in 0..r {
                let row = &v.data()[i * c..(i + 1) * c];
                assert!(row.iter().all(|&p| p > 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}
