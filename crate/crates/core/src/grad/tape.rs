use super::recurrent::{self, CellKind, RecurrentCache};
use super::tensor::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias { a: Var, bias: Var },
    Concat(Vec<Var>),
    Slice { a: Var, axis: usize, start: usize },
    Select { a: Var, axis: usize, index: usize },
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MaxPool { a: Var, window: usize, stride: usize, argmax: Vec<usize> },
    Sum(Var),
    Dropout { a: Var, mask: Vec<f64> },
    Unfold { a: Var, window: usize, dilation: usize, pad_left: usize },
    Gather { table: Var, indices: Vec<usize> },
    Bce { p: Var, labels: Vec<f64> },
    Recurrent { xs: Var, weights: Vec<Var>, biases: Vec<Var>, cache: Box<RecurrentCache> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter or tracked input flows into this node.
    needs_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBias { a, bias } => vec![*a, *bias],
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Slice { a, .. }
            | Op::Select { a, .. }
            | Op::Reshape(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::MaxPool { a, .. }
            | Op::Sum(a)
            | Op::Scale(a, _)
            | Op::Dropout { a, .. }
            | Op::Unfold { a, .. } => vec![*a],
            Op::Gather { table, .. } => vec![*table],
            Op::Bce { p, .. } => vec![*p],
            Op::Recurrent { xs, weights, biases, .. } => {
                let mut v = vec![*xs];
                v.extend(weights);
                v.extend(biases);
                v
            }
        }
    }
}

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Records primitive operations in execution order for reverse-mode
/// differentiation. Node indices are a topological order, so the backward
/// pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaf nodes after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf; `None` when the leaf did
    /// not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match op {
            Op::Leaf | Op::Param(_) => true,
            Op::Constant => false,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Records an input tensor whose gradient is reported by
    /// [`Tape::backward`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a tensor that needs no gradient; work that would only feed
    /// its adjoint is skipped.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records the current value of a parameter; its gradient is written
    /// back into the store by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value().clone(), Op::Param(id))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `a · b` for 2-D `a` (m×k) and `b` (k×n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for 2-D `a` (m×k) and `b` (n×k).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let op = if trans_b { "matmul_t" } else { "matmul" };
        let bad = || Error::Shape {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(bad());
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(bad());
        }
        let mut out = vec![0.0; m * n];
        gemm(self.val(a), self.val(b), &mut out, m, k, n, false, trans_b, false);
        Ok(self.push(Tensor::new(vec![m, n], out), Op::MatMul { a, b, trans_b }))
    }

    /// `x · wᵀ + b` for `x` `[m, k]`, `w` `[n, k]`, `b` `[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::Shape {
                op: "linear",
                left: sx.to_vec(),
                right: sw.to_vec(),
            });
        }
        let (m, k, n) = (sx[0], sx[1], sw[0]);
        let bias = self.val(b);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm(self.val(x), self.val(w), &mut out, m, k, n, false, true, true);
        Ok(self.push(Tensor::new(vec![m, n], out), Op::Linear { x, w, b }))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let data = self.val(a).iter().zip(self.val(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    /// Adds a length-C bias to every row of a `[..., C]` tensor. This is the
    /// only broadcasting operation.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let c = *self.shape(a).last().unwrap_or(&0);
        if self.shape(bias) != [c] {
            return Err(Error::Shape {
                op: "add_bias",
                left: self.shape(a).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.val(bias);
        let mut out = self.val(a).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out), Op::AddBias { a, bias }))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: s.to_vec(),
                });
            }
            width += s[lead.len()];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let w = *self.shape(p).last().unwrap();
                out.extend_from_slice(&self.val(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        Ok(self.push(Tensor::new(shape, out), Op::Concat(parts.to_vec())))
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                left: shape,
                right: vec![axis, start, len],
            });
        }
        let (outer, n, inner) = split3(&shape, axis);
        let src = self.val(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        Ok(self.push(Tensor::new(oshape, out), Op::Slice { a, axis, start }))
    }

    /// Picks one index along `axis`, removing that axis.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(Error::Shape {
                op: "select",
                left: shape,
                right: vec![axis, index],
            });
        }
        let (outer, n, inner) = split3(&shape, axis);
        let src = self.val(a);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + index) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
        let mut oshape = shape;
        oshape.remove(axis);
        Ok(self.push(Tensor::new(oshape, out), Op::Select { a, axis, index }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape(a).to_vec(),
                right: shape.to_vec(),
            });
        }
        let t = self.value(a).clone().reshaped(shape.to_vec());
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    /// Max over windows along axis 1 of a `[B, L, C]` tensor. Ties route the
    /// gradient to the smallest index in the window.
    pub fn maxpool(&mut self, a: Var, window: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 || window == 0 || stride == 0 || shape[1] < window {
            return Err(Error::Shape {
                op: "maxpool",
                left: shape,
                right: vec![window, stride],
            });
        }
        let (b, l, c) = (shape[0], shape[1], shape[2]);
        let lo = (l - window) / stride + 1;
        let src = self.val(a);
        let mut out = Vec::with_capacity(b * lo * c);
        let mut argmax = Vec::with_capacity(b * lo * c);
        for bi in 0..b {
            for i in 0..lo {
                for ci in 0..c {
                    let mut best = (bi * l + i * stride) * c + ci;
                    for w in 1..window {
                        let idx = (bi * l + i * stride + w) * c + ci;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(Tensor::new(vec![b, lo, c], out), Op::MaxPool { a, window, stride, argmax }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Multiplies by a fixed mask (entries 0 or 1/keep for inverted dropout).
    pub fn dropout_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::Shape {
                op: "dropout",
                left: self.shape(a).to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = self.val(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data);
        Ok(self.push(t, Op::Dropout { a, mask }))
    }

    /// Sliding-window gather (im2col) of a `[B, L, N]` tensor with zero
    /// padding: output is `[B·L', window·N]` where row `(b, i)` holds
    /// `x[b, i + m·dilation - pad_left, n]` at column `m·N + n`.
    pub fn unfold(
        &mut self,
        a: Var,
        window: usize,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let span = window.saturating_sub(1) * dilation + 1;
        if shape.len() != 3 || window == 0 || dilation == 0 || shape[1] + pad_left + pad_right < span {
            return Err(Error::Shape {
                op: "unfold",
                left: shape,
                right: vec![window, dilation, pad_left, pad_right],
            });
        }
        let (b, l, n) = (shape[0], shape[1], shape[2]);
        let lo = l + pad_left + pad_right - span + 1;
        let src = self.val(a);
        let cols = window * n;
        let mut out = vec![0.0; b * lo * cols];
        for bi in 0..b {
            for i in 0..lo {
                let row = &mut out[(bi * lo + i) * cols..(bi * lo + i + 1) * cols];
                for m in 0..window {
                    let pos = (i + m * dilation) as isize - pad_left as isize;
                    if pos < 0 || pos as usize >= l {
                        continue;
                    }
                    let s = (bi * l + pos as usize) * n;
                    row[m * n..(m + 1) * n].copy_from_slice(&src[s..s + n]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![b * lo, cols], out),
            Op::Unfold {
                a,
                window,
                dilation,
                pad_left,
            },
        ))
    }

    /// Row lookup: `table` is `[V, D]`, output is `[indices.len(), D]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "gather",
                left: shape,
                right: vec![indices.len()],
            });
        }
        let (v, d) = (shape[0], shape[1]);
        let src = self.val(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::IndexOutOfRange { index: i, size: v });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![indices.len(), d], out);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` (shape `[n]`) against
    /// 0/1 labels.
    pub fn bce(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        if self.shape(p) != [labels.len()] || labels.is_empty() {
            return Err(Error::Shape {
                op: "bce",
                left: self.shape(p).to_vec(),
                right: vec![labels.len()],
            });
        }
        let n = labels.len() as f64;
        let loss = self
            .val(p)
            .iter()
            .zip(labels)
            .map(|(&p, &y)| bce_term(p, y))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Runs a GRU or LSTM over `xs` (`[B, T, In]`) from a zero state and
    /// returns the final hidden state `[B, H]`. `weights`/`biases` are the
    /// per-gate `[H, H + In]` matrices and `[H]` vectors (GRU `z, r, h̃`;
    /// LSTM `f, i, o, c`). With `reverse`, positions are consumed from
    /// `T-1` down to 0.
    pub fn recurrent(
        &mut self,
        xs: Var,
        weights: &[Var],
        biases: &[Var],
        kind: CellKind,
        reverse: bool,
    ) -> Result<Var> {
        let s = self.shape(xs).to_vec();
        let g = kind.gates();
        let bad = |tape: &Tape| Error::Shape {
            op: "recurrent",
            left: s.clone(),
            right: weights.first().map_or(vec![], |w| tape.shape(*w).to_vec()),
        };
        if s.len() != 3 || s[1] == 0 || weights.len() != g || biases.len() != g {
            return Err(bad(self));
        }
        let (b, t, input) = (s[0], s[1], s[2]);
        let h = self.shape(weights[0])[0];
        for (w, bias) in weights.iter().zip(biases) {
            if self.shape(*w) != [h, h + input] || self.shape(*bias) != [h] {
                return Err(bad(self));
            }
        }
        let ws: Vec<&[f64]> = weights.iter().map(|w| self.val(*w)).collect();
        let bs: Vec<&[f64]> = biases.iter().map(|v| self.val(*v)).collect();
        let (last, cache) = recurrent::forward(kind, self.val(xs), (b, t, input), &ws, &bs, h, reverse);
        Ok(self.push(
            Tensor::new(vec![b, h], last),
            Op::Recurrent {
                xs,
                weights: weights.to_vec(),
                biases: biases.to_vec(),
                cache: Box::new(cache),
            },
        ))
    }

    /// Smallest distance of any ReLU input from 0 and of any max-pool winner
    /// from its runner-up. Finite-difference checks are only meaningful when
    /// this exceeds the perturbation size.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in self.val(*a) {
                        margin = margin.min(x.abs());
                    }
                }
                Op::MaxPool {
                    a,
                    window,
                    stride,
                    argmax,
                } if *window > 1 => {
                    let src = self.val(*a);
                    let (l, c) = (self.shape(*a)[1], self.shape(*a)[2]);
                    let lo = node.value.shape()[1];
                    for (o, &best) in argmax.iter().enumerate() {
                        let ci = o % c;
                        let i = (o / c) % lo;
                        let bi = o / (c * lo);
                        for w in 0..*window {
                            let idx = (bi * l + i * stride + w) * c + ci;
                            if idx != best {
                                margin = margin.min(src[best] - src[idx]);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are written
    /// into `store` (zeroed first, so unused parameters end at zero); leaf
    /// gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        store.zero_grads();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let gd = g.data();
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Constant => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    for (dst, src) in p.grad_mut().iter_mut().zip(gd) {
                        *dst += src;
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let sa = self.shape(*a);
                    let (m, k) = (sa[0], sa[1]);
                    let n = node.value.shape()[1];
                    let bv = self.val(*b);
                    let av = self.val(*a);
                    if self.needs(*a) {
                        gemm(gd, bv, self.buf(&mut grads, *a), m, n, k, false, !*trans_b, true);
                    }
                    if !self.needs(*b) {
                    } else if *trans_b {
                        gemm(gd, av, self.buf(&mut grads, *b), n, m, k, true, false, true);
                    } else {
                        gemm(av, gd, self.buf(&mut grads, *b), k, m, n, true, false, true);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (m, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let n = self.shape(*w)[0];
                    if self.needs(*x) {
                        gemm(gd, self.val(*w), self.buf(&mut grads, *x), m, n, k, false, false, true);
                    }
                    if self.needs(*w) {
                        gemm(gd, self.val(*x), self.buf(&mut grads, *w), n, m, k, true, false, true);
                    }
                    let db = self.buf(&mut grads, *b);
                    for row in gd.chunks(n.max(1)) {
                        axpy(db, row, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    axpy(self.buf(&mut grads, *a), gd, 1.0);
                    axpy(self.buf(&mut grads, *b), gd, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(self.buf(&mut grads, *a), gd, 1.0);
                    axpy(self.buf(&mut grads, *b), gd, -1.0);
                }
                Op::Mul(a, b) => {
                    let bv = self.val(*b);
                    for ((d, &gv), &y) in self.buf(&mut grads, *a).iter_mut().zip(gd).zip(bv) {
                        *d += gv * y;
                    }
                    let av = self.val(*a);
                    for ((d, &gv), &x) in self.buf(&mut grads, *b).iter_mut().zip(gd).zip(av) {
                        *d += gv * x;
                    }
                }
                Op::Scale(a, s) => axpy(self.buf(&mut grads, *a), gd, *s),
                Op::AddBias { a, bias } => {
                    axpy(self.buf(&mut grads, *a), gd, 1.0);
                    let c = self.value(*bias).len();
                    let db = self.buf(&mut grads, *bias);
                    for row in gd.chunks(c.max(1)) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let width = *node.value.shape().last().unwrap();
                    let rows = node.value.len() / width.max(1);
                    let mut offset = 0;
                    for &p in parts {
                        let w = *self.shape(p).last().unwrap();
                        let dp = self.buf(&mut grads, p);
                        for r in 0..rows {
                            let src = &gd[r * width + offset..r * width + offset + w];
                            axpy(&mut dp[r * w..(r + 1) * w], src, 1.0);
                        }
                        offset += w;
                    }
                }
                Op::Slice { a, axis, start } => {
                    let (outer, n, inner) = split3(self.shape(*a), *axis);
                    let len = node.value.shape()[*axis];
                    let da = self.buf(&mut grads, *a);
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let src = &gd[o * len * inner..(o + 1) * len * inner];
                        axpy(&mut da[base..base + len * inner], src, 1.0);
                    }
                }
                Op::Select { a, axis, index } => {
                    let (outer, n, inner) = split3(self.shape(*a), *axis);
                    let da = self.buf(&mut grads, *a);
                    for o in 0..outer {
                        let base = (o * n + index) * inner;
                        axpy(&mut da[base..base + inner], &gd[o * inner..(o + 1) * inner], 1.0);
                    }
                }
                Op::Reshape(a) => axpy(self.buf(&mut grads, *a), gd, 1.0),
                Op::Relu(a) => {
                    let x = self.val(*a);
                    for ((d, &gv), &xv) in self.buf(&mut grads, *a).iter_mut().zip(gd).zip(x) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    for ((d, &gv), &yv) in self.buf(&mut grads, *a).iter_mut().zip(gd).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    for ((d, &gv), &yv) in self.buf(&mut grads, *a).iter_mut().zip(gd).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::MaxPool { a, argmax, .. } => {
                    let da = self.buf(&mut grads, *a);
                    for (&idx, &gv) in argmax.iter().zip(gd) {
                        da[idx] += gv;
                    }
                }
                Op::Sum(a) => {
                    let gv = gd[0];
                    self.buf(&mut grads, *a).iter_mut().for_each(|d| *d += gv);
                }
                Op::Dropout { a, mask } => {
                    for ((d, &gv), &m) in self.buf(&mut grads, *a).iter_mut().zip(gd).zip(mask) {
                        *d += gv * m;
                    }
                }
                Op::Unfold {
                    a,
                    window,
                    dilation,
                    pad_left,
                } => {
                    let s = self.shape(*a);
                    let (b, l, n) = (s[0], s[1], s[2]);
                    let lo = node.value.shape()[0] / b.max(1);
                    let cols = window * n;
                    let da = self.buf(&mut grads, *a);
                    for bi in 0..b {
                        for i in 0..lo {
                            let row = &gd[(bi * lo + i) * cols..(bi * lo + i + 1) * cols];
                            for m in 0..*window {
                                let pos = (i + m * dilation) as isize - *pad_left as isize;
                                if pos < 0 || pos as usize >= l {
                                    continue;
                                }
                                let t = (bi * l + pos as usize) * n;
                                axpy(&mut da[t..t + n], &row[m * n..(m + 1) * n], 1.0);
                            }
                        }
                    }
                }
                Op::Gather { table, indices } => {
                    let d = self.shape(*table)[1];
                    let dt = self.buf(&mut grads, *table);
                    for (r, &idx) in indices.iter().enumerate() {
                        axpy(&mut dt[idx * d..(idx + 1) * d], &gd[r * d..(r + 1) * d], 1.0);
                    }
                }
                Op::Recurrent {
                    xs,
                    weights,
                    biases,
                    cache,
                } => {
                    let d = recurrent::backward(cache, gd, self.needs(*xs));
                    if let Some(dx) = &d.xs {
                        axpy(self.buf(&mut grads, *xs), dx, 1.0);
                    }
                    for (v, dv) in weights.iter().zip(&d.weights).chain(biases.iter().zip(&d.biases)) {
                        axpy(self.buf(&mut grads, *v), dv, 1.0);
                    }
                }
                Op::Bce { p, labels } => {
                    let scale = gd[0] / labels.len() as f64;
                    let pv = self.val(*p);
                    for ((d, &pi), &y) in self.buf(&mut grads, *p).iter_mut().zip(pv).zip(labels) {
                        let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                        *d += scale * (pc - y) / (pc * (1.0 - pc));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> &'a mut [f64] {
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(self.shape(v)))
            .data_mut()
    }
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
