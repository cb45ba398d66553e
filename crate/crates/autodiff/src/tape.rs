use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MaxLast(Var, Vec<usize>),
    Conv1d { x: Var, w: Var, b: Var, window: usize },
    ConcatLast(Var, Var),
    GatherRows(Var, Vec<Option<usize>>),
    Reshape(Var),
    Transpose(Var),
    Grl(Var, f64),
    LogSumExp(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::MaxLast(..) => "max_last",
            Op::Conv1d { .. } => "conv1d",
            Op::ConcatLast(..) => "concat_last",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Grl(..) => "grl",
            Op::LogSumExp(..) => "logsumexp",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Vec<f64>>,
}

/// Records operations in execution order so that `backward` can replay
/// them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input not tied to a parameter store.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Differentiable leaf bound to a stored parameter. Repeated calls with
    /// the same id return the same node, so every use shares one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(id),
            grad: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Copy of `x` with no gradient path.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).clone();
        self.constant(t)
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `x[.., j] + b[j]`, broadcasting a 1-D bias over the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() != 1 || sx.last() != sb.first() {
            return Err(mismatch("add_bias", sx, sb));
        }
        let n = sb[0];
        let bias = self.value(b).data().to_vec();
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v + bias[k % n])
            .collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddBias(x, b), rg)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.map(x, |v| scale * v + shift);
        let rg = self.rg(x);
        self.push(out, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, c, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 0.0)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, |v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, f64::exp);
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, f64::ln);
        let rg = self.rg(x);
        self.push(out, Op::Log(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, f64::abs);
        let rg = self.rg(x);
        self.push(out, Op::Abs(x), rg)
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(AutodiffError::InvalidArgument {
                op: "clamp",
                msg: format!("lower bound {lo} exceeds upper bound {hi}"),
            });
        }
        let out = self.map(x, |v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(out, Op::Clamp(x, lo, hi), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    fn last_axis_split(&self, x: Var) -> (Vec<usize>, usize) {
        let s = self.shape(x);
        let n = *s.last().unwrap();
        let outer = if s.len() == 1 {
            vec![1]
        } else {
            s[..s.len() - 1].to_vec()
        };
        (outer, n)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let (outer, n) = self.last_axis_split(x);
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .map(|c| c.iter().sum())
            .collect();
        let out = Tensor::new(outer, data)?;
        let rg = self.rg(x);
        self.push(out, Op::SumLast(x), rg)
    }

    /// Maximum over the last axis (per-row max-pool). Ties resolve to the
    /// first position.
    pub fn max_last(&mut self, x: Var) -> Result<Var> {
        let (outer, n) = self.last_axis_split(x);
        let mut idx = Vec::new();
        let mut data = Vec::new();
        for c in self.value(x).data().chunks(n) {
            let (mut best, mut bi) = (c[0], 0);
            for (j, &v) in c.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    bi = j;
                }
            }
            idx.push(bi);
            data.push(best);
        }
        let out = Tensor::new(outer, data)?;
        let rg = self.rg(x);
        self.push(out, Op::MaxLast(x, idx), rg)
    }

    /// 1-D convolution along the word axis.
    ///
    /// `x` is `[batch, words, dim]`, `w` is `[filters, window * dim]` and
    /// `b` is `[filters]`. Output is `[batch, filters, words - window + 1]`
    /// so that `max_last` pools over positions.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, window: usize) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 3 || sw.len() != 2 || window == 0 || sw[1] != window * sx[2] {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        if sb != [sw[0]] {
            return Err(mismatch("conv1d", &sw, &sb));
        }
        let (batch, words, dim) = (sx[0], sx[1], sx[2]);
        if words < window {
            return Err(AutodiffError::InvalidArgument {
                op: "conv1d",
                msg: format!("{words} words is shorter than window {window}"),
            });
        }
        let filters = sw[0];
        let span = window * dim;
        let positions = words - window + 1;
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; batch * filters * positions];
        for bi in 0..batch {
            let xs = &xd[bi * words * dim..(bi + 1) * words * dim];
            for o in 0..filters {
                let wrow = &wd[o * span..(o + 1) * span];
                let orow = &mut out[(bi * filters + o) * positions..][..positions];
                for (t, ov) in orow.iter_mut().enumerate() {
                    let patch = &xs[t * dim..t * dim + span];
                    *ov = bd[o] + dot(wrow, patch);
                }
            }
        }
        let out = Tensor::new(vec![batch, filters, positions], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(out, Op::Conv1d { x, w, b, window }, rg)
    }

    /// Concatenate two tensors along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(mismatch("concat_last", &sa, &sb));
        }
        let (p, q) = (*sa.last().unwrap(), *sb.last().unwrap());
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ad.len() + bd.len());
        for (ra, rb) in ad.chunks(p).zip(bd.chunks(q)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = p + q;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::ConcatLast(a, b), rg)
    }

    /// Select rows of a 2-D tensor. `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, idx: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if s.len() != 2 {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                msg: format!("expected a matrix, got shape {s:?}"),
            });
        }
        if idx.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                msg: "empty index list".into(),
            });
        }
        let (rows, k) = (s[0], s[1]);
        let sd = self.value(src).data();
        let mut data = vec![0.0; idx.len() * k];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= rows {
                    return Err(AutodiffError::InvalidArgument {
                        op: "gather_rows",
                        msg: format!("row {i} out of range for {rows} rows"),
                    });
                }
                data[r * k..(r + 1) * k].copy_from_slice(&sd[i * k..(i + 1) * k]);
            }
        }
        let out = Tensor::new(vec![idx.len(), k], data)?;
        let rg = self.rg(src);
        self.push(out, Op::GatherRows(src, idx.to_vec()), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// Swap the last two axes of a 3-D tensor: `[b, p, q] -> [b, q, p]`.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(AutodiffError::InvalidArgument {
                op: "transpose",
                msg: format!("expected a 3-D tensor, got shape {s:?}"),
            });
        }
        let (b, p, q) = (s[0], s[1], s[2]);
        let xd = self.value(x).data();
        let mut data = vec![0.0; xd.len()];
        for bi in 0..b {
            for i in 0..p {
                for j in 0..q {
                    data[(bi * q + j) * p + i] = xd[(bi * p + i) * q + j];
                }
            }
        }
        let out = Tensor::new(vec![b, q, p], data)?;
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    /// Gradient reversal: identity forward, `-lambda * g` backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(AutodiffError::InvalidArgument {
                op: "grl",
                msg: format!("lambda must be positive, got {lambda}"),
            });
        }
        let out = self.value(x).clone();
        let rg = self.rg(x);
        self.push(out, Op::Grl(x, lambda), rg)
    }

    /// `log(sum(exp(x)))` over all elements, stabilised by the maximum.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let out = logsumexp(self.value(x).data());
        let rg = self.rg(x);
        self.push(Tensor::scalar(out), Op::LogSumExp(x), rg)
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients add onto whatever
    /// earlier sweeps left on the leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut adj);
        }
        for (i, node) in self.nodes.iter_mut().enumerate().take(loss.0 + 1) {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let g = adj[i]
                .take()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        // Leaves recorded after the loss cannot influence it.
        for node in self.nodes.iter_mut().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut send = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot =
                adj[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, &|s| add_into(s, g));
                send(*b, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                send(*a, &|s| add_into(s, g));
                send(*b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.node(*a).value.data(), self.node(*b).value.data());
                send(*a, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * bv[k];
                    }
                });
                send(*b, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * av[k];
                    }
                });
            }
            Op::AddBias(x, b) => {
                send(*x, &|s| add_into(s, g));
                send(*b, &|s| {
                    let n = s.len();
                    for (k, gv) in g.iter().enumerate() {
                        s[k % n] += gv;
                    }
                });
            }
            Op::Affine(x, c) => {
                send(*x, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g));
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.node(*a).value.shape(), self.node(*b).value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.node(*a).value.data(), self.node(*b).value.data());
                // dA = G B^T
                send(*a, &|s| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            s[i * k + p] += dot(grow, &bd[p * n..(p + 1) * n]);
                        }
                    }
                });
                // dB = A^T G
                send(*b, &|s| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (sv, gv) in s[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *sv += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.node(*x).value.data();
                send(*x, &|s| {
                    for k in 0..s.len() {
                        if xv[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => send(*x, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }),
            Op::Tanh(x) => send(*x, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * (1.0 - out[k] * out[k]);
                }
            }),
            Op::Exp(x) => send(*x, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * out[k];
                }
            }),
            Op::Log(x) => {
                let xv = self.node(*x).value.data();
                send(*x, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] / xv[k];
                    }
                });
            }
            Op::Abs(x) => {
                let xv = self.node(*x).value.data();
                send(*x, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * sign(xv[k]);
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.node(*x).value.data();
                send(*x, &|s| {
                    for k in 0..s.len() {
                        if xv[k] >= *lo && xv[k] <= *hi {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Sum(x) => send(*x, &|s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(x) => {
                let n = self.node(*x).value.len() as f64;
                send(*x, &|s| s.iter_mut().for_each(|s| *s += g[0] / n));
            }
            Op::SumLast(x) => {
                let n = *self.node(*x).value.shape().last().unwrap();
                send(*x, &|s| {
                    for (r, chunk) in s.chunks_mut(n).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += g[r]);
                    }
                });
            }
            Op::MaxLast(x, idx) => {
                let n = *self.node(*x).value.shape().last().unwrap();
                send(*x, &|s| {
                    for (r, &j) in idx.iter().enumerate() {
                        s[r * n + j] += g[r];
                    }
                });
            }
            Op::Conv1d { x, w, b, window } => {
                let sx = self.node(*x).value.shape();
                let (batch, words, dim) = (sx[0], sx[1], sx[2]);
                let filters = self.node(*w).value.shape()[0];
                let span = window * dim;
                let positions = words - window + 1;
                let (xd, wd) = (self.node(*x).value.data(), self.node(*w).value.data());
                send(*b, &|s| {
                    for (r, chunk) in g.chunks(positions).enumerate() {
                        s[r % filters] += chunk.iter().sum::<f64>();
                    }
                });
                send(*w, &|s| {
                    for bi in 0..batch {
                        let xs = &xd[bi * words * dim..(bi + 1) * words * dim];
                        for o in 0..filters {
                            let grow = &g[(bi * filters + o) * positions..][..positions];
                            let srow = &mut s[o * span..(o + 1) * span];
                            for (t, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let patch = &xs[t * dim..t * dim + span];
                                for (sv, pv) in srow.iter_mut().zip(patch) {
                                    *sv += gv * pv;
                                }
                            }
                        }
                    }
                });
                send(*x, &|s| {
                    for bi in 0..batch {
                        let xs = &mut s[bi * words * dim..(bi + 1) * words * dim];
                        for o in 0..filters {
                            let grow = &g[(bi * filters + o) * positions..][..positions];
                            let wrow = &wd[o * span..(o + 1) * span];
                            for (t, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                for (sv, wv) in xs[t * dim..t * dim + span].iter_mut().zip(wrow) {
                                    *sv += gv * wv;
                                }
                            }
                        }
                    }
                });
            }
            Op::ConcatLast(a, b) => {
                let p = *self.node(*a).value.shape().last().unwrap();
                let q = *self.node(*b).value.shape().last().unwrap();
                send(*a, &|s| {
                    for (r, chunk) in s.chunks_mut(p).enumerate() {
                        add_into(chunk, &g[r * (p + q)..r * (p + q) + p]);
                    }
                });
                send(*b, &|s| {
                    for (r, chunk) in s.chunks_mut(q).enumerate() {
                        add_into(chunk, &g[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                });
            }
            Op::GatherRows(src, idx) => {
                let k = self.node(*src).value.shape()[1];
                send(*src, &|s| {
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            add_into(&mut s[i * k..(i + 1) * k], &g[r * k..(r + 1) * k]);
                        }
                    }
                });
            }
            Op::Reshape(x) => send(*x, &|s| add_into(s, g)),
            Op::Transpose(x) => {
                let sx = self.node(*x).value.shape();
                let (b, p, q) = (sx[0], sx[1], sx[2]);
                send(*x, &|s| {
                    for bi in 0..b {
                        for i in 0..p {
                            for j in 0..q {
                                s[(bi * p + i) * q + j] += g[(bi * q + j) * p + i];
                            }
                        }
                    }
                });
            }
            Op::Grl(x, lambda) => {
                send(*x, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += -lambda * g))
            }
            Op::LogSumExp(x) => {
                let xv = self.node(*x).value.data();
                let l = out[0];
                send(*x, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[0] * (xv[k] - l).exp();
                    }
                });
            }
        }
    }

    /// Add every parameter leaf's accumulated gradient into `store`.
    pub fn write_grads(&self, store: &mut ParamStore) {
        let mut bound: Vec<_> = self.params.iter().collect();
        bound.sort_by_key(|(id, _)| **id);
        for (id, v) in bound {
            if let Some(g) = &self.nodes[v.0].grad {
                store.accumulate_grad(*id, g);
            }
        }
    }

    /// Drop accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// The parameter a leaf is bound to, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        self.nodes[v.0].param
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
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

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
