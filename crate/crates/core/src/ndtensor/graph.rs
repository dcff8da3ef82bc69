//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node to the [`Graph`]; nodes are therefore stored in
//! topological order and [`Graph::backward`] is a single reverse sweep that
//! visits each node once. Only nodes that depend on a leaf created with
//! [`Graph::leaf`] take part in the sweep.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a node of a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Conv2d { input: usize, kernel: usize, pad: usize },
    Tanh(usize),
    Softplus(usize),
    Sum(usize),
    Mean(usize),
    Broadcast(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar output with respect to every leaf of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    graph: u64,
    grads: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Result<&Tensor> {
        if leaf.graph != self.graph {
            return Err(Error::UnknownLeaf);
        }
        self.grads.get(&leaf.idx).ok_or(Error::UnknownLeaf)
    }

    pub fn take(&mut self, leaf: Var) -> Result<Tensor> {
        if leaf.graph != self.graph {
            return Err(Error::UnknownLeaf);
        }
        self.grads.remove(&leaf.idx).ok_or(Error::UnknownLeaf)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A non-differentiable input (parameters, targets).
    pub fn constant(&self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("constant"));
        }
        Ok(self.push(value, Op::Constant, false))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.node_value(v).clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.node_value(v).shape().to_vec()
    }

    fn node_value(&self, v: Var) -> Ref<'_, Tensor> {
        assert_eq!(v.graph, self.id, "variable used with a foreign graph");
        Ref::map(self.nodes.borrow(), |n| &n[v.idx].value)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            graph: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.idx >= self.len() {
            return Err(Error::UnknownLeaf);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.idx].needs_grad
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.idx].value.zip_map(&nodes[b.idx].value, name, f)?
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, needs))
    }

    fn unary(&self, a: Var, f: impl Fn(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var> {
        self.check(a)?;
        let out = f(&self.nodes.borrow()[a.idx].value)?;
        let needs = self.needs(a);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.idx, b.idx))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.idx, b.idx))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.idx, b.idx))
    }

    pub fn scale(&self, a: Var, k: f64) -> Result<Var> {
        if !k.is_finite() {
            return Err(Error::NonFinite("scale"));
        }
        self.unary(a, |t| Ok(t.scale(k)), Op::Scale(a.idx, k))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(f64::tanh)), Op::Tanh(a.idx))
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(softplus)), Op::Softplus(a.idx))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(Tensor::scalar(t.sum())), Op::Sum(a.idx))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(Tensor::scalar(t.mean())), Op::Mean(a.idx))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.unary(a, |t| t.reshape(shape), Op::Reshape(a.idx))
    }

    /// Right-aligned broadcast: each source dimension must equal the target
    /// dimension or be 1; missing leading dimensions are treated as 1.
    pub fn broadcast(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.unary(a, |t| broadcast_forward(t, shape), Op::Broadcast(a.idx))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = {
            let nodes = self.nodes.borrow();
            matmul_forward(&nodes[a.idx].value, &nodes[b.idx].value)?
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a.idx, b.idx), needs))
    }

    /// Stride-1 convolution with `pad` zeros on every border.
    ///
    /// `input` is `[h, w, c_in]`, `kernel` is `[kh, kw, c_in, c_out]`, the result
    /// is `[h + 2 pad - kh + 1, w + 2 pad - kw + 1, c_out]`.
    pub fn conv2d(&self, input: Var, kernel: Var, pad: usize) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        let out = {
            let nodes = self.nodes.borrow();
            conv2d_forward(&nodes[input.idx].value, &nodes[kernel.idx].value, pad)?
        };
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            out,
            Op::Conv2d {
                input: input.idx,
                kernel: kernel.idx,
                pad,
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `output`.
    ///
    /// Returns a gradient for every leaf (zeros when the output does not
    /// depend on it).
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check(output)?;
        let nodes = self.nodes.borrow();
        let out_node = &nodes[output.idx];
        if !out_node.value.is_scalar() {
            return Err(Error::NotScalar(out_node.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.idx + 1];
        adj[output.idx] = Some(Tensor::ones(out_node.value.shape()));

        for idx in (0..=output.idx).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match node.op {
                Op::Leaf | Op::Constant => {
                    adj[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&nodes, &mut adj, a, || g.clone());
                    accumulate(&nodes, &mut adj, b, || g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&nodes, &mut adj, a, || g.clone());
                    accumulate(&nodes, &mut adj, b, || g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    accumulate(&nodes, &mut adj, a, || g.mul(vb).expect("shape checked"));
                    accumulate(&nodes, &mut adj, b, || g.mul(va).expect("shape checked"));
                }
                Op::Scale(a, k) => {
                    accumulate(&nodes, &mut adj, a, || g.scale(k));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    accumulate(&nodes, &mut adj, a, || {
                        g.zip_map(y, "tanh", |gi, yi| gi * (1.0 - yi * yi))
                            .expect("shape checked")
                    });
                }
                Op::Softplus(a) => {
                    let x = &nodes[a].value;
                    accumulate(&nodes, &mut adj, a, || {
                        g.zip_map(x, "softplus", |gi, xi| gi * sigmoid(xi))
                            .expect("shape checked")
                    });
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&nodes, &mut adj, a, || Tensor::full(nodes[a].value.shape(), gv));
                }
                Op::Mean(a) => {
                    let n = nodes[a].value.len() as f64;
                    let gv = g.data()[0] / n;
                    accumulate(&nodes, &mut adj, a, || Tensor::full(nodes[a].value.shape(), gv));
                }
                Op::Reshape(a) => {
                    accumulate(&nodes, &mut adj, a, || {
                        g.reshape(nodes[a].value.shape()).expect("same length")
                    });
                }
                Op::Broadcast(a) => {
                    accumulate(&nodes, &mut adj, a, || broadcast_backward(&g, nodes[a].value.shape()));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    accumulate(&nodes, &mut adj, a, || matmul_grad_lhs(&g, vb));
                    accumulate(&nodes, &mut adj, b, || matmul_grad_rhs(va, &g));
                }
                Op::Conv2d { input, kernel, pad } => {
                    let (vi, vk) = (&nodes[input].value, &nodes[kernel].value);
                    accumulate(&nodes, &mut adj, input, || conv2d_grad_input(&g, vi, vk, pad));
                    accumulate(&nodes, &mut adj, kernel, || conv2d_grad_kernel(&g, vi, vk, pad));
                }
            }
        }

        let mut grads = BTreeMap::new();
        for (idx, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = adj
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                grads.insert(idx, g);
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }
}

fn accumulate(
    nodes: &[Node],
    adj: &mut [Option<Tensor>],
    target: usize,
    grad: impl FnOnce() -> Tensor,
) {
    if !nodes[target].needs_grad {
        return;
    }
    let g = grad();
    match &mut adj[target] {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn aligned_source_shape(src: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if src.len() > target.len() {
        return Err(Error::shape("broadcast", src, target));
    }
    let mut padded = vec![1; target.len() - src.len()];
    padded.extend_from_slice(src);
    for (&s, &t) in padded.iter().zip(target) {
        if s != t && s != 1 {
            return Err(Error::shape("broadcast", src, target));
        }
    }
    Ok(padded)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

/// Maps each flat index of `target` to the flat index of the broadcast source.
fn broadcast_index_map(src: &[usize], target: &[usize]) -> Vec<usize> {
    let src_strides = strides(src);
    let len: usize = target.iter().product();
    let mut map = Vec::with_capacity(len);
    let mut idx = vec![0usize; target.len()];
    for _ in 0..len {
        let s: usize = idx
            .iter()
            .zip(src)
            .zip(&src_strides)
            .map(|((&i, &d), &st)| if d == 1 { 0 } else { i * st })
            .sum();
        map.push(s);
        for d in (0..target.len()).rev() {
            idx[d] += 1;
            if idx[d] < target[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

fn broadcast_forward(t: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let src = aligned_source_shape(t.shape(), shape)?;
    let map = broadcast_index_map(&src, shape);
    Tensor::new(shape.to_vec(), map.iter().map(|&i| t.data()[i]).collect())
}

fn broadcast_backward(g: &Tensor, src_shape: &[usize]) -> Tensor {
    let src = aligned_source_shape(src_shape, g.shape()).expect("validated in forward");
    let map = broadcast_index_map(&src, g.shape());
    let mut out = Tensor::zeros(src_shape);
    for (gi, &si) in g.data().iter().zip(&map) {
        out.data_mut()[si] += gi;
    }
    out
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::shape("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            let brow = &b.data()[p * n..(p + 1) * n];
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

// dA = G B^T
fn matmul_grad_lhs(g: &Tensor, b: &Tensor) -> Tensor {
    let (k, n) = (b.shape()[0], b.shape()[1]);
    let m = g.shape()[0];
    Tensor::from_fn(&[m, k], |idx| {
        let (i, p) = (idx / k, idx % k);
        (0..n).map(|j| g.data()[i * n + j] * b.data()[p * n + j]).sum()
    })
}

// dB = A^T G
fn matmul_grad_rhs(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = g.shape()[1];
    Tensor::from_fn(&[k, n], |idx| {
        let (p, j) = (idx / n, idx % n);
        (0..m).map(|i| a.data()[i * k + p] * g.data()[i * n + j]).sum()
    })
}

struct ConvDims {
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    co: usize,
    oh: usize,
    ow: usize,
    pad: usize,
}

impl ConvDims {
    fn new(input: &[usize], kernel: &[usize], pad: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 || input[2] != kernel[2] {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let (h, w, ci) = (input[0], input[1], input[2]);
        let (kh, kw, co) = (kernel[0], kernel[1], kernel[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d", input, kernel));
        }
        Ok(Self {
            h,
            w,
            ci,
            kh,
            kw,
            co,
            oh: h + 2 * pad - kh + 1,
            ow: w + 2 * pad - kw + 1,
            pad,
        })
    }

    /// Calls `f(out_pixel, in_pixel, kernel_tap)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.oh {
            for ky in 0..self.kh {
                let iy = oy + ky;
                if iy < self.pad || iy - self.pad >= self.h {
                    continue;
                }
                let iy = iy - self.pad;
                for ox in 0..self.ow {
                    for kx in 0..self.kw {
                        let ix = ox + kx;
                        if ix < self.pad || ix - self.pad >= self.w {
                            continue;
                        }
                        let ix = ix - self.pad;
                        f(oy * self.ow + ox, iy * self.w + ix, ky * self.kw + kx);
                    }
                }
            }
        }
    }
}

fn conv2d_forward(input: &Tensor, kernel: &Tensor, pad: usize) -> Result<Tensor> {
    let d = ConvDims::new(input.shape(), kernel.shape(), pad)?;
    let mut out = vec![0.0; d.oh * d.ow * d.co];
    let (x, k) = (input.data(), kernel.data());
    d.for_each_tap(|o, i, t| {
        let orow = &mut out[o * d.co..(o + 1) * d.co];
        for c in 0..d.ci {
            let v = x[i * d.ci + c];
            let krow = &k[(t * d.ci + c) * d.co..(t * d.ci + c + 1) * d.co];
            for (ov, &kv) in orow.iter_mut().zip(krow) {
                *ov += v * kv;
            }
        }
    });
    Tensor::new(vec![d.oh, d.ow, d.co], out)
}

fn conv2d_grad_input(g: &Tensor, input: &Tensor, kernel: &Tensor, pad: usize) -> Tensor {
    let d = ConvDims::new(input.shape(), kernel.shape(), pad).expect("validated in forward");
    let mut out = Tensor::zeros(input.shape());
    let (gd, k) = (g.data(), kernel.data());
    let gi = out.data_mut();
    d.for_each_tap(|o, i, t| {
        let grow = &gd[o * d.co..(o + 1) * d.co];
        for c in 0..d.ci {
            let krow = &k[(t * d.ci + c) * d.co..(t * d.ci + c + 1) * d.co];
            gi[i * d.ci + c] += grow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
        }
    });
    out
}

fn conv2d_grad_kernel(g: &Tensor, input: &Tensor, kernel: &Tensor, pad: usize) -> Tensor {
    let d = ConvDims::new(input.shape(), kernel.shape(), pad).expect("validated in forward");
    let mut out = Tensor::zeros(kernel.shape());
    let (gd, x) = (g.data(), input.data());
    let gk = out.data_mut();
    d.for_each_tap(|o, i, t| {
        let grow = &gd[o * d.co..(o + 1) * d.co];
        for c in 0..d.ci {
            let v = x[i * d.ci + c];
            let krow = &mut gk[(t * d.ci + c) * d.co..(t * d.ci + c + 1) * d.co];
            for (kv, &gv) in krow.iter_mut().zip(grow) {
                *kv += v * gv;
            }
        }
    });
    out
}
