//! Eager computation graph with tape-based reverse differentiation.
//!
//! Every builder method computes its result immediately and records the op
//! on the tape. [`Graph::backward`] walks the tape once in reverse and
//! returns gradients for trainable leaves. Nodes are processed in fixed
//! order, so gradients are deterministic for fixed inputs.

use std::collections::HashMap;

use super::kernels::{
    broadcast_shape, broadcast_zip, col2im_acc, conv_out_size, im2col, matmul_acc, matmul_nt_acc,
    matmul_tn_acc, reduce_to_shape,
};
use super::params::{GradMap, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValId(pub(crate) usize);

/// Recorded operation. Attributes carry everything backward needs.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf { trainable: bool },
    Add(ValId, ValId),
    Sub(ValId, ValId),
    Mul(ValId, ValId),
    Scale(ValId, f64),
    Matmul(ValId, ValId),
    Transpose2(ValId),
    Conv2d { x: ValId, w: ValId, b: Option<ValId>, stride: usize, pad: usize },
    SoftmaxLast(ValId),
    GroupNorm { x: ValId, gamma: ValId, beta: ValId, groups: usize, eps: f64 },
    Silu(ValId),
    Concat { inputs: Vec<ValId>, axis: usize },
    Reshape(ValId),
    MeanAll(ValId),
    Upsample2x(ValId),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
    name: String,
}

/// Tape of eagerly evaluated ops.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    bound: HashMap<String, ValId>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), bound: HashMap::new(), check_finite: true }
    }

    /// Disables the per-op finite check (hot training loops check the loss
    /// instead).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn value(&self, id: ValId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn node_name(&self, id: ValId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool, name: String) -> Result<ValId> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { node: name });
        }
        self.nodes.push(Node { value, op, needs_grad, name });
        Ok(ValId(self.nodes.len() - 1))
    }

    fn needs(&self, id: ValId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn auto_name(&self, op: &str) -> String {
        format!("{op}#{}", self.nodes.len())
    }

    /// Binds a named leaf. Re-binding the same name returns the existing
    /// handle so that shared parameters accumulate a single gradient.
    pub fn leaf(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ValId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let id = self.push(value, Op::Leaf { trainable }, trainable, name.to_string())?;
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Anonymous non-trainable leaf (constants, runtime inputs).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<ValId> {
        let name = self.auto_name("const");
        self.push(value, Op::Leaf { trainable: false }, false, name)
    }

    /// Binds a parameter out of a store, honoring its trainable flag.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<ValId> {
        let (tensor, trainable) = store
            .lookup(name)
            .ok_or_else(|| Error::MissingInput(format!("parameter {name}")))?;
        self.leaf(name, tensor.clone(), trainable)
    }

    pub fn add(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.binary(a, b, "add", |x, y| x + y, |a, b| Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.binary(a, b, "sub", |x, y| x - y, |a, b| Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.binary(a, b, "mul", |x, y| x * y, |a, b| Op::Mul(a, b))
    }

    fn binary(
        &mut self,
        a: ValId,
        b: ValId,
        label: &str,
        f: impl Fn(T, T) -> T,
        op: impl Fn(ValId, ValId) -> Op,
    ) -> Result<ValId> {
        let name = self.auto_name(label);
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| {
            Error::shape(&name, format!("cannot broadcast {:?} with {:?}", va.shape(), vb.shape()))
        })?;
        let data = broadcast_zip(va.data(), va.shape(), vb.data(), vb.shape(), &out_shape, f);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(&out_shape, data), op(a, b), needs, name)
    }

    pub fn scale(&mut self, a: ValId, factor: f64) -> Result<ValId> {
        let name = self.auto_name("scale");
        let c = T::from_f64(factor);
        let value = self.nodes[a.0].value.map(|v| v * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs, name)
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        let name = self.auto_name("matmul");
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(&name, format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        matmul_acc(va.data(), vb.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(&[m, n], out), Op::Matmul(a, b), needs, name)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2(&mut self, a: ValId) -> Result<ValId> {
        let name = self.auto_name("transpose2");
        let va = &self.nodes[a.0].value;
        let s = va.shape();
        if s.len() != 2 {
            return Err(Error::shape(&name, format!("transpose2 expects rank 2, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let src = va.data();
        let mut out = vec![T::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(&[n, m], out), Op::Transpose2(a), needs, name)
    }

    /// 2-D convolution: x `[ci,h,w]`, w `[co,ci,kh,kw]`, bias `[co]`.
    pub fn conv2d(
        &mut self,
        x: ValId,
        w: ValId,
        b: Option<ValId>,
        stride: usize,
        pad: usize,
    ) -> Result<ValId> {
        let name = self.auto_name("conv2d");
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let (sx, sw) = (vx.shape(), vw.shape());
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[1] {
            return Err(Error::shape(&name, format!("conv2d input {sx:?} weight {sw:?}")));
        }
        let (ci, h, wdt) = (sx[0], sx[1], sx[2]);
        let (co, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || wdt + 2 * pad < kw || stride == 0 {
            return Err(Error::shape(&name, format!("conv2d geometry {sx:?} k={kh}x{kw} s={stride} p={pad}")));
        }
        if let Some(bid) = b {
            let sb = self.nodes[bid.0].value.shape();
            if sb != [co] {
                return Err(Error::shape(&name, format!("conv2d bias {sb:?}, expected [{co}]")));
            }
        }
        let oh = conv_out_size(h, kh, stride, pad);
        let ow = conv_out_size(wdt, kw, stride, pad);
        let q = ci * kh * kw;
        let cols = im2col(vx.data(), ci, h, wdt, kh, kw, stride, pad);
        let mut out = vec![T::ZERO; co * oh * ow];
        // out[o, p] = sum_q w[o, q] * cols[p, q]
        matmul_nt_acc(self.nodes[w.0].value.data(), &cols, &mut out, co, q, oh * ow);
        if let Some(bid) = b {
            let bias = self.nodes[bid.0].value.clone();
            for o in 0..co {
                let bv = bias.data()[o];
                for v in &mut out[o * oh * ow..(o + 1) * oh * ow] {
                    *v += bv;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.map(|bid| self.needs(bid)).unwrap_or(false);
        self.push(
            Tensor::from_vec(&[co, oh, ow], out),
            Op::Conv2d { x, w, b, stride, pad },
            needs,
            name,
        )
    }

    /// Softmax over the last axis, numerically stabilized.
    pub fn softmax_last(&mut self, a: ValId) -> Result<ValId> {
        let name = self.auto_name("softmax");
        let va = &self.nodes[a.0].value;
        let s = va.shape();
        if s.is_empty() {
            return Err(Error::shape(&name, "softmax on rank-0"));
        }
        let n = s[s.len() - 1];
        let rows = va.len() / n;
        let src = va.data();
        let mut out = vec![T::ZERO; va.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let m = row.iter().fold(row[0], |acc, &v| acc.maximum(v));
            let mut sum = T::ZERO;
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row.iter()) {
                let e = (v - m).exp();
                *o = e;
                sum += e;
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o = *o / sum;
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(s, out), Op::SoftmaxLast(a), needs, name)
    }

    /// Group normalization over `[c,h,w]` with per-channel affine.
    pub fn group_norm(
        &mut self,
        x: ValId,
        gamma: ValId,
        beta: ValId,
        groups: usize,
        eps: f64,
    ) -> Result<ValId> {
        let name = self.auto_name("group_norm");
        let vx = &self.nodes[x.0].value;
        let s = vx.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape(&name, format!("group_norm expects [c,h,w], got {s:?}")));
        }
        let c = s[0];
        if c % groups != 0 {
            return Err(Error::shape(&name, format!("{c} channels not divisible by {groups} groups")));
        }
        if self.nodes[gamma.0].value.shape() != [c] || self.nodes[beta.0].value.shape() != [c] {
            return Err(Error::shape(&name, "gamma/beta must be [c]"));
        }
        let hw = s[1] * s[2];
        let per = c / groups;
        let n = per * hw;
        let src = vx.data();
        let gm = self.nodes[gamma.0].value.clone();
        let bt = self.nodes[beta.0].value.clone();
        let mut out = vec![T::ZERO; src.len()];
        let epst = T::from_f64(eps);
        let inv_n = T::from_f64(1.0 / n as f64);
        for g in 0..groups {
            let lo = g * per * hw;
            let hi = lo + per * hw;
            let mut mean = T::ZERO;
            for &v in &src[lo..hi] {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::ZERO;
            for &v in &src[lo..hi] {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let inv_std = T::ONE / (var + epst).sqrt();
            for ch in 0..per {
                let cidx = g * per + ch;
                let (gc, bc) = (gm.data()[cidx], bt.data()[cidx]);
                for i in 0..hw {
                    let idx = lo + ch * hw + i;
                    out[idx] = gc * ((src[idx] - mean) * inv_std) + bc;
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Tensor::from_vec(&s, out),
            Op::GroupNorm { x, gamma, beta, groups, eps },
            needs,
            name,
        )
    }

    /// Sigmoid-linear activation x * sigmoid(x).
    pub fn silu(&mut self, a: ValId) -> Result<ValId> {
        let name = self.auto_name("silu");
        let value = self.nodes[a.0].value.map(|v| {
            let sig = T::ONE / (T::ONE + (-v).exp());
            v * sig
        });
        let needs = self.needs(a);
        self.push(value, Op::Silu(a), needs, name)
    }

    /// Concatenation along `axis`.
    pub fn concat(&mut self, inputs: &[ValId], axis: usize) -> Result<ValId> {
        let name = self.auto_name("concat");
        if inputs.is_empty() {
            return Err(Error::shape(&name, "concat of zero tensors"));
        }
        let first = self.nodes[inputs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::shape(&name, format!("axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.nodes[id.0].value.shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::shape(&name, format!("incompatible concat shapes {first:?} vs {s:?}")));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &id in inputs {
                let v = &self.nodes[id.0].value;
                let rows = v.shape()[axis];
                let block = rows * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let needs = inputs.iter().any(|&id| self.needs(id));
        self.push(
            Tensor::from_vec(&out_shape, out),
            Op::Concat { inputs: inputs.to_vec(), axis },
            needs,
            name,
        )
    }

    pub fn reshape(&mut self, a: ValId, shape: &[usize]) -> Result<ValId> {
        let name = self.auto_name("reshape");
        let va = &self.nodes[a.0].value;
        if va.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(&name, format!("reshape {:?} -> {shape:?}", va.shape())));
        }
        let value = va.reshaped(shape);
        let needs = self.needs(a);
        self.push(value, Op::Reshape(a), needs, name)
    }

    /// Mean over all elements, producing a `[1]` scalar.
    pub fn mean_all(&mut self, a: ValId) -> Result<ValId> {
        let name = self.auto_name("mean_all");
        let va = &self.nodes[a.0].value;
        let inv = T::from_f64(1.0 / va.len() as f64);
        let mut acc = T::ZERO;
        for &v in va.data() {
            acc += v;
        }
        let needs = self.needs(a);
        self.push(Tensor::scalar(acc * inv), Op::MeanAll(a), needs, name)
    }

    /// Nearest-neighbour 2x spatial upsampling of `[c,h,w]`.
    pub fn upsample2x(&mut self, a: ValId) -> Result<ValId> {
        let name = self.auto_name("upsample2x");
        let va = &self.nodes[a.0].value;
        let s = va.shape();
        if s.len() != 3 {
            return Err(Error::shape(&name, format!("upsample2x expects [c,h,w], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = va.data();
        let mut out = vec![T::ZERO; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                let sy = y / 2;
                let src_row = &src[(ch * h + sy) * w..(ch * h + sy + 1) * w];
                let dst_row = &mut out[(ch * 2 * h + y) * 2 * w..(ch * 2 * h + y + 1) * 2 * w];
                for x in 0..2 * w {
                    dst_row[x] = src_row[x / 2];
                }
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(&[c, 2 * h, 2 * w], out), Op::Upsample2x(a), needs, name)
    }

    /// Mean of squared differences, `mean((a - b)^2)` — the training loss
    /// reduction. Composed from primitive ops so its gradient follows from
    /// the primitives.
    pub fn mean_sq_diff(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    /// Reverse pass from a scalar output. Returns gradients for every
    /// trainable leaf, keyed by leaf name.
    pub fn backward(&self, output: ValId) -> Result<GradMap<T>> {
        let out_node = &self.nodes[output.0];
        if out_node.value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar output, got shape {:?} at {}",
                out_node.value.shape(),
                out_node.name
            )));
        }
        if !out_node.needs_grad {
            return Err(Error::Autodiff(
                "no tape: output does not depend on any trainable leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::ONE]);

        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            self.backprop_node(idx, &grad, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf { trainable: true }) {
                grads[idx] = Some(grad); // keep for collection
            }
        }

        let mut map = GradMap::new();
        for (name, &id) in &self.bound {
            if let Op::Leaf { trainable: true } = self.nodes[id.0].op {
                let g = match grads[id.0].take() {
                    Some(g) => Tensor::from_vec(self.nodes[id.0].value.shape(), g),
                    None => Tensor::zeros(self.nodes[id.0].value.shape()),
                };
                map.insert(name.clone(), g);
            }
        }
        Ok(map)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: ValId, update: &[T]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, &u) in existing.iter_mut().zip(update.iter()) {
                    *e += u;
                }
            }
            slot => *slot = Some(update.to_vec()),
        }
    }

    fn backprop_node(&self, idx: usize, grad: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.needs(id) {
                        let g = reduce_to_shape(grad, out_shape, self.nodes[id.0].value.shape());
                        self.accumulate(grads, id, &g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    let g = reduce_to_shape(grad, out_shape, self.nodes[a.0].value.shape());
                    self.accumulate(grads, *a, &g);
                }
                if self.needs(*b) {
                    let mut g = reduce_to_shape(grad, out_shape, self.nodes[b.0].value.shape());
                    for v in &mut g {
                        *v = -*v;
                    }
                    self.accumulate(grads, *b, &g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.needs(*a) {
                    let gb = broadcast_zip(grad, out_shape, vb.data(), vb.shape(), out_shape, |g, y| g * y);
                    let g = reduce_to_shape(&gb, out_shape, va.shape());
                    self.accumulate(grads, *a, &g);
                }
                if self.needs(*b) {
                    let ga = broadcast_zip(grad, out_shape, va.data(), va.shape(), out_shape, |g, x| g * x);
                    let g = reduce_to_shape(&ga, out_shape, vb.shape());
                    self.accumulate(grads, *b, &g);
                }
            }
            Op::Scale(a, factor) => {
                if self.needs(*a) {
                    let c = T::from_f64(*factor);
                    let g: Vec<T> = grad.iter().map(|&v| v * c).collect();
                    self.accumulate(grads, *a, &g);
                }
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.needs(*a) {
                    let mut da = vec![T::ZERO; m * k];
                    matmul_nt_acc(grad, vb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = vec![T::ZERO; k * n];
                    matmul_tn_acc(va.data(), grad, &mut db, k, m, n);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Transpose2(a) => {
                if self.needs(*a) {
                    let (n, m) = (out_shape[0], out_shape[1]);
                    let mut g = vec![T::ZERO; m * n];
                    for i in 0..n {
                        for j in 0..m {
                            g[j * n + i] = grad[i * m + j];
                        }
                    }
                    self.accumulate(grads, *a, &g);
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let vx = &self.nodes[x.0].value;
                let vw = &self.nodes[w.0].value;
                let (ci, h, wdt) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                let (co, kh, kw) = (vw.shape()[0], vw.shape()[2], vw.shape()[3]);
                let q = ci * kh * kw;
                let p = out_shape[1] * out_shape[2];
                if self.needs(*w) {
                    let cols = im2col(vx.data(), ci, h, wdt, kh, kw, *stride, *pad);
                    let mut dw = vec![T::ZERO; co * q];
                    matmul_acc(grad, &cols, &mut dw, co, p, q);
                    self.accumulate(grads, *w, &dw);
                }
                if self.needs(*x) {
                    // dcols[p,q] = sum_o grad[o,p] * w[o,q]
                    let mut dcols = vec![T::ZERO; p * q];
                    matmul_tn_acc(grad, vw.data(), &mut dcols, p, co, q);
                    let mut dx = vec![T::ZERO; ci * h * wdt];
                    col2im_acc(&dcols, ci, h, wdt, kh, kw, *stride, *pad, &mut dx);
                    self.accumulate(grads, *x, &dx);
                }
                if let Some(bid) = b {
                    if self.needs(*bid) {
                        let mut db = vec![T::ZERO; co];
                        for o in 0..co {
                            for &g in &grad[o * p..(o + 1) * p] {
                                db[o] += g;
                            }
                        }
                        self.accumulate(grads, *bid, &db);
                    }
                }
            }
            Op::SoftmaxLast(a) => {
                if self.needs(*a) {
                    let y = self.nodes[idx].value.data();
                    let n = out_shape[out_shape.len() - 1];
                    let rows = y.len() / n;
                    let mut g = vec![T::ZERO; y.len()];
                    for r in 0..rows {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &grad[r * n..(r + 1) * n];
                        let mut dot = T::ZERO;
                        for i in 0..n {
                            dot += yr[i] * gr[i];
                        }
                        for i in 0..n {
                            g[r * n + i] = yr[i] * (gr[i] - dot);
                        }
                    }
                    self.accumulate(grads, *a, &g);
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, eps } => {
                self.backprop_group_norm(*x, *gamma, *beta, *groups, *eps, grad, grads);
            }
            Op::Silu(a) => {
                if self.needs(*a) {
                    let src = self.nodes[a.0].value.data();
                    let g: Vec<T> = src
                        .iter()
                        .zip(grad.iter())
                        .map(|(&v, &gv)| {
                            let sig = T::ONE / (T::ONE + (-v).exp());
                            gv * sig * (T::ONE + v * (T::ONE - sig))
                        })
                        .collect();
                    self.accumulate(grads, *a, &g);
                }
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total_block = out_shape[*axis] * inner;
                let mut offset = 0usize;
                for &id in inputs {
                    let s = self.nodes[id.0].value.shape();
                    let rows = s[*axis];
                    let block = rows * inner;
                    if self.needs(id) {
                        let mut g = vec![T::ZERO; self.nodes[id.0].value.len()];
                        for o in 0..outer {
                            let src = &grad[o * total_block + offset..o * total_block + offset + block];
                            g[o * block..(o + 1) * block].copy_from_slice(src);
                        }
                        self.accumulate(grads, id, &g);
                    }
                    offset += block;
                }
            }
            Op::Reshape(a) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, grad);
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    let n = self.nodes[a.0].value.len();
                    let gv = grad[0] * T::from_f64(1.0 / n as f64);
                    let g = vec![gv; n];
                    self.accumulate(grads, *a, &g);
                }
            }
            Op::Upsample2x(a) => {
                if self.needs(*a) {
                    let s = self.nodes[a.0].value.shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let mut g = vec![T::ZERO; c * h * w];
                    for ch in 0..c {
                        for y in 0..2 * h {
                            let sy = y / 2;
                            for x in 0..2 * w {
                                g[(ch * h + sy) * w + x / 2] +=
                                    grad[(ch * 2 * h + y) * 2 * w + x];
                            }
                        }
                    }
                    self.accumulate(grads, *a, &g);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_group_norm(
        &self,
        x: ValId,
        gamma: ValId,
        beta: ValId,
        groups: usize,
        eps: f64,
        grad: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let vx = &self.nodes[x.0].value;
        let s = vx.shape();
        let (c, hw) = (s[0], s[1] * s[2]);
        let per = c / groups;
        let n = per * hw;
        let src = vx.data();
        let gm = self.nodes[gamma.0].value.data();
        let inv_n = T::from_f64(1.0 / n as f64);
        let epst = T::from_f64(eps);

        let mut dx = if self.needs(x) { Some(vec![T::ZERO; src.len()]) } else { None };
        let mut dgamma = if self.needs(gamma) { Some(vec![T::ZERO; c]) } else { None };
        let mut dbeta = if self.needs(beta) { Some(vec![T::ZERO; c]) } else { None };

        for g in 0..groups {
            let lo = g * per * hw;
            let hi = lo + per * hw;
            let mut mean = T::ZERO;
            for &v in &src[lo..hi] {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::ZERO;
            for &v in &src[lo..hi] {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let inv_std = T::ONE / (var + epst).sqrt();

            // Per-channel reductions for the affine params.
            if dgamma.is_some() || dbeta.is_some() {
                for ch in 0..per {
                    let cidx = g * per + ch;
                    let mut sg = T::ZERO;
                    let mut sb = T::ZERO;
                    for i in 0..hw {
                        let idx = lo + ch * hw + i;
                        let xhat = (src[idx] - mean) * inv_std;
                        sg += grad[idx] * xhat;
                        sb += grad[idx];
                    }
                    if let Some(dg) = &mut dgamma {
                        dg[cidx] += sg;
                    }
                    if let Some(db) = &mut dbeta {
                        db[cidx] += sb;
                    }
                }
            }

            if let Some(dx) = &mut dx {
                // dxhat = grad * gamma; then the standard normalization adjoint.
                let mut sum_dxhat = T::ZERO;
                let mut sum_dxhat_xhat = T::ZERO;
                for ch in 0..per {
                    let gc = gm[g * per + ch];
                    for i in 0..hw {
                        let idx = lo + ch * hw + i;
                        let dxhat = grad[idx] * gc;
                        let xhat = (src[idx] - mean) * inv_std;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                }
                for ch in 0..per {
                    let gc = gm[g * per + ch];
                    for i in 0..hw {
                        let idx = lo + ch * hw + i;
                        let dxhat = grad[idx] * gc;
                        let xhat = (src[idx] - mean) * inv_std;
                        dx[idx] = inv_std
                            * inv_n
                            * (T::from_f64(n as f64) * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
            }
        }

        if let Some(dx) = dx {
            self.accumulate(grads, x, &dx);
        }
        if let Some(dg) = dgamma {
            self.accumulate(grads, gamma, &dg);
        }
        if let Some(db) = dbeta {
            self.accumulate(grads, beta, &db);
        }
    }
}
