//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so node index order is a valid
//! topological order and `backward` simply walks the node list in reverse.
//! A graph is meant to live for one forward/backward pass and then be
//! dropped.

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::snn::surrogate_grad;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    LnFloor {
        x: Var,
        floor: f64,
    },
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    AvgPool2d {
        x: Var,
        k: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Spike {
        x: Var,
        threshold: f64,
        width: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::dim(
            op,
            format!("axis {axis} out of range for shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// How two operands of an elementwise op line up.
#[derive(Clone, Copy)]
enum Pairing {
    Same,
    LeftScalar,
    RightScalar,
}

fn pairing(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Pairing> {
    if a.shape() == b.shape() {
        Ok(Pairing::Same)
    } else if a.is_scalar() {
        Ok(Pairing::LeftScalar)
    } else if b.is_scalar() {
        Ok(Pairing::RightScalar)
    } else {
        Err(Error::dim(
            op,
            format!(
                "shapes {:?} and {:?} neither match nor include a scalar",
                a.shape(),
                b.shape()
            ),
        ))
    }
}

fn zip_pair(a: &Tensor, b: &Tensor, p: Pairing, f: impl Fn(f64, f64) -> f64) -> Tensor {
    match p {
        Pairing::Same => Tensor::from_parts(
            a.shape().to_vec(),
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        ),
        Pairing::LeftScalar => {
            let s = a.item();
            b.map(|y| f(s, y))
        }
        Pairing::RightScalar => {
            let s = b.item();
            a.map(|x| f(x, s))
        }
    }
}

/// Reduces a gradient onto an operand that may have been broadcast as a scalar.
fn reduce_to(target: &Tensor, g: Tensor) -> Tensor {
    if target.is_scalar() && !g.is_scalar() {
        Tensor::scalar(g.sum())
    } else {
        g
    }
}

impl Graph {
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
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let p = pairing("add", ta, tb)?;
        let out = zip_pair(ta, tb, p, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let p = pairing("sub", ta, tb)?;
        let out = zip_pair(ta, tb, p, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let p = pairing("mul", ta, tb)?;
        let out = zip_pair(ta, tb, p, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("softmax", t, axis)?;
        let (outer, n, inner) = kernels::axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + j;
                let m = (0..n)
                    .map(|i| src[idx(i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..n {
                    let e = (src[idx(i)] - m).exp();
                    out[idx(i)] = e;
                    z += e;
                }
                for i in 0..n {
                    out[idx(i)] /= z;
                }
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("log_softmax", t, axis)?;
        let (outer, n, inner) = kernels::axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + j;
                let m = (0..n)
                    .map(|i| src[idx(i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..n).map(|i| (src[idx(i)] - m).exp()).sum::<f64>().ln();
                for i in 0..n {
                    out[idx(i)] = src[idx(i)] - lse;
                }
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSoftmax { x, axis }, rg))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floor(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.rg(&[x]);
        self.push(out, Op::LnFloor { x, floor }, rg)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    fn reduce_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<(Vec<usize>, Vec<f64>)> {
        let t = self.value(x);
        check_axis(op, t, axis)?;
        let (outer, n, inner) = kernels::axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let row = &src[(o * n + i) * inner..][..inner];
                for (acc, v) in out[o * inner..][..inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        Ok((shape, out))
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, out) = self.reduce_axis(x, axis, "sum_axis")?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SumAxis { x, axis }, rg))
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, mut out) = self.reduce_axis(x, axis, "mean")?;
        let n = self.value(x).shape()[axis] as f64;
        out.iter_mut().for_each(|v| *v /= n);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MeanAxis { x, axis }, rg))
    }

    /// Non-overlapping `k`×`k` average pooling of `[N, C, H, W]`.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::dim(
                "avg_pool2d",
                format!("expected [N,C,H,W], got {s:?}"),
            ));
        }
        if k == 0 || s[2] < k || s[3] < k {
            return Err(Error::dim(
                "avg_pool2d",
                format!("window {k} does not fit spatial axes H={} W={}", s[2], s[3]),
            ));
        }
        let out = kernels::avg_pool_forward(t.data(), s[0] * s[1], s[2], s[3], k);
        let shape = vec![s[0], s[1], s[2] / k, s[3] / k];
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AvgPool2d { x, k }, rg))
    }

    /// 2-D cross-correlation of `[N, C, H, W]` with `[F, C, kH, kW]` plus `[F]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let geom = conv_geometry(tx.shape(), tw.shape(), tb.shape(), stride, padding)?;
        let out = kernels::conv2d_forward(tx.data(), tw.data(), tb.data(), &geom);
        let shape = vec![geom.batch, geom.filters, geom.out_h(), geom.out_w()];
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d { x, w, b, geom },
            rg,
        ))
    }

    /// `x · wᵀ + b` for `x: [N, D]`, `w: [K, D]`, `b: [K]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (n, d, k) = linear_dims(tx.shape(), tw.shape(), tb.shape())?;
        let out = kernels::linear_forward(tx.data(), tw.data(), tb.data(), n, d, k);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::from_parts(vec![n, k], out),
            Op::Linear { x, w, b },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no operands"))?;
        let base = self.value(*first).shape().to_vec();
        check_axis("concat", self.value(*first), axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let mismatch = s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b);
            if mismatch {
                return Err(Error::dim(
                    "concat",
                    format!("shape {s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..][..chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Selects rows along axis 0, in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 || rows.is_empty() {
            return Err(Error::dim(
                "gather_rows",
                "need a non-scalar input and at least one row",
            ));
        }
        let n = t.shape()[0];
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} out of range for {n} rows"),
            ));
        }
        let inner = t.numel() / n;
        let mut out = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            out.extend_from_slice(&t.data()[r * inner..][..inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Heaviside step `x >= threshold` whose backward pass substitutes the
    /// arctan surrogate derivative evaluated at `x - threshold`.
    pub fn spike(&mut self, x: Var, threshold: f64, width: f64) -> Var {
        let out = self
            .value(x)
            .map(|v| if v >= threshold { 1.0 } else { 0.0 });
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::Spike {
                x,
                threshold,
                width,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Gradients of trainable leaves are
    /// added to whatever earlier passes left there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape().to_vec(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(acc) => acc.add_assign(&g),
                    None => *slot = Some(g),
                }
                continue;
            }
            for (v, contrib) in self.local_grads(i, g)? {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for its inputs.
    fn local_grads(&self, i: usize, g: Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => {
                let ga = reduce_to(val(*a), g.clone());
                let gb = reduce_to(val(*b), g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sub(a, b) => {
                let ga = reduce_to(val(*a), g.clone());
                let gb = reduce_to(val(*b), g.map(|v| -v));
                vec![(*a, ga), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let p = pairing("mul", ta, tb)?;
                let ga = reduce_to(ta, zip_pair(&g, tb, rhs_pairing(p), |gv, y| gv * y));
                let gb = reduce_to(tb, zip_pair(&g, ta, lhs_pairing(p), |gv, x| gv * x));
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|v| v * c))],
            Op::AddScalar(x) => vec![(*x, g)],
            Op::Relu(x) => {
                let tx = val(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(*x, Tensor::from_parts(tx.shape().to_vec(), d))]
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, n, inner) = kernels::axis_split(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + j;
                        let dot: f64 = (0..n).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                        for k in 0..n {
                            gx[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(y.shape().to_vec(), gx))]
            }
            Op::LogSoftmax { x, axis } => {
                let y = &node.value;
                let (outer, n, inner) = kernels::axis_split(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + j;
                        let gsum: f64 = (0..n).map(|k| gd[idx(k)]).sum();
                        for k in 0..n {
                            gx[idx(k)] = gd[idx(k)] - yd[idx(k)].exp() * gsum;
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(y.shape().to_vec(), gx))]
            }
            Op::LnFloor { x, floor } => {
                let tx = val(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > *floor { gv / xv } else { 0.0 })
                    .collect();
                vec![(*x, Tensor::from_parts(tx.shape().to_vec(), d))]
            }
            Op::Sum(x) => {
                let s = g.item();
                vec![(*x, Tensor::full(val(*x).shape().to_vec(), s))]
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let tx = val(*x);
                let (outer, n, inner) = kernels::axis_split(tx.shape(), *axis);
                let scale = if matches!(node.op, Op::MeanAxis { .. }) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let gd = g.data();
                let mut gx = vec![0.0; tx.numel()];
                for o in 0..outer {
                    for k in 0..n {
                        let dst = &mut gx[(o * n + k) * inner..][..inner];
                        for (d, s) in dst.iter_mut().zip(&gd[o * inner..][..inner]) {
                            *d = s * scale;
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(tx.shape().to_vec(), gx))]
            }
            Op::AvgPool2d { x, k } => {
                let s = val(*x).shape();
                let gx = kernels::avg_pool_backward(g.data(), s[0] * s[1], s[2], s[3], *k);
                vec![(*x, Tensor::from_parts(s.to_vec(), gx))]
            }
            Op::Conv2d { x, w, b, geom } => {
                let (tx, tw) = (val(*x), val(*w));
                let (gx, gw, gb) = kernels::conv2d_backward(tx.data(), tw.data(), g.data(), geom);
                vec![
                    (*x, Tensor::from_parts(tx.shape().to_vec(), gx)),
                    (*w, Tensor::from_parts(tw.shape().to_vec(), gw)),
                    (*b, Tensor::from_parts(val(*b).shape().to_vec(), gb)),
                ]
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (n, d) = (tx.shape()[0], tx.shape()[1]);
                let k = tw.shape()[0];
                let (gx, gw, gb) =
                    kernels::linear_backward(tx.data(), tw.data(), g.data(), n, d, k);
                vec![
                    (*x, Tensor::from_parts(vec![n, d], gx)),
                    (*w, Tensor::from_parts(vec![k, d], gw)),
                    (*b, Tensor::from_parts(vec![k], gb)),
                ]
            }
            Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                vec![(*x, Tensor::from_parts(shape, g.into_data()))]
            }
            Op::Concat { parts, axis } => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let tp = val(p);
                    let chunk = tp.shape()[*axis] * inner;
                    let mut gp = Vec::with_capacity(tp.numel());
                    for o in 0..outer {
                        gp.extend_from_slice(&g.data()[o * total + offset..][..chunk]);
                    }
                    offset += chunk;
                    res.push((p, Tensor::from_parts(tp.shape().to_vec(), gp)));
                }
                res
            }
            Op::GatherRows { x, rows } => {
                let tx = val(*x);
                let inner = tx.numel() / tx.shape()[0];
                let mut gx = vec![0.0; tx.numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for (d, s) in gx[r * inner..][..inner]
                        .iter_mut()
                        .zip(&g.data()[k * inner..][..inner])
                    {
                        *d += s;
                    }
                }
                vec![(*x, Tensor::from_parts(tx.shape().to_vec(), gx))]
            }
            Op::Spike {
                x,
                threshold,
                width,
            } => {
                let tx = val(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| gv * surrogate_grad(xv - threshold, *width))
                    .collect();
                vec![(*x, Tensor::from_parts(tx.shape().to_vec(), d))]
            }
        };
        Ok(out)
    }
}

// Pairings used when multiplying the upstream gradient (shaped like the
// output) by the other operand.
fn rhs_pairing(p: Pairing) -> Pairing {
    match p {
        Pairing::Same => Pairing::Same,
        // a scalar, b full: g and b are both full
        Pairing::LeftScalar => Pairing::Same,
        Pairing::RightScalar => Pairing::RightScalar,
    }
}

fn lhs_pairing(p: Pairing) -> Pairing {
    match p {
        Pairing::Same => Pairing::Same,
        Pairing::LeftScalar => Pairing::RightScalar,
        Pairing::RightScalar => Pairing::Same,
    }
}

pub(crate) fn conv_geometry(
    x: &[usize],
    w: &[usize],
    b: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    if x.len() != 4 {
        return Err(Error::dim(
            "conv2d",
            format!("input must be [N,C,H,W], got {x:?}"),
        ));
    }
    if w.len() != 4 {
        return Err(Error::dim(
            "conv2d",
            format!("kernel must be [F,C,kH,kW], got {w:?}"),
        ));
    }
    if x[1] != w[1] {
        return Err(Error::dim(
            "conv2d",
            format!("channel axis: input C={} but kernel C={}", x[1], w[1]),
        ));
    }
    if b != [w[0]] {
        return Err(Error::dim(
            "conv2d",
            format!("bias axis: expected [{}], got {b:?}", w[0]),
        ));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d", "stride must be >= 1"));
    }
    if w[2] > x[2] + 2 * padding {
        return Err(Error::dim(
            "conv2d",
            format!(
                "height axis: kernel {} exceeds padded input {}",
                w[2],
                x[2] + 2 * padding
            ),
        ));
    }
    if w[3] > x[3] + 2 * padding {
        return Err(Error::dim(
            "conv2d",
            format!(
                "width axis: kernel {} exceeds padded input {}",
                w[3],
                x[3] + 2 * padding
            ),
        ));
    }
    Ok(ConvGeom {
        batch: x[0],
        in_channels: x[1],
        height: x[2],
        width: x[3],
        filters: w[0],
        kernel_h: w[2],
        kernel_w: w[3],
        stride,
        padding,
    })
}

fn linear_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if x.len() != 2 || w.len() != 2 {
        return Err(Error::dim(
            "linear",
            format!("expected input [N,D] and weight [K,D], got {x:?} and {w:?}"),
        ));
    }
    if x[1] != w[1] {
        return Err(Error::dim(
            "linear",
            format!("inner axis: input D={} but weight D={}", x[1], w[1]),
        ));
    }
    if b != [w[0]] {
        return Err(Error::dim(
            "linear",
            format!("bias: expected [{}], got {b:?}", w[0]),
        ));
    }
    Ok((x[0], x[1], w[0]))
}
