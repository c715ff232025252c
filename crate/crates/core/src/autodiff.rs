//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to the [`Tape`]; node indices are therefore a
//! topological order. [`Tape::backward`] consumes the tape and walks it once in
//! reverse, returning a gradient for every registered parameter.
//!
//! ```
//! use scene_adapt::autodiff::Tape;
//! use scene_adapt::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum(sq);
//! let half = tape.scale(loss, 0.5);
//! let grads = tape.backward(half).unwrap();
//! assert_eq!(grads.get("w").unwrap().data(), &[1.0, -2.0, 3.0]);
//! ```

use crate::kernels::{self, ConvGeom, SepGeom};
use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulChannels(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Sqrt(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxChannels(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    LocalSepConv {
        frame: Var,
        kv: Var,
        kh: Var,
        geom: SepGeom,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    checked: bool,
}

/// Parameter gradients in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|(_, t)| t).collect()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: format!("{:?}", a.shape()),
        got: format!("{:?}", b.shape()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that rejects any op producing NaN or infinity.
    pub fn checked() -> Self {
        Self {
            checked: true,
            ..Self::default()
        }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if self.checked {
            value.check_finite(name)?;
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input: no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Param, true);
        self.params.push((name.into(), v));
        v
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push_checked(name, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x: [b,c,h,w]` times a single-channel `m: [b,1,h,w]` broadcast over channels.
    pub fn mul_channels(&mut self, x: Var, m: Var) -> Result<Var> {
        let (tx, tm) = (self.value(x), self.value(m));
        let [b, c, h, w] = tx.dims4("mul_channels")?;
        if tm.shape() != [b, 1, h, w] {
            return Err(mismatch("mul_channels", tx, tm));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(tx.len());
        for bi in 0..b {
            let mask = &tm.data()[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let plane = &tx.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                data.extend(plane.iter().zip(mask).map(|(a, b)| a * b));
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(m);
        self.push_checked("mul_channels", out, Op::MulChannels(x, m), rg)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push_checked(name, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| s * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        // NaN passes through so non-finite parameters surface in the loss
        let out = self.value(a).map(|x| if x <= 0.0 { 0.0 } else { x });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn softmax_channels(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let dims = t.dims4("softmax_channels")?;
        let out = Tensor::new(dims.to_vec(), kernels::softmax_channels(dims, t.data()))?;
        let rg = self.rg(a);
        self.push_checked("softmax_channels", out, Op::SoftmaxChannels(a), rg)
    }

    pub fn avgpool2(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let [b, c, h, w] = t.dims4("avgpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "avgpool2",
                msg: format!("spatial extents {h}x{w} must be even"),
            });
        }
        let out = Tensor::new(
            [b, c, h / 2, w / 2],
            kernels::avgpool2([b, c, h, w], t.data()),
        )?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::AvgPool2(a), rg))
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let [b, c, h, w] = t.dims4("upsample2")?;
        let out = Tensor::new(
            [b, c, 2 * h, 2 * w],
            kernels::upsample2([b, c, h, w], t.data()),
        )?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Upsample2(a), rg))
    }

    /// Concatenates `[b, c_i, h, w]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let [b, _, h, w] = first.dims4("concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let [pb, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(mismatch("concat_channels", first, self.value(p)));
            }
            total += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let out = Tensor::new([b, total, h, w], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Zero-padded 2-D cross-correlation. `weight: [co, ci, kh, kw]`, `bias: [co]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (ti, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        let [b, ci, h, w] = ti.dims4("conv2d")?;
        let [co, wci, kh, kw] = tw.dims4("conv2d")?;
        if wci != ci {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: format!("weights with {ci} input channels"),
                got: format!("{:?}", tw.shape()),
            });
        }
        if tb.shape() != [co] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: format!("bias of shape [{co}]"),
                got: format!("{:?}", tb.shape()),
            });
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                msg: format!(
                    "{kh}x{kw} kernel with pad {pad}, stride {stride} does not fit {h}x{w}"
                ),
            });
        }
        let geom = ConvGeom {
            batch: b,
            in_ch: ci,
            height: h,
            width: w,
            out_ch: co,
            kh,
            kw,
            stride,
            pad,
        };
        let (out, cols) = kernels::conv2d_forward(&geom, ti.data(), tw.data(), tb.data());
        let out = Tensor::new([b, co, geom.out_h(), geom.out_w()], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push_checked(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            rg,
        )
    }

    /// Spatially adaptive separable filtering. `frame: [b,c,h,w]`; `kv`, `kh`:
    /// `[b,n,h,w]` holding per-pixel vertical and horizontal taps (n odd).
    pub fn local_sep_conv(&mut self, frame: Var, kv: Var, kh: Var) -> Result<Var> {
        let (tf, tv, th) = (self.value(frame), self.value(kv), self.value(kh));
        let [b, c, h, w] = tf.dims4("local_sep_conv")?;
        let [vb, n, vh, vw] = tv.dims4("local_sep_conv")?;
        if (vb, vh, vw) != (b, h, w) || th.shape() != tv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "local_sep_conv",
                expected: format!("taps of shape [{b}, n, {h}, {w}] for both kernels"),
                got: format!("{:?} and {:?}", tv.shape(), th.shape()),
            });
        }
        if n % 2 == 0 {
            return Err(TensorError::EvenKernel(n));
        }
        let geom = SepGeom {
            batch: b,
            channels: c,
            height: h,
            width: w,
            taps: n,
        };
        let out = kernels::local_sep_conv_forward(&geom, tf.data(), tv.data(), th.data());
        let out = Tensor::new([b, c, h, w], out)?;
        let rg = self.rg(frame) || self.rg(kv) || self.rg(kh);
        self.push_checked(
            "local_sep_conv",
            out,
            Op::LocalSepConv {
                frame,
                kv,
                kh,
                geom,
            },
            rg,
        )
    }

    /// Consumes the tape and back-propagates from a scalar `loss`.
    /// Parameters not reached from `loss` receive zero gradients.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Tape { nodes, params, .. } = self;
        if !nodes[loss.0].value.is_scalar() {
            return Err(TensorError::NotScalar(nodes[loss.0].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape().to_vec(), 1.0));
        let mut param_grads: Vec<Option<Tensor>> = vec![None; nodes.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, node, &g, &mut grads);
            if matches!(node.op, Op::Param) {
                param_grads[i] = Some(g);
            }
        }

        let entries = params
            .into_iter()
            .map(|(name, v)| {
                let g = param_grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(nodes[v.0].value.shape().to_vec()));
                (name, g)
            })
            .collect();
        Ok(Gradients { entries })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Accumulates through a closure writing into a zeroed buffer of `v`'s shape.
fn accumulate_with(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    v: Var,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = &mut grads[v.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(nodes[v.0].value.shape().to_vec()));
    }
    f(slot.as_mut().unwrap().data_mut());
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes agree")
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Input | Op::Param => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a).clone(), val(*b).clone());
            accumulate(nodes, grads, *a, zip_map(g, &tb, |x, y| x * y));
            accumulate(nodes, grads, *b, zip_map(g, &ta, |x, y| x * y));
        }
        Op::MulChannels(x, m) => {
            let (tx, tm) = (val(*x), val(*m));
            let [b, c, h, w] = tx.dims4("mul_channels").expect("checked in forward");
            let hw = h * w;
            let (txd, tmd, gd) = (tx.data().to_vec(), tm.data().to_vec(), g.data());
            accumulate_with(nodes, grads, *x, |dx| {
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        for p in 0..hw {
                            dx[base + p] += gd[base + p] * tmd[bi * hw + p];
                        }
                    }
                }
            });
            accumulate_with(nodes, grads, *m, |dm| {
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        for p in 0..hw {
                            dm[bi * hw + p] += gd[base + p] * txd[base + p];
                        }
                    }
                }
            });
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, g.map(|x| s * x)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Abs(a) => {
            let d = zip_map(g, val(*a), |gx, x| {
                if x > 0.0 {
                    gx
                } else if x < 0.0 {
                    -gx
                } else {
                    0.0
                }
            });
            accumulate(nodes, grads, *a, d);
        }
        Op::Sqrt(a) => accumulate(
            nodes,
            grads,
            *a,
            zip_map(g, &node.value, |gx, y| gx * 0.5 / y),
        ),
        Op::Relu(a) => accumulate(
            nodes,
            grads,
            *a,
            zip_map(g, &node.value, |gx, y| if y <= 0.0 { 0.0 } else { gx }),
        ),
        Op::Sigmoid(a) => accumulate(
            nodes,
            grads,
            *a,
            zip_map(g, &node.value, |gx, y| gx * y * (1.0 - y)),
        ),
        Op::Sum(a) => {
            let gs = g.item();
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape().to_vec(), gs));
        }
        Op::Mean(a) => {
            let t = val(*a);
            let gs = g.item() / t.len() as f64;
            accumulate(nodes, grads, *a, Tensor::full(t.shape().to_vec(), gs));
        }
        Op::SoftmaxChannels(a) => {
            let dims = node.value.dims4("softmax").expect("4-axis");
            accumulate_with(nodes, grads, *a, |dx| {
                kernels::softmax_channels_backward(dims, node.value.data(), g.data(), dx)
            });
        }
        Op::AvgPool2(a) => {
            let dims = val(*a).dims4("avgpool2").expect("4-axis");
            accumulate_with(nodes, grads, *a, |dx| {
                kernels::avgpool2_backward(dims, g.data(), dx)
            });
        }
        Op::Upsample2(a) => {
            let dims = val(*a).dims4("upsample2").expect("4-axis");
            accumulate_with(nodes, grads, *a, |dx| {
                kernels::upsample2_backward(dims, g.data(), dx)
            });
        }
        Op::Concat(parts) => {
            let [b, total, h, w] = node.value.dims4("concat").expect("4-axis");
            let hw = h * w;
            let mut offset = 0;
            for &p in parts {
                let c = val(p).shape()[1];
                accumulate_with(nodes, grads, p, |dp| {
                    for bi in 0..b {
                        let src =
                            &g.data()[(bi * total + offset) * hw..(bi * total + offset + c) * hw];
                        for (d, s) in dp[bi * c * hw..(bi + 1) * c * hw].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
                offset += c;
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            cols,
        } => {
            let w = val(*weight).data();
            let mut dx = nodes[input.0]
                .requires_grad
                .then(|| vec![0.0; val(*input).len()]);
            let mut dw = nodes[weight.0]
                .requires_grad
                .then(|| vec![0.0; val(*weight).len()]);
            let mut db = nodes[bias.0]
                .requires_grad
                .then(|| vec![0.0; val(*bias).len()]);
            kernels::conv2d_backward(
                geom,
                w,
                cols,
                g.data(),
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (v, d) in [(*input, dx), (*weight, dw), (*bias, db)] {
                if let Some(d) = d {
                    let t = Tensor::new(val(v).shape().to_vec(), d).expect("sized from value");
                    accumulate(nodes, grads, v, t);
                }
            }
        }
        Op::LocalSepConv {
            frame,
            kv,
            kh,
            geom,
        } => {
            let mut df = nodes[frame.0]
                .requires_grad
                .then(|| vec![0.0; val(*frame).len()]);
            let mut dv = nodes[kv.0].requires_grad.then(|| vec![0.0; val(*kv).len()]);
            let mut dh = nodes[kh.0].requires_grad.then(|| vec![0.0; val(*kh).len()]);
            kernels::local_sep_conv_backward(
                geom,
                val(*frame).data(),
                val(*kv).data(),
                val(*kh).data(),
                g.data(),
                df.as_deref_mut(),
                dv.as_deref_mut(),
                dh.as_deref_mut(),
            );
            for (v, d) in [(*frame, df), (*kv, dv), (*kh, dh)] {
                if let Some(d) = d {
                    let t = Tensor::new(val(v).shape().to_vec(), d).expect("sized from value");
                    accumulate(nodes, grads, v, t);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param("w", t(&[2, 2], &[0.3, -1.0, 2.0, 5.0]));
        let l = tape.sum(w);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn grad_of_half_square_is_identity() {
        let data = [0.25, -1.5, 3.0];
        let mut tape = Tape::new();
        let w = tape.param("w", t(&[3], &data));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        assert_eq!(tape.backward(l).unwrap().get("w").unwrap().data(), &data);
    }

    #[test]
    fn unreached_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param("a", t(&[2], &[1.0, 2.0]));
        let _b = tape.param("b", t(&[3], &[1.0, 2.0, 3.0]));
        let l = tape.sum(a);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get("b").unwrap(), &Tensor::zeros([3]));
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.param("a", t(&[2], &[1.0, 2.0]));
        let r = tape.relu(a);
        assert_eq!(tape.backward(r), Err(TensorError::NotScalar(vec![2])));
    }

    #[test]
    fn binary_shape_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros([2]));
        let b = tape.input(Tensor::zeros([3]));
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros([1, 2, 4, 4]));
        let w = tape.param("w", Tensor::zeros([1, 3, 3, 3]));
        let b = tape.param("b", Tensor::zeros([1]));
        let err = tape.conv2d(x, w, b, 1, 1).unwrap_err();
        assert!(err.to_string().contains("2 input channels"), "{err}");
    }

    #[test]
    fn local_sep_conv_rejects_even_taps() {
        let mut tape = Tape::new();
        let f = tape.input(Tensor::zeros([1, 1, 4, 4]));
        let k = tape.input(Tensor::zeros([1, 4, 4, 4]));
        assert_eq!(
            tape.local_sep_conv(f, k, k),
            Err(TensorError::EvenKernel(4))
        );
    }

    #[test]
    fn checked_tape_flags_nan() {
        let mut tape = Tape::checked();
        let a = tape.input(t(&[1], &[-1.0]));
        assert!(matches!(
            tape.sqrt(a),
            Err(TensorError::NonFinite { op: "sqrt", .. })
        ));
    }

    #[test]
    fn fan_out_accumulates() {
        // l = sum(a*a + a) -> dl/da = 2a + 1
        let mut tape = Tape::new();
        let a = tape.param("a", t(&[2], &[1.5, -2.0]));
        let sq = tape.mul(a, a).unwrap();
        let s = tape.add(sq, a).unwrap();
        let l = tape.sum(s);
        assert_eq!(
            tape.backward(l).unwrap().get("a").unwrap().data(),
            &[4.0, -3.0]
        );
    }
}
