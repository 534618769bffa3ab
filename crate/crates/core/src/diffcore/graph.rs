//! Tape-based reverse-mode differentiation over a closed operator set.
//!
//! Every operator call evaluates eagerly and appends a node; node inputs
//! always precede the node, so the tape is acyclic by construction and
//! `backward` is a single reverse sweep.

use super::kernels::{self, ConvGeom};
use super::params::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Log(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    L2Norm(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    PadChannels {
        x: Var,
        c_in: usize,
        c_out: usize,
        plane: usize,
    },
    Reshape(Var),
    Select {
        x: Var,
        rows: Vec<usize>,
    },
    Max {
        x: Var,
        argmax: usize,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Computation graph. Parameters are leaves flagged trainable and named.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

fn dim_err<S: Into<String>>(msg: S) -> Error {
    Error::Dimension(msg.into())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        v
    }

    /// Adds every tensor of `set` as a trainable leaf, in order.
    pub fn params_from(&mut self, set: &ParamSet<T>) -> Vec<Var> {
        set.iter().map(|(n, t)| self.param(n, t.clone())).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn conv_geom(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        depthwise: bool,
    ) -> Result<ConvGeom> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(dim_err(format!(
                "conv expects NCHW input and OIkk weight, got {xs:?} / {ws:?}"
            )));
        }
        let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, k) = if depthwise {
            if ws[0] != c_in || ws[1] != 1 {
                return Err(dim_err(format!(
                    "depthwise weight {ws:?} does not match {c_in} channels"
                )));
            }
            (c_in, ws[2])
        } else {
            if ws[1] != c_in {
                return Err(dim_err(format!(
                    "conv weight {ws:?} does not match {c_in} input channels"
                )));
            }
            (ws[0], ws[2])
        };
        if bs != [c_out] {
            return Err(dim_err(format!(
                "bias {bs:?} does not match {c_out} output channels"
            )));
        }
        let h_out = kernels::out_size(h, k, stride, pad).ok_or_else(|| {
            dim_err(format!(
                "kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}"
            ))
        })?;
        let w_out = kernels::out_size(wd, k, stride, pad).ok_or_else(|| {
            dim_err(format!(
                "kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}"
            ))
        })?;
        Ok(ConvGeom {
            n,
            c_in,
            h,
            w: wd,
            c_out,
            k,
            stride,
            pad,
            h_out,
            w_out,
        })
    }

    /// 2-D convolution over NCHW input; weight is out×in×k×k.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom(x, w, b, stride, pad, false)?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::new(&[geom.n, geom.c_out, geom.h_out, geom.w_out], out)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// Per-channel convolution; weight is channels×1×k×k.
    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = self.conv_geom(x, w, b, stride, pad, true)?;
        let out = kernels::depthwise_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::new(&[geom.n, geom.c_in, geom.h_out, geom.w_out], out)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Depthwise { x, w, b, geom }, ng))
    }

    /// `x` (N×D) · `w` (D×M) + `b` (M).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(dim_err(format!("linear shapes {xs:?} · {ws:?} + {bs:?}")));
        }
        let (rows, inner, cols) = (xs[0], xs[1], ws[1]);
        let out = kernels::matmul_bias(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            rows,
            inner,
            cols,
        );
        let value = Tensor::new(&[rows, cols], out)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(
            value,
            Op::Linear {
                x,
                w,
                b,
                rows,
                inner,
                cols,
            },
            ng,
        ))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|v| T::from_f64(f(v.to_f64())))
            .collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let ng = self.needs(&[x]);
        self.push(value, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Logistic function, kept strictly inside (0, 1) at the element precision.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| {
            sigmoid(v).clamp(T::MIN_POSITIVE, T::BELOW_ONE)
        })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Natural log. Inputs must be positive.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| T::from_f64(f(x.to_f64(), y.to_f64())))
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_err(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for v in xs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err(format!(
                    "concat shapes {base:?} vs {s:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        let ng = self.needs(xs);
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(dim_err(format!("mean over axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len)
                    .map(|a| src[(o * len + a) * inner + i].to_f64())
                    .sum();
                data.push(T::from_f64(s / len as f64));
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Mean { x, axis }, ng))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), ng)
    }

    /// Euclidean norm over the last axis. A vector yields a scalar; an N×D
    /// matrix yields N norms.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&d, outer_shape)) = shape.split_last() else {
            return Err(dim_err("l2_norm of a scalar"));
        };
        let src = self.value(x).data();
        let data: Vec<T> = src
            .chunks(d.max(1))
            .map(|row| T::from_f64(row.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt()))
            .collect();
        let value = Tensor::new(outer_shape, data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::L2Norm(x), ng))
    }

    /// Max pooling over NCHW input without padding.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 {
            return Err(dim_err(format!("max_pool2d expects NCHW, got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let h_out = kernels::out_size(h, k, stride, 0)
            .ok_or_else(|| dim_err(format!("pool {k}/{stride} does not fit {h}x{w}")))?;
        let w_out = kernels::out_size(w, k, stride, 0)
            .ok_or_else(|| dim_err(format!("pool {k}/{stride} does not fit {h}x{w}")))?;
        let src = self.value(x).data();
        let planes = s[0] * s[1];
        let mut data = Vec::with_capacity(planes * h_out * w_out);
        let mut argmax = Vec::with_capacity(planes * h_out * w_out);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    data.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[s[0], s[1], h_out, w_out], data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, ng))
    }

    /// Appends zero channels to an NCHW tensor.
    pub fn pad_channels(&mut self, x: Var, c_out: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || c_out < s[1] {
            return Err(dim_err(format!("cannot pad {s:?} to {c_out} channels")));
        }
        let plane = s[2] * s[3];
        let c_in = s[1];
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; s[0] * c_out * plane];
        for n in 0..s[0] {
            data[n * c_out * plane..(n * c_out + c_in) * plane]
                .copy_from_slice(&src[n * c_in * plane..(n + 1) * c_in * plane]);
        }
        let value = Tensor::new(&[s[0], c_out, s[2], s[3]], data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::PadChannels {
                x,
                c_in,
                c_out,
                plane,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Gathers entries along axis 0 (rows of a matrix, elements of a vector).
    pub fn select(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(dim_err("select on a scalar"));
        }
        if let Some(bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(dim_err(format!(
                "select index {bad} out of range for {s:?}"
            )));
        }
        let inner: usize = s[1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&src[r * inner..(r + 1) * inner]);
        }
        let mut shape = s;
        shape[0] = rows.len();
        let value = Tensor::new(&shape, data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::Select {
                x,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Largest element, as a scalar. Ties go to the lowest index.
    pub fn max(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x).data();
        if src.is_empty() {
            return Err(dim_err("max of an empty tensor"));
        }
        let mut argmax = 0;
        for (i, v) in src.iter().enumerate() {
            if *v > src[argmax] {
                argmax = i;
            }
        }
        let value = Tensor::scalar(src[argmax]);
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Max { x, argmax }, ng))
    }

    /// Mean softmax cross-entropy of N×C logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(dim_err(format!("logits {s:?} vs {} labels", labels.len())));
        }
        let c = s[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(dim_err(format!("label {bad} out of range for {c} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = Vec::with_capacity(src.len());
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = softmax(&src[i * c..(i + 1) * c]);
            loss -= row[label].max(f64::MIN_POSITIVE).ln();
            probs.extend(row);
        }
        let value = Tensor::scalar(T::from_f64(loss / labels.len() as f64));
        let ng = self.needs(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.map(|g| {
                    Tensor::new(n.value.shape(), g.into_iter().map(T::from_f64).collect())
                        .expect("grad shape")
                })
            })
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: impl IntoIterator<Item = f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            slot @ None => *slot = Some(g.into_iter().collect()),
        }
    }

    fn vals(&self, v: Var) -> Vec<f64> {
        self.value(v).to_f64_vec()
    }

    fn cast_grad(g: &[f64]) -> Vec<T> {
        g.iter().map(|v| T::from_f64(*v)).collect()
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        gout: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } | Op::Depthwise { x, w, b, geom } => {
                let depthwise = matches!(node.op, Op::Depthwise { .. });
                let need_x = self.nodes[x.0].needs_grad;
                let g = Self::cast_grad(gout);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let (gx, gw, gb) = if depthwise {
                    kernels::depthwise_backward(xv, wv, &g, geom, need_x)
                } else {
                    kernels::conv2d_backward(xv, wv, &g, geom, need_x)
                };
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx.into_iter().map(Real::to_f64));
                }
                self.accumulate(grads, *w, gw.into_iter().map(Real::to_f64));
                self.accumulate(grads, *b, gb.into_iter().map(Real::to_f64));
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                inner,
                cols,
            } => {
                let need_x = self.nodes[x.0].needs_grad;
                let g = Self::cast_grad(gout);
                let (gx, gw, gb) = kernels::matmul_bias_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    &g,
                    *rows,
                    *inner,
                    *cols,
                    need_x,
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx.into_iter().map(Real::to_f64));
                }
                self.accumulate(grads, *w, gw.into_iter().map(Real::to_f64));
                self.accumulate(grads, *b, gb.into_iter().map(Real::to_f64));
            }
            Op::Relu(x) => {
                let xv = self.vals(*x);
                self.accumulate(
                    grads,
                    *x,
                    gout.iter()
                        .zip(xv)
                        .map(|(g, v)| if v > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::Sigmoid(x) => {
                let y = node.value.to_f64_vec();
                self.accumulate(
                    grads,
                    *x,
                    gout.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)),
                );
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.iter().copied());
                self.accumulate(grads, *b, gout.iter().copied());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.iter().copied());
                self.accumulate(grads, *b, gout.iter().map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                self.accumulate(grads, *a, gout.iter().zip(&bv).map(|(g, y)| g * y));
                self.accumulate(grads, *b, gout.iter().zip(&av).map(|(g, x)| g * x));
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, gout.iter().map(|g| g * c));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, gout.iter().copied());
            }
            Op::Square(x) => {
                let xv = self.vals(*x);
                self.accumulate(grads, *x, gout.iter().zip(xv).map(|(g, v)| 2.0 * v * g));
            }
            Op::Log(x) => {
                let xv = self.vals(*x);
                self.accumulate(grads, *x, gout.iter().zip(xv).map(|(g, v)| g / v));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.vals(*x);
                self.accumulate(
                    grads,
                    *x,
                    gout.iter()
                        .zip(xv)
                        .map(|(g, v)| if v >= *lo && v <= *hi { *g } else { 0.0 }),
                );
            }
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for v in xs {
                    let block = self.shape(*v)[*axis] * inner;
                    let mut g = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        g.extend_from_slice(&gout[o * total + offset..o * total + offset + block]);
                    }
                    self.accumulate(grads, *v, g);
                    offset += block;
                }
            }
            Op::Mean { x, axis } => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let len = s[*axis];
                let inner: usize = s[axis + 1..].iter().product();
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            g[(o * len + a) * inner + i] = gout[o * inner + i] / len as f64;
                        }
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, std::iter::repeat_n(gout[0], n));
            }
            Op::L2Norm(x) => {
                let xv = self.vals(*x);
                let d = *self.shape(*x).last().expect("rank >= 1");
                let norms = node.value.to_f64_vec();
                let mut g = Vec::with_capacity(xv.len());
                for (r, row) in xv.chunks(d.max(1)).enumerate() {
                    let nrm = norms[r];
                    for v in row {
                        // Subgradient 0 at the origin.
                        g.push(if nrm > 0.0 { gout[r] * v / nrm } else { 0.0 });
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::MaxPool { x, argmax } => {
                let mut g = vec![0.0; self.value(*x).len()];
                for (go, &src) in gout.iter().zip(argmax) {
                    g[src] += go;
                }
                self.accumulate(grads, *x, g);
            }
            Op::PadChannels {
                x,
                c_in,
                c_out,
                plane,
            } => {
                let n = self.shape(*x)[0];
                let mut g = Vec::with_capacity(n * c_in * plane);
                for i in 0..n {
                    g.extend_from_slice(&gout[i * c_out * plane..(i * c_out + c_in) * plane]);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Select { x, rows } => {
                let s = self.shape(*x);
                let inner: usize = s[1..].iter().product();
                let mut g = vec![0.0; self.value(*x).len()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..inner {
                        g[r * inner + j] += gout[i * inner + j];
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::Max { x, argmax } => {
                let mut g = vec![0.0; self.value(*x).len()];
                g[*argmax] = gout[0];
                self.accumulate(grads, *x, g);
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let n = labels.len() as f64;
                let mut g = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    g[i * c + l] -= 1.0;
                }
                self.accumulate(grads, *logits, g.into_iter().map(|v| v * gout[0] / n));
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn param(&self, name: &str) -> Option<Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| self.wrt(*v))
    }

    /// Gradients of every trainable parameter, in registration order.
    pub fn to_param_set(&self) -> ParamSet<T> {
        self.params
            .iter()
            .map(|(n, v)| (n.clone(), self.wrt(*v)))
            .collect()
    }
}
