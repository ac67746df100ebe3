//! Reverse-mode differentiation over a define-by-run tape.
//!
//! A [`CompGraph`] records every operation as it executes. Nodes are stored in
//! execution order, which is already a topological order, so the backward pass
//! is a single reverse sweep that accumulates gradients additively across
//! fan-out. The operator set is exactly what the forecasting network needs:
//! affine maps, 1-D convolution, a tanh recurrent step, elementwise
//! activations, concatenation/slicing, reshape, and scalar reductions.
//!
//! Graphs are single-threaded; distinct graphs may run on distinct threads.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`CompGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Padding mode for [`CompGraph::conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output keeps the input's time length. Kernel must be odd.
    Same,
    /// No padding; output length shrinks to `len - kernel + 1`.
    Valid,
}

/// Elementwise activation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the *output* value (tanh) or the input (relu).
    fn derivative(self, input: f64, output: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - output * output,
            Activation::Relu => {
                if input > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// y = x W + b, broadcast over the leading (row) dimension.
    Dense {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    /// Sliding dot product along the time axis; kernel is `[k, c_in, c_out]`.
    Conv1d {
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        padding: Padding,
    },
    /// h = tanh(b + U^T h_prev + W^T v).
    RnnStep {
        h_prev: NodeId,
        input: NodeId,
        recurrent: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Activation {
        x: NodeId,
        kind: Activation,
    },
    /// Concatenate rank-2 tensors along `axis` (0 = time, 1 = features).
    Concat {
        xs: Vec<NodeId>,
        axis: usize,
    },
    /// Extract row `index` of a rank-2 tensor as a rank-1 tensor.
    Row {
        x: NodeId,
        index: usize,
    },
    /// Stack equal-length rank-1 tensors into a rank-2 tensor.
    StackRows {
        xs: Vec<NodeId>,
    },
    Reshape {
        x: NodeId,
    },
    /// Scalar sum of all elements.
    Sum {
        x: NodeId,
    },
    /// Scalar dot product with a fixed weight tensor (not a graph node).
    WeightedSum {
        x: NodeId,
        weights: Tensor,
    },
    /// Mean squared error over all elements; gradient flows to both sides.
    Mse {
        pred: NodeId,
        truth: NodeId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Record of a forward computation supporting reverse-mode differentiation.
#[derive(Default)]
pub struct CompGraph {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl CompGraph {
    pub fn new() -> Self {
        CompGraph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to node `id`.
    /// `None` before any backward pass.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        self.grads.get(id.0).map(|g| {
            Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                .expect("gradient shape matches value shape")
        })
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Insert an input/parameter node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Affine map `x W + b`. `x` may be rank-1 `[d_in]` or rank-2 `[rows, d_in]`.
    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (
            &self.nodes[x.0].value,
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
        );
        if wv.rank() != 2 {
            return Err(Error::shape("dense weight", wv.shape(), &[0, 0]));
        }
        let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
        if xv.cols() != d_in || xv.rank() > 2 {
            return Err(Error::shape("dense input vs weight", xv.shape(), wv.shape()));
        }
        if bv.shape() != [d_out] {
            return Err(Error::shape("dense bias vs weight", bv.shape(), wv.shape()));
        }
        let rows = xv.rows();
        let mut out = vec![0.0; rows * d_out];
        for r in 0..rows {
            for j in 0..d_out {
                let mut acc = bv.data()[j];
                for i in 0..d_in {
                    acc += xv.data()[r * d_in + i] * wv.data()[i * d_out + j];
                }
                out[r * d_out + j] = acc;
            }
        }
        let shape = if xv.rank() == 1 {
            vec![d_out]
        } else {
            vec![rows, d_out]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Dense { x, weight, bias }, value))
    }

    /// 1-D convolution along the time axis. `x` is `[len, c_in]`, `kernel` is
    /// `[k, c_in, c_out]`, `bias` is `[c_out]`. `Same` keeps the time length
    /// (zero padding, odd kernel only); `Valid` yields `len - k + 1` steps.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let (xv, kv, bv) = (
            &self.nodes[x.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
        );
        if xv.rank() != 2 || kv.rank() != 3 {
            return Err(Error::shape("conv1d input/kernel rank", xv.shape(), kv.shape()));
        }
        let (len, c_in) = (xv.shape()[0], xv.shape()[1]);
        let (k, kc_in, c_out) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        if kc_in != c_in {
            return Err(Error::shape("conv1d channels", xv.shape(), kv.shape()));
        }
        if bv.shape() != [c_out] {
            return Err(Error::shape("conv1d bias", bv.shape(), kv.shape()));
        }
        if k > len {
            return Err(Error::Window(format!(
                "conv1d kernel length {k} exceeds input length {len}"
            )));
        }
        if padding == Padding::Same && k % 2 == 0 {
            return Err(Error::Config(format!(
                "same-padded conv1d requires an odd kernel length, got {k}"
            )));
        }
        let (out_len, offset) = match padding {
            Padding::Same => (len, (k - 1) / 2),
            Padding::Valid => (len - k + 1, 0),
        };
        let mut out = vec![0.0; out_len * c_out];
        for t in 0..out_len {
            for co in 0..c_out {
                let mut acc = bv.data()[co];
                for dt in 0..k {
                    let src = t + dt;
                    if src < offset || src - offset >= len {
                        continue; // zero padding
                    }
                    let row = src - offset;
                    for ci in 0..c_in {
                        acc += kv.data()[(dt * c_in + ci) * c_out + co]
                            * xv.data()[row * c_in + ci];
                    }
                }
                out[t * c_out + co] = acc;
            }
        }
        let value = Tensor::new(vec![out_len, c_out], out)?;
        Ok(self.push(
            Op::Conv1d {
                x,
                kernel,
                bias,
                padding,
            },
            value,
        ))
    }

    /// One recurrent update: `h = tanh(b + U^T h_prev + W^T v)` with
    /// `h_prev: [u]`, `v: [d]`, `recurrent U: [u, u]`, `weight W: [d, u]`,
    /// `bias b: [u]`. Differentiable through both `h_prev` and `v`, so
    /// chaining steps on the tape gives backpropagation through time.
    pub fn rnn_step(
        &mut self,
        h_prev: NodeId,
        input: NodeId,
        recurrent: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId> {
        let (hv, vv, uv, wv, bv) = (
            &self.nodes[h_prev.0].value,
            &self.nodes[input.0].value,
            &self.nodes[recurrent.0].value,
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
        );
        let u = hv.len();
        let d = vv.len();
        if hv.rank() != 1 || vv.rank() != 1 {
            return Err(Error::shape("rnn_step state/input rank", hv.shape(), vv.shape()));
        }
        if uv.shape() != [u, u] {
            return Err(Error::shape("rnn_step recurrent matrix", uv.shape(), &[u, u]));
        }
        if wv.shape() != [d, u] {
            return Err(Error::shape("rnn_step input matrix", wv.shape(), &[d, u]));
        }
        if bv.shape() != [u] {
            return Err(Error::shape("rnn_step bias", bv.shape(), &[u]));
        }
        let mut out = vec![0.0; u];
        for (j, slot) in out.iter_mut().enumerate() {
            let mut acc = bv.data()[j];
            for i in 0..u {
                acc += uv.data()[i * u + j] * hv.data()[i];
            }
            for i in 0..d {
                acc += wv.data()[i * u + j] * vv.data()[i];
            }
            *slot = acc.tanh();
        }
        Ok(self.push(
            Op::RnnStep {
                h_prev,
                input,
                recurrent,
                weight,
                bias,
            },
            Tensor::vector(out),
        ))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| kind.apply(v));
        self.push(Op::Activation { x, kind }, value)
    }

    /// Concatenate rank-2 tensors along `axis`. All other dimensions must agree.
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Contract("concat of an empty tensor list".into()));
        }
        if axis > 1 {
            return Err(Error::Config(format!("concat axis must be 0 or 1, got {axis}")));
        }
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        if first.len() != 2 {
            return Err(Error::shape("concat input rank", &first, &[0, 0]));
        }
        let other_axis = 1 - axis;
        let mut cat_dim = 0;
        for &id in xs {
            let s = self.nodes[id.0].value.shape();
            if s.len() != 2 || s[other_axis] != first[other_axis] {
                return Err(Error::shape("concat inputs", s, &first));
            }
            cat_dim += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = cat_dim;
        let (rows, cols) = (shape[0], shape[1]);
        let mut out = vec![0.0; rows * cols];
        match axis {
            0 => {
                let mut row_base = 0;
                for &id in xs {
                    let v = &self.nodes[id.0].value;
                    let n = v.len();
                    out[row_base * cols..row_base * cols + n].copy_from_slice(v.data());
                    row_base += v.shape()[0];
                }
            }
            _ => {
                let mut col_base = 0;
                for &id in xs {
                    let v = &self.nodes[id.0].value;
                    let w = v.shape()[1];
                    for r in 0..rows {
                        out[r * cols + col_base..r * cols + col_base + w]
                            .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
                    }
                    col_base += w;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            value,
        ))
    }

    /// Row `index` of a rank-2 tensor as a vector.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 {
            return Err(Error::shape("row source rank", v.shape(), &[0, 0]));
        }
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        if index >= rows {
            return Err(Error::Contract(format!(
                "row index {index} out of range for {rows} rows"
            )));
        }
        let value = Tensor::vector(v.data()[index * cols..(index + 1) * cols].to_vec());
        Ok(self.push(Op::Row { x, index }, value))
    }

    /// Stack rank-1 tensors of equal length into a `[n, len]` tensor.
    pub fn stack_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Contract("stack_rows of an empty tensor list".into()));
        }
        let cols = self.nodes[xs[0].0].value.len();
        let mut out = Vec::with_capacity(xs.len() * cols);
        for &id in xs {
            let v = &self.nodes[id.0].value;
            if v.rank() != 1 || v.len() != cols {
                return Err(Error::shape("stack_rows inputs", v.shape(), &[cols]));
            }
            out.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![xs.len(), cols], out)?;
        Ok(self.push(Op::StackRows { xs: xs.to_vec() }, value))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.nodes[x.0].value.reshaped(shape)?;
        Ok(self.push(Op::Reshape { x }, value))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(s))
    }

    /// Dot product with a constant weight tensor of the same shape; used to
    /// select and sum a subset of output entries.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Tensor) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        if v.shape() != weights.shape() {
            return Err(Error::shape("weighted_sum weights", weights.shape(), v.shape()));
        }
        let s: f64 = v
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Op::WeightedSum { x, weights }, Tensor::scalar(s)))
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: NodeId, truth: NodeId) -> Result<NodeId> {
        let (pv, tv) = (&self.nodes[pred.0].value, &self.nodes[truth.0].value);
        if pv.shape() != tv.shape() {
            return Err(Error::shape("mse operands", pv.shape(), tv.shape()));
        }
        let n = pv.len() as f64;
        let s: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Op::Mse { pred, truth }, Tensor::scalar(s / n)))
    }

    /// Reverse sweep from a scalar loss node. Gradients for every node are
    /// reset to zero first, then accumulated additively across fan-out.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        self.grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut self.grads[i]);
            if g.iter().all(|&v| v == 0.0) {
                self.grads[i] = g;
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Dense { x, weight, bias } => {
                    let xv = self.nodes[x.0].value.clone();
                    let wv = self.nodes[weight.0].value.clone();
                    let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.rows();
                    for r in 0..rows {
                        for j in 0..d_out {
                            let gy = g[r * d_out + j];
                            self.grads[bias.0][j] += gy;
                            for ii in 0..d_in {
                                self.grads[weight.0][ii * d_out + j] +=
                                    xv.data()[r * d_in + ii] * gy;
                                self.grads[x.0][r * d_in + ii] +=
                                    wv.data()[ii * d_out + j] * gy;
                            }
                        }
                    }
                }
                Op::Conv1d {
                    x,
                    kernel,
                    bias,
                    padding,
                } => {
                    let xv = self.nodes[x.0].value.clone();
                    let kv = self.nodes[kernel.0].value.clone();
                    let (len, c_in) = (xv.shape()[0], xv.shape()[1]);
                    let (k, _, c_out) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                    let (out_len, offset) = match padding {
                        Padding::Same => (len, (k - 1) / 2),
                        Padding::Valid => (len - k + 1, 0),
                    };
                    for t in 0..out_len {
                        for co in 0..c_out {
                            let gy = g[t * c_out + co];
                            if gy == 0.0 {
                                continue;
                            }
                            self.grads[bias.0][co] += gy;
                            for dt in 0..k {
                                let src = t + dt;
                                if src < offset || src - offset >= len {
                                    continue;
                                }
                                let row = src - offset;
                                for ci in 0..c_in {
                                    self.grads[kernel.0][(dt * c_in + ci) * c_out + co] +=
                                        xv.data()[row * c_in + ci] * gy;
                                    self.grads[x.0][row * c_in + ci] +=
                                        kv.data()[(dt * c_in + ci) * c_out + co] * gy;
                                }
                            }
                        }
                    }
                }
                Op::RnnStep {
                    h_prev,
                    input,
                    recurrent,
                    weight,
                    bias,
                } => {
                    let hv = self.nodes[h_prev.0].value.clone();
                    let vv = self.nodes[input.0].value.clone();
                    let uv = self.nodes[recurrent.0].value.clone();
                    let wv = self.nodes[weight.0].value.clone();
                    let out = self.nodes[i].value.clone();
                    let u = hv.len();
                    let d = vv.len();
                    // d(pre_j) = g_j * (1 - out_j^2)
                    let dpre: Vec<f64> = (0..u)
                        .map(|j| g[j] * (1.0 - out.data()[j] * out.data()[j]))
                        .collect();
                    for (j, &dp) in dpre.iter().enumerate() {
                        self.grads[bias.0][j] += dp;
                        for ii in 0..u {
                            self.grads[recurrent.0][ii * u + j] += hv.data()[ii] * dp;
                            self.grads[h_prev.0][ii] += uv.data()[ii * u + j] * dp;
                        }
                        for ii in 0..d {
                            self.grads[weight.0][ii * u + j] += vv.data()[ii] * dp;
                            self.grads[input.0][ii] += wv.data()[ii * u + j] * dp;
                        }
                    }
                }
                Op::Activation { x, kind } => {
                    let xv = self.nodes[x.0].value.clone();
                    let out = self.nodes[i].value.clone();
                    for (idx, gy) in g.iter().enumerate() {
                        self.grads[x.0][idx] +=
                            gy * kind.derivative(xv.data()[idx], out.data()[idx]);
                    }
                }
                Op::Concat { xs, axis } => {
                    let cols = self.nodes[i].value.shape()[1];
                    match axis {
                        0 => {
                            let mut row_base = 0;
                            for id in xs {
                                let n = self.nodes[id.0].value.len();
                                let rows = self.nodes[id.0].value.shape()[0];
                                for (dst, src) in self.grads[id.0]
                                    .iter_mut()
                                    .zip(&g[row_base * cols..row_base * cols + n])
                                {
                                    *dst += *src;
                                }
                                row_base += rows;
                            }
                        }
                        _ => {
                            let rows = self.nodes[i].value.shape()[0];
                            let mut col_base = 0;
                            for id in xs {
                                let w = self.nodes[id.0].value.shape()[1];
                                for r in 0..rows {
                                    for c in 0..w {
                                        self.grads[id.0][r * w + c] +=
                                            g[r * cols + col_base + c];
                                    }
                                }
                                col_base += w;
                            }
                        }
                    }
                }
                Op::Row { x, index } => {
                    let cols = self.nodes[x.0].value.shape()[1];
                    for (c, gy) in g.iter().enumerate() {
                        self.grads[x.0][index * cols + c] += gy;
                    }
                }
                Op::StackRows { xs } => {
                    let cols = self.nodes[i].value.shape()[1];
                    for (r, id) in xs.iter().enumerate() {
                        for c in 0..cols {
                            self.grads[id.0][c] += g[r * cols + c];
                        }
                    }
                }
                Op::Reshape { x } => {
                    for (dst, src) in self.grads[x.0].iter_mut().zip(&g) {
                        *dst += *src;
                    }
                }
                Op::Sum { x } => {
                    for dst in self.grads[x.0].iter_mut() {
                        *dst += g[0];
                    }
                }
                Op::WeightedSum { x, weights } => {
                    for (dst, w) in self.grads[x.0].iter_mut().zip(weights.data()) {
                        *dst += g[0] * w;
                    }
                }
                Op::Mse { pred, truth } => {
                    let pv = self.nodes[pred.0].value.clone();
                    let tv = self.nodes[truth.0].value.clone();
                    let n = pv.len() as f64;
                    for idx in 0..pv.len() {
                        let d = 2.0 * (pv.data()[idx] - tv.data()[idx]) / n;
                        self.grads[pred.0][idx] += g[0] * d;
                        self.grads[truth.0][idx] -= g[0] * d;
                    }
                }
            }
            self.grads[i] = g;
        }
        Ok(())
    }
}
