//! Tape-based reverse-mode differentiation over a fixed set of CNN ops.
//!
//! A [`Graph`] records every op of one forward pass together with whatever
//! it needs for the backward pass. All kernels run sequentially in a fixed
//! order, so results are bit-reproducible.

use crate::nn::layout::{BatchNorm, Conv2d, Linear, ModelState};
use crate::nn::tensor::{gemm, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Conv {
        input: usize,
        layer: Conv2d,
    },
    BatchNorm {
        input: usize,
        layer: BatchNorm,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        input: usize,
    },
    MaxPool2 {
        input: usize,
        argmax: Vec<usize>,
    },
    AvgPool2 {
        input: usize,
    },
    GlobalAvgPool {
        input: usize,
    },
    Linear {
        input: usize,
        layer: Linear,
    },
    Add {
        lhs: usize,
        rhs: usize,
    },
    Concat {
        parts: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics observed by a train-mode batch norm, to be folded into
/// the running buffers once the step is committed.
#[derive(Debug, Clone)]
pub struct RunningUpdate {
    pub mean_buffer: usize,
    pub var_buffer: usize,
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

pub struct Graph<'s> {
    state: &'s ModelState,
    train: bool,
    nodes: Vec<Node>,
    updates: Vec<RunningUpdate>,
}

impl<'s> Graph<'s> {
    /// `train` selects batch statistics in normalization layers.
    pub fn new(state: &'s ModelState, train: bool) -> Self {
        Self {
            state,
            train,
            nodes: Vec::new(),
            updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn running_updates(&self) -> &[RunningUpdate] {
        &self.updates
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    fn param(&self, idx: usize) -> &[f64] {
        &self.state.params[idx].data
    }

    pub fn conv(&mut self, x: Var, layer: &Conv2d) -> Var {
        let input = &self.nodes[x.0].value;
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, layer.in_channels, "conv input channels");
        let geo = ConvGeometry::new(layer, h, w);
        let weight = self.param(layer.weight);
        let mut out = vec![0.0; n * layer.out_channels * geo.positions()];
        let mut cols = vec![0.0; geo.patch_len() * geo.positions()];
        let in_stride = c * h * w;
        let out_stride = layer.out_channels * geo.positions();
        for i in 0..n {
            let image = &input.data[i * in_stride..(i + 1) * in_stride];
            let cols_ref = geo.lower(image, &mut cols);
            gemm(
                layer.out_channels,
                geo.patch_len(),
                geo.positions(),
                weight,
                false,
                cols_ref,
                false,
                0.0,
                &mut out[i * out_stride..(i + 1) * out_stride],
            );
        }
        if let Some(b) = layer.bias {
            let bias = self.param(b);
            for chunk in out.chunks_mut(geo.positions()).enumerate() {
                let (idx, plane) = chunk;
                let bv = bias[idx % layer.out_channels];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(vec![n, layer.out_channels, geo.out_h, geo.out_w], out);
        self.push(value, Op::Conv { input: x.0, layer: *layer })
    }

    pub fn batch_norm(&mut self, x: Var, layer: &BatchNorm) -> Var {
        let input = &self.nodes[x.0].value;
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, layer.channels, "batch norm channels");
        let plane = h * w;
        let count = (n * plane) as f64;
        let scale = self.param(layer.scale);
        let shift = self.param(layer.shift);
        let mut inv_std = vec![0.0; c];
        let mut means = vec![0.0; c];
        let mut vars = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if self.train {
                let mut sum = 0.0;
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    sum += input.data[base..base + plane].iter().sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    sq += input.data[base..base + plane]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                (mean, sq / count)
            } else {
                (
                    self.state.buffers[layer.running_mean].data[ch],
                    self.state.buffers[layer.running_var].data[ch],
                )
            };
            means[ch] = mean;
            vars[ch] = var;
            inv_std[ch] = 1.0 / (var + BN_EPSILON).sqrt();
        }
        let mut normalized = vec![0.0; input.len()];
        let mut out = vec![0.0; input.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for p in base..base + plane {
                    let xh = (input.data[p] - means[ch]) * inv_std[ch];
                    normalized[p] = xh;
                    out[p] = scale[ch] * xh + shift[ch];
                }
            }
        }
        if self.train {
            let correction = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            self.updates.push(RunningUpdate {
                mean_buffer: layer.running_mean,
                var_buffer: layer.running_var,
                mean: means,
                unbiased_var: vars.iter().map(|v| v * correction).collect(),
            });
        }
        let shape = input.shape.clone();
        let batch_stats = self.train;
        self.push(
            Tensor::new(shape, out),
            Op::BatchNorm {
                input: x.0,
                layer: *layer,
                normalized,
                inv_std,
                batch_stats,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let input = &self.nodes[x.0].value;
        let value = Tensor::new(
            input.shape.clone(),
            input.data.iter().map(|&v| v.max(0.0)).collect(),
        );
        self.push(value, Op::Relu { input: x.0 })
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let input = &self.nodes[x.0].value;
        let (n, c, h, w) = input.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for plane_idx in 0..n * c {
            let src = plane_idx * h * w;
            let dst = plane_idx * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = src + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = src + (2 * oy + dy) * w + 2 * ox + dx;
                        if input.data[cand] > input.data[best] {
                            best = cand;
                        }
                    }
                    out[dst + oy * ow + ox] = input.data[best];
                    argmax[dst + oy * ow + ox] = best;
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out);
        self.push(value, Op::MaxPool2 { input: x.0, argmax })
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let input = &self.nodes[x.0].value;
        let (n, c, h, w) = input.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        for plane_idx in 0..n * c {
            let src = plane_idx * h * w;
            let dst = plane_idx * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let a = src + 2 * oy * w + 2 * ox;
                    out[dst + oy * ow + ox] = 0.25
                        * (input.data[a]
                            + input.data[a + 1]
                            + input.data[a + w]
                            + input.data[a + w + 1]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out);
        self.push(value, Op::AvgPool2 { input: x.0 })
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let input = &self.nodes[x.0].value;
        let (n, c, h, w) = input.dims4();
        let plane = h * w;
        let out = input
            .data
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::new(vec![n, c], out);
        self.push(value, Op::GlobalAvgPool { input: x.0 })
    }

    pub fn linear(&mut self, x: Var, layer: &Linear) -> Var {
        let input = &self.nodes[x.0].value;
        let (n, f) = input.dims2();
        assert_eq!(f, layer.in_features, "linear input features");
        let mut out = vec![0.0; n * layer.out_features];
        let bias = self.param(layer.bias);
        for row in out.chunks_mut(layer.out_features) {
            row.copy_from_slice(bias);
        }
        gemm(
            n,
            f,
            layer.out_features,
            &input.data,
            false,
            self.param(layer.weight),
            true,
            1.0,
            &mut out,
        );
        let value = Tensor::new(vec![n, layer.out_features], out);
        self.push(value, Op::Linear { input: x.0, layer: *layer })
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Var {
        let a = &self.nodes[lhs.0].value;
        let b = &self.nodes[rhs.0].value;
        assert_eq!(a.shape, b.shape, "add operands");
        let value = Tensor::new(
            a.shape.clone(),
            a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
        );
        self.push(
            value,
            Op::Add {
                lhs: lhs.0,
                rhs: rhs.0,
            },
        )
    }

    /// Channel-wise concatenation of rank-4 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = &self.nodes[parts[0].0].value;
        let (n, _, h, w) = first.dims4();
        let plane = h * w;
        let channels: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pn, pc, ph, pw) = self.nodes[p.0].value.dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat operand shapes");
                pc
            })
            .collect();
        let total: usize = channels.iter().sum();
        let mut out = Vec::with_capacity(n * total * plane);
        for i in 0..n {
            for (p, &c) in parts.iter().zip(&channels) {
                let data = &self.nodes[p.0].value.data;
                out.extend_from_slice(&data[i * c * plane..(i + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out);
        self.push(
            value,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        )
    }

    /// Back-propagates `seed` (the gradient of the objective w.r.t. `output`)
    /// and returns one gradient buffer per model parameter.
    pub fn backward(&self, output: Var, seed: Vec<f64>) -> Vec<Vec<f64>> {
        assert_eq!(seed.len(), self.nodes[output.0].value.len(), "seed gradient length");
        let mut param_grads: Vec<Vec<f64>> = self
            .state
            .params
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect();
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Conv { input, layer } => {
                    let dx = self.conv_backward(*input, layer, &grad, &mut param_grads);
                    accumulate(&mut grads, *input, dx);
                }
                Op::BatchNorm {
                    input,
                    layer,
                    normalized,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, c, h, w) = node.value.dims4();
                    let plane = h * w;
                    let count = (n * plane) as f64;
                    let scale = self.param(layer.scale);
                    let mut dx = vec![0.0; grad.len()];
                    for ch in 0..c {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xh = 0.0;
                        for i in 0..n {
                            let base = (i * c + ch) * plane;
                            for p in base..base + plane {
                                sum_dy += grad[p];
                                sum_dy_xh += grad[p] * normalized[p];
                            }
                        }
                        param_grads[layer.scale][ch] += sum_dy_xh;
                        param_grads[layer.shift][ch] += sum_dy;
                        let k = scale[ch] * inv_std[ch];
                        for i in 0..n {
                            let base = (i * c + ch) * plane;
                            for p in base..base + plane {
                                dx[p] = if *batch_stats {
                                    k * (grad[p]
                                        - sum_dy / count
                                        - normalized[p] * sum_dy_xh / count)
                                } else {
                                    k * grad[p]
                                };
                            }
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Relu { input } => {
                    let x = &self.nodes[*input].value.data;
                    let dx = grad
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut dx = vec![0.0; self.nodes[*input].value.len()];
                    for (g, &src) in grad.iter().zip(argmax) {
                        dx[src] += g;
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::AvgPool2 { input } => {
                    let (n, c, h, w) = self.nodes[*input].value.dims4();
                    let (oh, ow) = (h / 2, w / 2);
                    let mut dx = vec![0.0; n * c * h * w];
                    for plane_idx in 0..n * c {
                        let src = plane_idx * h * w;
                        let dst = plane_idx * oh * ow;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = 0.25 * grad[dst + oy * ow + ox];
                                let a = src + 2 * oy * w + 2 * ox;
                                dx[a] += g;
                                dx[a + 1] += g;
                                dx[a + w] += g;
                                dx[a + w + 1] += g;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::GlobalAvgPool { input } => {
                    let (_, _, h, w) = self.nodes[*input].value.dims4();
                    let plane = h * w;
                    let mut dx = Vec::with_capacity(grad.len() * plane);
                    for g in &grad {
                        let v = g / plane as f64;
                        dx.extend(std::iter::repeat_n(v, plane));
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Linear { input, layer } => {
                    let x = &self.nodes[*input].value;
                    let (n, f) = x.dims2();
                    let o = layer.out_features;
                    // dW (o×f) += dyᵀ (o×n) · x (n×f)
                    gemm(
                        o,
                        n,
                        f,
                        &grad,
                        true,
                        &x.data,
                        false,
                        1.0,
                        &mut param_grads[layer.weight],
                    );
                    for row in grad.chunks(o) {
                        for (b, g) in param_grads[layer.bias].iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                    let mut dx = vec![0.0; n * f];
                    gemm(n, o, f, &grad, false, self.param(layer.weight), false, 0.0, &mut dx);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Add { lhs, rhs } => {
                    accumulate(&mut grads, *lhs, grad.clone());
                    accumulate(&mut grads, *rhs, grad);
                }
                Op::Concat { parts } => {
                    let (n, total, h, w) = node.value.dims4();
                    let plane = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.nodes[p].value.shape[1];
                        let mut dx = Vec::with_capacity(n * c * plane);
                        for i in 0..n {
                            let start = (i * total + offset) * plane;
                            dx.extend_from_slice(&grad[start..start + c * plane]);
                        }
                        accumulate(&mut grads, p, dx);
                        offset += c;
                    }
                }
            }
        }
        param_grads
    }

    fn conv_backward(
        &self,
        input: usize,
        layer: &Conv2d,
        grad: &[f64],
        param_grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let x = &self.nodes[input].value;
        let (n, c, h, w) = x.dims4();
        let geo = ConvGeometry::new(layer, h, w);
        let weight = self.param(layer.weight);
        let positions = geo.positions();
        let patch = geo.patch_len();
        let out_stride = layer.out_channels * positions;
        let in_stride = c * h * w;
        let mut cols = vec![0.0; patch * positions];
        let mut dcols = vec![0.0; patch * positions];
        let mut dx = vec![0.0; x.len()];
        for i in 0..n {
            let dout = &grad[i * out_stride..(i + 1) * out_stride];
            let image = &x.data[i * in_stride..(i + 1) * in_stride];
            let cols_ref = geo.lower(image, &mut cols);
            // dW (cout×patch) += dout (cout×P) · colsᵀ (P×patch)
            gemm(
                layer.out_channels,
                positions,
                patch,
                dout,
                false,
                cols_ref,
                true,
                1.0,
                &mut param_grads[layer.weight],
            );
            if let Some(b) = layer.bias {
                for (co, plane) in dout.chunks(positions).enumerate() {
                    param_grads[b][co] += plane.iter().sum::<f64>();
                }
            }
            // dcols (patch×P) = Wᵀ (patch×cout) · dout (cout×P)
            gemm(
                patch,
                layer.out_channels,
                positions,
                weight,
                true,
                dout,
                false,
                0.0,
                &mut dcols,
            );
            geo.raise(&dcols, &mut dx[i * in_stride..(i + 1) * in_stride]);
        }
        dx
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, delta: Vec<f64>) {
    match &mut grads[idx] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

struct ConvGeometry {
    channels: usize,
    in_h: usize,
    in_w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(layer: &Conv2d, h: usize, w: usize) -> Self {
        let out_h = (h + 2 * layer.padding - layer.kernel) / layer.stride + 1;
        let out_w = (w + 2 * layer.padding - layer.kernel) / layer.stride + 1;
        Self {
            channels: layer.in_channels,
            in_h: h,
            in_w: w,
            kernel: layer.kernel,
            stride: layer.stride,
            padding: layer.padding,
            out_h,
            out_w,
        }
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// im2col. Pointwise convolutions use the image directly.
    fn lower<'a>(&self, image: &'a [f64], cols: &'a mut [f64]) -> &'a [f64] {
        if self.is_pointwise() {
            return image;
        }
        let positions = self.positions();
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = ((c * self.kernel + ky) * self.kernel + kx) * positions;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let dst = &mut cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src_row = (c * self.in_h + iy as usize) * self.in_w;
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= self.in_w as isize {
                                0.0
                            } else {
                                image[src_row + ix as usize]
                            };
                        }
                    }
                }
            }
        }
        cols
    }

    /// col2im: accumulates column gradients back onto the image gradient.
    fn raise(&self, dcols: &[f64], dimage: &mut [f64]) {
        if self.is_pointwise() {
            dimage.iter_mut().zip(dcols).for_each(|(a, b)| *a += b);
            return;
        }
        let positions = self.positions();
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = ((c * self.kernel + ky) * self.kernel + kx) * positions;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst_row = (c * self.in_h + iy as usize) * self.in_w;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                dimage[dst_row + ix as usize] += dcols[row + oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-example cross-entropy of `logits` (`[n, classes]`) against `labels`,
/// plus the gradient of the batch-mean loss w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let (n, k) = logits.dims2();
    assert_eq!(labels.len(), n, "one label per row");
    let mut losses = Vec::with_capacity(n);
    let mut grad = vec![0.0; n * k];
    for (i, row) in logits.data.chunks(k).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        losses.push(log_norm - row[labels[i]]);
        for j in 0..k {
            let p = (row[j] - log_norm).exp();
            grad[i * k + j] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (losses, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layout::Layout;
    use crate::rng::{stream, Stream};

    fn scalar_objective(values: &[f64], weights: &[f64]) -> f64 {
        values.iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    /// Checks d(sum(w ⊙ f(x)))/dparams against central differences for a
    /// single-op network built by `build`.
    fn check_op(build: impl Fn(&mut Layout) -> Box<dyn Fn(&mut Graph, Var) -> Var>, shape: Vec<usize>, train: bool) {
        let mut layout = Layout::default();
        let f = build(&mut layout);
        let mut rng = stream(5, Stream::Init);
        let mut state = layout.init(&mut rng);
        // perturb zero/one inits so every parameter matters
        for p in state.params.iter_mut() {
            for (j, v) in p.data.iter_mut().enumerate() {
                *v += 0.1 * ((j as f64 * 1.7 + 0.3).sin());
            }
        }
        let n: usize = shape.iter().product();
        let x: Vec<f64> = (0..n).map(|i| ((i * 31 % 17) as f64 - 8.0) / 5.0).collect();

        let eval = |state: &ModelState| {
            let mut g = Graph::new(state, train);
            let input = g.input(Tensor::new(shape.clone(), x.clone()));
            let out = f(&mut g, input);
            let w: Vec<f64> = (0..g.value(out).len()).map(|i| (i as f64 * 0.37).cos()).collect();
            (scalar_objective(&g.value(out).data, &w), w)
        };

        let grads = {
            let mut g = Graph::new(&state, train);
            let input = g.input(Tensor::new(shape.clone(), x.clone()));
            let out = f(&mut g, input);
            let (_, w) = eval(&state);
            g.backward(out, w)
        };
        let h = 1e-6;
        for pi in 0..state.params.len() {
            for j in 0..state.params[pi].data.len() {
                let orig = state.params[pi].data[j];
                state.params[pi].data[j] = orig + h;
                let plus = eval(&state).0;
                state.params[pi].data[j] = orig - h;
                let minus = eval(&state).0;
                state.params[pi].data[j] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads[pi][j];
                let tol = 1e-5 * (1.0 + numeric.abs());
                assert!(
                    (numeric - analytic).abs() < tol,
                    "param {} [{j}]: numeric {numeric} analytic {analytic}",
                    state.params[pi].name
                );
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0)] {
            check_op(
                move |l| {
                    let conv = l.conv2d("c", 2, 3, k, s, p, true);
                    Box::new(move |g, x| g.conv(x, &conv))
                },
                vec![2, 2, 5, 5],
                true,
            );
        }
    }

    #[test]
    fn batch_norm_gradients_match_finite_differences() {
        for train in [true, false] {
            check_op(
                |l| {
                    let bn = l.batch_norm("bn", 3);
                    let conv = l.conv2d("c", 3, 2, 3, 1, 1, false);
                    Box::new(move |g, x| {
                        let y = g.batch_norm(x, &bn);
                        let y = g.relu(y);
                        g.conv(y, &conv)
                    })
                },
                vec![3, 3, 4, 4],
                train,
            );
        }
    }

    #[test]
    fn pooling_concat_linear_gradients() {
        check_op(
            |l| {
                let a = l.conv2d("a", 2, 2, 3, 1, 1, true);
                let b = l.conv2d("b", 2, 3, 1, 1, 0, false);
                let fc = l.linear("fc", 5, 4);
                Box::new(move |g, x| {
                    let ya = g.conv(x, &a);
                    let yb = g.conv(x, &b);
                    let cat = g.concat(&[ya, yb]);
                    let p = g.max_pool2(cat);
                    let q = g.avg_pool2(p);
                    let r = g.relu(q);
                    let s = g.add(r, q);
                    let gap = g.global_avg_pool(s);
                    g.linear(gap, &fc)
                })
            },
            vec![2, 2, 4, 4],
            true,
        );
    }

    #[test]
    fn cross_entropy_of_uniform_and_one_hot() {
        let logits = Tensor::new(vec![1, 10], vec![0.0; 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[3]);
        assert!((loss[0] - 10f64.ln()).abs() < 1e-12);

        let mut row = vec![-1e9; 10];
        row[2] = 0.0;
        let (loss, grad) = softmax_cross_entropy(&Tensor::new(vec![1, 10], row), &[2]);
        assert_eq!(loss[0], 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }
}
