use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{matmul, Mode, NnError, Real};

/// Serializable description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    /// Stride-`stride` convolution with "same"-style zero padding `(kernel - 1) / 2`.
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    /// Transposed convolution with padding `(kernel - stride) / 2`, scaling
    /// spatial size by `stride`.
    ConvTranspose { in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    BatchNorm { features: usize, momentum: f64, eps: f64 },
    Relu,
    Tanh,
    Sigmoid,
    Flatten,
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    pub fn batch_norm(features: usize) -> Self {
        LayerSpec::BatchNorm { features, momentum: 0.99, eps: 1e-5 }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub(crate) fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let err = |message: String| NnError::Shape { layer: index, message };
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if input.iter().product::<usize>() != *inputs || input.len() != 1 {
                    return Err(err(format!("dense expects [{inputs}], got {input:?}")));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv { in_channels, out_channels, kernel, stride } => {
                let [c, h, w] = spatial(input).ok_or_else(|| err(format!("conv expects [C,H,W], got {input:?}")))?;
                if c != *in_channels || *kernel == 0 || *stride == 0 {
                    return Err(err(format!("conv expects {in_channels} channels, got {c}")));
                }
                let pad = (kernel - 1) / 2;
                if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                    return Err(err(format!("input {h}x{w} smaller than kernel {kernel}")));
                }
                Ok(vec![
                    *out_channels,
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                ])
            }
            LayerSpec::ConvTranspose { in_channels, out_channels, kernel, stride } => {
                let [c, h, w] = spatial(input).ok_or_else(|| err(format!("conv_transpose expects [C,H,W], got {input:?}")))?;
                if c != *in_channels {
                    return Err(err(format!("conv_transpose expects {in_channels} channels, got {c}")));
                }
                if kernel < stride || (kernel - stride) % 2 != 0 || *stride == 0 {
                    return Err(err(format!("kernel {kernel} incompatible with stride {stride}")));
                }
                Ok(vec![*out_channels, h * stride, w * stride])
            }
            LayerSpec::BatchNorm { features, .. } => {
                if input.first() != Some(features) {
                    return Err(err(format!("batch_norm over {features} features, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(err(format!("cannot reshape {input:?} to {shape:?}")));
                }
                Ok(shape.clone())
            }
        }
    }
}

fn spatial(shape: &[usize]) -> Option<[usize; 3]> {
    match shape {
        &[c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

/// Spatial geometry shared by convolutions and their transposes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    /// Channels of the "image" side.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Sliding-window positions.
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds `image` (C,H,W) into `cols` (C*k*k, out_h*out_w).
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let k = self.kernel;
        let npos = self.positions();
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * npos..(row + 1) * npos];
                    for oh in 0..self.out_h {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        for ow in 0..self.out_w {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            dst[oh * self.out_w + ow] = if ih >= 0
                                && iw >= 0
                                && (ih as usize) < self.height
                                && (iw as usize) < self.width
                            {
                                image[(c * self.height + ih as usize) * self.width + iw as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: accumulates `cols` back into `image`.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let k = self.kernel;
        let npos = self.positions();
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * npos..(row + 1) * npos];
                    for oh in 0..self.out_h {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        if ih < 0 || ih as usize >= self.height {
                            continue;
                        }
                        for ow in 0..self.out_w {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            if iw < 0 || iw as usize >= self.width {
                                continue;
                            }
                            image[(c * self.height + ih as usize) * self.width + iw as usize] +=
                                src[oh * self.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

/// A layer with its parameters and running statistics.
#[derive(Debug, Clone)]
pub(crate) enum Layer<T> {
    Dense { inputs: usize, outputs: usize, weight: Vec<T>, bias: Vec<T> },
    Conv { out_channels: usize, geom: ConvGeom, weight: Vec<T>, bias: Vec<T> },
    ConvTranspose { in_channels: usize, out_channels: usize, geom: ConvGeom, weight: Vec<T>, bias: Vec<T> },
    BatchNorm {
        features: usize,
        inner: usize,
        momentum: T,
        eps: T,
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
    Relu,
    Tanh,
    Sigmoid,
    Reshape,
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache<T> {
    Input(Vec<T>),
    Cols(Vec<T>),
    Norm { xhat: Vec<T>, inv_std: Vec<T>, mode: Mode },
    Output(Vec<T>),
    None,
}

/// Batch statistics produced by a train-mode batch norm forward.
pub(crate) struct BatchStats<T> {
    pub mean: Vec<T>,
    pub unbiased_var: Vec<T>,
}

fn uniform_init<T: Real, R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
}

impl<T: Real> Layer<T> {
    pub fn build<R: Rng + ?Sized>(spec: &LayerSpec, input: &[usize], rng: &mut R) -> Self {
        match *spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense {
                inputs,
                outputs,
                weight: uniform_init(inputs * outputs, inputs, rng),
                bias: vec![T::zero(); outputs],
            },
            LayerSpec::Conv { in_channels, out_channels, kernel, stride } => {
                let pad = (kernel - 1) / 2;
                let geom = ConvGeom {
                    channels: in_channels,
                    height: input[1],
                    width: input[2],
                    kernel,
                    stride,
                    pad,
                    out_h: (input[1] + 2 * pad - kernel) / stride + 1,
                    out_w: (input[2] + 2 * pad - kernel) / stride + 1,
                };
                let fan_in = in_channels * kernel * kernel;
                Layer::Conv {
                    out_channels,
                    geom,
                    weight: uniform_init(out_channels * fan_in, fan_in, rng),
                    bias: vec![T::zero(); out_channels],
                }
            }
            LayerSpec::ConvTranspose { in_channels, out_channels, kernel, stride } => {
                // Viewed as the adjoint of a convolution over the output image.
                let geom = ConvGeom {
                    channels: out_channels,
                    height: input[1] * stride,
                    width: input[2] * stride,
                    kernel,
                    stride,
                    pad: (kernel - stride) / 2,
                    out_h: input[1],
                    out_w: input[2],
                };
                let fan_in = in_channels * kernel * kernel / (stride * stride);
                Layer::ConvTranspose {
                    in_channels,
                    out_channels,
                    geom,
                    weight: uniform_init(in_channels * out_channels * kernel * kernel, fan_in, rng),
                    bias: vec![T::zero(); out_channels],
                }
            }
            LayerSpec::BatchNorm { features, momentum, eps } => Layer::BatchNorm {
                features,
                inner: input.iter().skip(1).product(),
                momentum: T::lit(momentum),
                eps: T::lit(eps),
                gamma: vec![T::one(); features],
                beta: vec![T::zero(); features],
                running_mean: vec![T::zero(); features],
                running_var: vec![T::one(); features],
            },
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Tanh => Layer::Tanh,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => Layer::Reshape,
        }
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::Dense { weight, bias, .. }
            | Layer::Conv { weight, bias, .. }
            | Layer::ConvTranspose { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Dense { weight, bias, .. }
            | Layer::Conv { weight, bias, .. }
            | Layer::ConvTranspose { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn buffers(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::BatchNorm { running_mean, running_var, .. } => vec![running_mean, running_var],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::BatchNorm { running_mean, running_var, .. } => vec![running_mean, running_var],
            _ => vec![],
        }
    }

    /// Forward over a batch of `n` rows. Returns the output, the cache and,
    /// for train-mode batch norm, the batch statistics to fold into the
    /// running estimates.
    pub fn forward(&self, x: &[T], n: usize, mode: Mode) -> (Vec<T>, LayerCache<T>, Option<BatchStats<T>>) {
        match self {
            Layer::Dense { inputs, outputs, weight, bias } => {
                let mut y = vec![T::zero(); n * outputs];
                for row in y.chunks_exact_mut(*outputs) {
                    row.copy_from_slice(bias);
                }
                matmul(n, *inputs, *outputs, x, false, weight, false, &mut y, true);
                (y, LayerCache::Input(x.to_vec()), None)
            }
            Layer::Conv { out_channels, geom, weight, bias } => {
                let in_len = geom.channels * geom.height * geom.width;
                let (rows, npos) = (geom.rows(), geom.positions());
                let mut cols = vec![T::zero(); n * rows * npos];
                let mut y = vec![T::zero(); n * out_channels * npos];
                for s in 0..n {
                    let c = &mut cols[s * rows * npos..(s + 1) * rows * npos];
                    geom.im2col(&x[s * in_len..(s + 1) * in_len], c);
                    let out = &mut y[s * out_channels * npos..(s + 1) * out_channels * npos];
                    for (o, chunk) in out.chunks_exact_mut(npos).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = bias[o]);
                    }
                    matmul(*out_channels, rows, npos, weight, false, c, false, out, true);
                }
                (y, LayerCache::Cols(cols), None)
            }
            Layer::ConvTranspose { in_channels, out_channels, geom, weight, bias } => {
                let (rows, npos) = (geom.rows(), geom.positions());
                let out_len = out_channels * geom.height * geom.width;
                let mut y = vec![T::zero(); n * out_len];
                let mut cols = vec![T::zero(); rows * npos];
                for s in 0..n {
                    let xs = &x[s * in_channels * npos..(s + 1) * in_channels * npos];
                    matmul(rows, *in_channels, npos, weight, true, xs, false, &mut cols, false);
                    let out = &mut y[s * out_len..(s + 1) * out_len];
                    geom.col2im(&cols, out);
                    let plane = geom.height * geom.width;
                    for (o, chunk) in out.chunks_exact_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += bias[o]);
                    }
                }
                (y, LayerCache::Input(x.to_vec()), None)
            }
            Layer::BatchNorm { features, inner, eps, gamma, beta, running_mean, running_var, .. } => {
                let (f, inner) = (*features, *inner);
                let count = n * inner;
                let (mean, var, stats) = match mode {
                    Mode::Train => {
                        let mut mean = vec![T::zero(); f];
                        let mut var = vec![T::zero(); f];
                        for s in 0..n {
                            for c in 0..f {
                                let base = (s * f + c) * inner;
                                mean[c] += x[base..base + inner].iter().copied().sum::<T>();
                            }
                        }
                        let inv_count = T::one() / T::lit(count as f64);
                        mean.iter_mut().for_each(|m| *m *= inv_count);
                        for s in 0..n {
                            for c in 0..f {
                                let base = (s * f + c) * inner;
                                var[c] += x[base..base + inner]
                                    .iter()
                                    .map(|&v| (v - mean[c]) * (v - mean[c]))
                                    .sum::<T>();
                            }
                        }
                        var.iter_mut().for_each(|v| *v *= inv_count);
                        let correction = if count > 1 {
                            T::lit(count as f64 / (count - 1) as f64)
                        } else {
                            T::one()
                        };
                        let unbiased_var = var.iter().map(|&v| v * correction).collect();
                        let stats = BatchStats { mean: mean.clone(), unbiased_var };
                        (mean, var, Some(stats))
                    }
                    Mode::Eval => (running_mean.clone(), running_var.clone(), None),
                };
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + *eps).sqrt()).collect();
                let mut xhat = vec![T::zero(); x.len()];
                let mut y = vec![T::zero(); x.len()];
                for s in 0..n {
                    for c in 0..f {
                        let base = (s * f + c) * inner;
                        for i in base..base + inner {
                            let h = (x[i] - mean[c]) * inv_std[c];
                            xhat[i] = h;
                            y[i] = gamma[c] * h + beta[c];
                        }
                    }
                }
                (y, LayerCache::Norm { xhat, inv_std, mode }, stats)
            }
            Layer::Relu => {
                let y: Vec<T> = x.iter().map(|&v| v.max(T::zero())).collect();
                (y.clone(), LayerCache::Output(y), None)
            }
            Layer::Tanh => {
                let y: Vec<T> = x.iter().map(|v| v.tanh()).collect();
                (y.clone(), LayerCache::Output(y), None)
            }
            Layer::Sigmoid => {
                let y: Vec<T> = x.iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
                (y.clone(), LayerCache::Output(y), None)
            }
            Layer::Reshape => (x.to_vec(), LayerCache::None, None),
        }
    }

    pub fn apply_stats(&mut self, stats: BatchStats<T>) {
        if let Layer::BatchNorm { momentum, running_mean, running_var, .. } = self {
            let m = *momentum;
            for (r, b) in running_mean.iter_mut().zip(&stats.mean) {
                *r = m * *r + (T::one() - m) * *b;
            }
            for (r, b) in running_var.iter_mut().zip(&stats.unbiased_var) {
                *r = m * *r + (T::one() - m) * *b;
            }
        }
    }

    /// Backward over a batch of `n` rows. Parameter gradients are written into
    /// `grads` (one buffer per parameter, same order as [`Self::params`]) when
    /// provided. Returns the input gradient.
    pub fn backward(&self, cache: &LayerCache<T>, dy: &[T], n: usize, grads: Option<&mut [Vec<T>]>) -> Vec<T> {
        match (self, cache) {
            (Layer::Dense { inputs, outputs, weight, .. }, LayerCache::Input(x)) => {
                if let Some(g) = grads {
                    let (gw, gb) = g.split_at_mut(1);
                    matmul(*inputs, n, *outputs, x, true, dy, false, &mut gw[0], false);
                    let gb = &mut gb[0];
                    gb.iter_mut().for_each(|v| *v = T::zero());
                    for row in dy.chunks_exact(*outputs) {
                        for (b, &d) in gb.iter_mut().zip(row) {
                            *b += d;
                        }
                    }
                }
                let mut dx = vec![T::zero(); n * inputs];
                matmul(n, *outputs, *inputs, dy, false, weight, true, &mut dx, false);
                dx
            }
            (Layer::Conv { out_channels, geom, weight, .. }, LayerCache::Cols(cols)) => {
                let (rows, npos) = (geom.rows(), geom.positions());
                let in_len = geom.channels * geom.height * geom.width;
                let mut dx = vec![T::zero(); n * in_len];
                let mut dcols = vec![T::zero(); rows * npos];
                let mut grads = grads;
                if let Some(g) = grads.as_deref_mut() {
                    g.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = T::zero()));
                }
                for s in 0..n {
                    let dys = &dy[s * out_channels * npos..(s + 1) * out_channels * npos];
                    let cs = &cols[s * rows * npos..(s + 1) * rows * npos];
                    if let Some(g) = grads.as_deref_mut() {
                        let (gw, gb) = g.split_at_mut(1);
                        matmul(*out_channels, npos, rows, dys, false, cs, true, &mut gw[0], true);
                        for (o, chunk) in dys.chunks_exact(npos).enumerate() {
                            gb[0][o] += chunk.iter().copied().sum::<T>();
                        }
                    }
                    matmul(rows, *out_channels, npos, weight, true, dys, false, &mut dcols, false);
                    geom.col2im(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                }
                dx
            }
            (Layer::ConvTranspose { in_channels, out_channels, geom, weight, .. }, LayerCache::Input(x)) => {
                let (rows, npos) = (geom.rows(), geom.positions());
                let out_len = out_channels * geom.height * geom.width;
                let plane = geom.height * geom.width;
                let mut dx = vec![T::zero(); n * in_channels * npos];
                let mut dcols = vec![T::zero(); rows * npos];
                let mut grads = grads;
                if let Some(g) = grads.as_deref_mut() {
                    g.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = T::zero()));
                }
                for s in 0..n {
                    let dys = &dy[s * out_len..(s + 1) * out_len];
                    geom.im2col(dys, &mut dcols);
                    let xs = &x[s * in_channels * npos..(s + 1) * in_channels * npos];
                    if let Some(g) = grads.as_deref_mut() {
                        let (gw, gb) = g.split_at_mut(1);
                        matmul(*in_channels, npos, rows, xs, false, &dcols, true, &mut gw[0], true);
                        for (o, chunk) in dys.chunks_exact(plane).enumerate() {
                            gb[0][o] += chunk.iter().copied().sum::<T>();
                        }
                    }
                    let dxs = &mut dx[s * in_channels * npos..(s + 1) * in_channels * npos];
                    matmul(*in_channels, rows, npos, weight, false, &dcols, false, dxs, false);
                }
                dx
            }
            (Layer::BatchNorm { features, inner, gamma, .. }, LayerCache::Norm { xhat, inv_std, mode }) => {
                let (f, inner) = (*features, *inner);
                let mut sum_dy = vec![T::zero(); f];
                let mut sum_dy_xhat = vec![T::zero(); f];
                for s in 0..n {
                    for c in 0..f {
                        let base = (s * f + c) * inner;
                        for i in base..base + inner {
                            sum_dy[c] += dy[i];
                            sum_dy_xhat[c] += dy[i] * xhat[i];
                        }
                    }
                }
                let mut dx = vec![T::zero(); dy.len()];
                let count = T::lit((n * inner) as f64);
                for s in 0..n {
                    for c in 0..f {
                        let base = (s * f + c) * inner;
                        let scale = gamma[c] * inv_std[c];
                        for i in base..base + inner {
                            dx[i] = match mode {
                                Mode::Train => {
                                    scale / count * (count * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c])
                                }
                                Mode::Eval => scale * dy[i],
                            };
                        }
                    }
                }
                if let Some(g) = grads {
                    g[0].copy_from_slice(&sum_dy_xhat);
                    g[1].copy_from_slice(&sum_dy);
                }
                dx
            }
            (Layer::Relu, LayerCache::Output(y)) => dy
                .iter()
                .zip(y)
                .map(|(&d, &o)| if o > T::zero() { d } else { T::zero() })
                .collect(),
            (Layer::Tanh, LayerCache::Output(y)) => {
                dy.iter().zip(y).map(|(&d, &o)| d * (T::one() - o * o)).collect()
            }
            (Layer::Sigmoid, LayerCache::Output(y)) => {
                dy.iter().zip(y).map(|(&d, &o)| d * o * (T::one() - o)).collect()
            }
            (Layer::Reshape, LayerCache::None) => dy.to_vec(),
            _ => unreachable!("layer cache does not match layer kind"),
        }
    }
}
