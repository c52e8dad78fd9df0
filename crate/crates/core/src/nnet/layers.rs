//! Network layers with explicit forward, inference, and backward passes.
//!
//! Convolution uses cross-correlation semantics. Activations flow as
//! `[N, C, H, W]` tensors until global average pooling flattens them to
//! `[N, C]`. Every layer caches exactly what its backward pass needs; the
//! inference paths (`infer`) take `&self` and cache nothing.

use crate::error::{Error, Result};
use crate::rng::DetRng;

use super::tensor::Tensor;

fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(Error::DimensionMismatch(format!("expected 4-d tensor, got {other:?}"))),
    }
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, c] => Ok((*n, *c)),
        other => Err(Error::DimensionMismatch(format!("expected 2-d tensor, got {other:?}"))),
    }
}

/// 2-D convolution (cross-correlation) with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out, in, kernel, kernel]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub frozen: bool,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cached_input: Option<Tensor>,
    /// Per-batch im2col slab built during training forward and reused by
    /// backward (one patch matrix per sample, concatenated).
    cached_patches: Vec<f64>,
    cached_patches_valid: bool,
    scratch_grad_patches: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, rng: &mut DetRng) -> Conv2d {
        let fan_in = in_channels * kernel * kernel;
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = (0..out_channels * fan_in)
            .map(|_| rng.range_f64(-limit, limit))
            .collect();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weights,
            bias: vec![0.0; out_channels],
            frozen: false,
            grad_weights: vec![0.0; out_channels * fan_in],
            grad_bias: vec![0.0; out_channels],
            cached_input: None,
            cached_patches: Vec::new(),
            cached_patches_valid: false,
            scratch_grad_patches: Vec::new(),
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        if h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(Error::DimensionMismatch(format!(
                "{h}x{w} input too small for kernel {k} with pad {}",
                self.pad
            )));
        }
        Ok(((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1))
    }

    fn run_forward(&self, input: &Tensor, scratch: &mut Vec<f64>) -> Result<Tensor> {
        let (n, c, h, w) = dims4(input)?;
        if c != self.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.out_dims(h, w)?;
        let k = self.kernel;
        let patch_rows = c * k * k;
        let plane_out = oh * ow;
        let mut out = Tensor::zeros(&[n, self.out_channels, oh, ow]);
        scratch.resize(patch_rows * plane_out, 0.0);
        let patches = &mut scratch[..];
        for ni in 0..n {
            let sample = &input.data()[ni * c * h * w..][..c * h * w];
            im2col(sample, c, h, w, k, self.stride, self.pad, oh, ow, patches);
            let out_sample = &mut out.data_mut()[ni * self.out_channels * plane_out..][..self.out_channels * plane_out];
            // Out[K, OH*OW] = W[K, C*k*k] x P[C*k*k, OH*OW]
            dgemm_rowmajor(
                self.out_channels,
                patch_rows,
                plane_out,
                1.0,
                &self.weights,
                (patch_rows as isize, 1),
                patches,
                (plane_out as isize, 1),
                0.0,
                out_sample,
            );
            for ko in 0..self.out_channels {
                let b = self.bias[ko];
                for v in &mut out_sample[ko * plane_out..][..plane_out] {
                    *v += b;
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(&input)?;
        if c != self.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.out_dims(h, w)?;
        let k = self.kernel;
        let patch_rows = c * k * k;
        let plane_out = oh * ow;
        let sample_patch = patch_rows * plane_out;
        let mut out = Tensor::zeros(&[n, self.out_channels, oh, ow]);
        self.cached_patches.clear();
        self.cached_patches.resize(n * sample_patch, 0.0);
        for ni in 0..n {
            let sample = &input.data()[ni * c * h * w..][..c * h * w];
            let patches = &mut self.cached_patches[ni * sample_patch..][..sample_patch];
            im2col(sample, c, h, w, k, self.stride, self.pad, oh, ow, patches);
            let out_sample = &mut out.data_mut()[ni * self.out_channels * plane_out..][..self.out_channels * plane_out];
            dgemm_rowmajor(
                self.out_channels,
                patch_rows,
                plane_out,
                1.0,
                &self.weights,
                (patch_rows as isize, 1),
                patches,
                (plane_out as isize, 1),
                0.0,
                out_sample,
            );
            for ko in 0..self.out_channels {
                let b = self.bias[ko];
                for v in &mut out_sample[ko * plane_out..][..plane_out] {
                    *v += b;
                }
            }
        }
        self.cached_patches_valid = true;
        self.cached_input = Some(input);
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut scratch = Vec::new();
        self.run_forward(input, &mut scratch)
    }

    pub fn backward(&mut self, grad_out: Tensor) -> Result<Tensor> {
        self.backward_impl(grad_out, true)
    }

    /// Backward without producing the input gradient (the first layer of a
    /// network has no upstream consumer for it).
    pub fn backward_no_input_grad(&mut self, grad_out: Tensor) -> Result<()> {
        self.backward_impl(grad_out, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad_out: Tensor, need_input_grad: bool) -> Result<Tensor> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::InvalidArgument("conv backward before forward".into()))?;
        if !self.cached_patches_valid {
            return Err(Error::InvalidArgument("conv backward before forward".into()));
        }
        self.cached_patches_valid = false;
        let (n, c, h, w) = dims4(&input)?;
        let (_, ko_n, oh, ow) = dims4(&grad_out)?;
        debug_assert_eq!(ko_n, self.out_channels);
        let k = self.kernel;
        let patch_rows = c * k * k;
        let plane_out = oh * ow;
        let sample_patch = patch_rows * plane_out;
        let gout = grad_out.data();

        let grad_in_shape: &[usize] = if need_input_grad { &[n, c, h, w] } else { &[1] };
        let mut grad_in = Tensor::zeros(grad_in_shape);
        let mut grad_patches = std::mem::take(&mut self.scratch_grad_patches);
        grad_patches.resize(sample_patch, 0.0);
        for ni in 0..n {
            let g = &gout[ni * self.out_channels * plane_out..][..self.out_channels * plane_out];
            for ko in 0..self.out_channels {
                self.grad_bias[ko] += g[ko * plane_out..][..plane_out].iter().sum::<f64>();
            }
            let patches = &self.cached_patches[ni * sample_patch..][..sample_patch];
            // gW^T[C*k*k, K] += P[C*k*k, OH*OW] x gOut^T, written through a
            // transposed view so A and B stay contiguous for packing.
            dgemm_rowmajor_strided_c(
                patch_rows,
                plane_out,
                self.out_channels,
                1.0,
                patches,
                (plane_out as isize, 1),
                g,
                (1, plane_out as isize),
                1.0,
                &mut self.grad_weights,
                (1, patch_rows as isize),
            );
            if !need_input_grad {
                continue;
            }
            // gP[C*k*k, OH*OW] = W^T x gOut
            dgemm_rowmajor(
                patch_rows,
                self.out_channels,
                plane_out,
                1.0,
                &self.weights,
                (1, patch_rows as isize),
                g,
                (plane_out as isize, 1),
                0.0,
                &mut grad_patches,
            );
            let gin = &mut grad_in.data_mut()[ni * c * h * w..][..c * h * w];
            col2im(&grad_patches, c, h, w, k, self.stride, self.pad, oh, ow, gin);
        }
        self.scratch_grad_patches = grad_patches;
        Ok(grad_in)
    }
}

/// Row-major GEMM wrapper: C[m, n] = alpha * A x B + beta * C, with A and B
/// given by (row stride, column stride) so transposed views cost nothing.
#[allow(clippy::too_many_arguments)]
fn dgemm_rowmajor(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() > ((m - 1) as isize * a_strides.0 + (k - 1) as isize * a_strides.1) as usize);
    assert!(b.len() > ((k - 1) as isize * b_strides.0 + (n - 1) as isize * b_strides.1) as usize);
    assert!(c.len() >= m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// As [`dgemm_rowmajor`] but with explicit output strides.
#[allow(clippy::too_many_arguments)]
fn dgemm_rowmajor_strided_c(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
    c_strides: (isize, isize),
) {
    assert!(a.len() > ((m - 1) as isize * a_strides.0 + (k - 1) as isize * a_strides.1) as usize);
    assert!(b.len() > ((k - 1) as isize * b_strides.0 + (n - 1) as isize * b_strides.1) as usize);
    assert!(c.len() > ((m - 1) as isize * c_strides.0 + (n - 1) as isize * c_strides.1) as usize);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_strides.0,
            c_strides.1,
        );
    }
}

/// Lay a sample's receptive fields out as a `[C*k*k, OH*OW]` matrix
/// (zero padding materialized as zeros).
#[allow(clippy::too_many_arguments)]
fn im2col(
    sample: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    patches: &mut [f64],
) {
    let plane_out = oh * ow;
    for ci in 0..c {
        let plane = &sample[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut patches[((ci * k + ky) * k + kx) * plane_out..][..plane_out];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * ow..][..ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..][..w];
                    if stride == 1 {
                        // Split into fill / memcpy / fill segments.
                        let off = kx as isize - pad as isize;
                        let ox_lo = (-off).max(0) as usize;
                        let ox_hi = ow.min((w as isize - off).max(0) as usize).max(ox_lo);
                        dst[..ox_lo].fill(0.0);
                        dst[ox_lo..ox_hi]
                            .copy_from_slice(&src_row[(ox_lo as isize + off) as usize..(ox_hi as isize + off) as usize]);
                        dst[ox_hi..].fill(0.0);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *d = if ix >= 0 && ix < w as isize { src_row[ix as usize] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the image.
#[allow(clippy::too_many_arguments)]
fn col2im(
    grad_patches: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    grad_sample: &mut [f64],
) {
    let plane_out = oh * ow;
    for ci in 0..c {
        let plane = &mut grad_sample[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &grad_patches[((ci * k + ky) * k + kx) * plane_out..][..plane_out];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * ow..][..ow];
                    if stride == 1 {
                        let off = kx as isize - pad as isize;
                        let ox_lo = (-off).max(0) as usize;
                        let ox_hi = ow.min((w as isize - off).max(0) as usize).max(ox_lo);
                        let dst = &mut dst_row[(ox_lo as isize + off) as usize..(ox_hi as isize + off) as usize];
                        for (d, g) in dst.iter_mut().zip(&src[ox_lo..ox_hi]) {
                            *d += g;
                        }
                    } else {
                        for (ox, g) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel batch normalization over `[N, C, H, W]`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub frozen: bool,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cached_xhat: Option<Tensor>,
    cached_inv_std: Vec<f64>,
    /// Set when the cached forward ran against frozen running stats, which
    /// decouples the backward pass from batch statistics.
    cached_frozen: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-8,
            frozen: false,
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            cached_xhat: None,
            cached_inv_std: Vec::new(),
            cached_frozen: false,
        }
    }

    pub fn forward(&mut self, input: Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(&input)?;
        if c != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "batch norm over {} channels got {c}",
                self.channels
            )));
        }
        // A frozen layer normalizes with its running statistics and leaves
        // them untouched, like a backbone held in inference mode.
        if self.frozen {
            let plane = h * w;
            let mut xhat = input;
            let mut out = Tensor::zeros(&[n, c, h, w]);
            self.cached_inv_std = vec![0.0; c];
            for ci in 0..c {
                let inv_std = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                self.cached_inv_std[ci] = inv_std;
                let (g, b, mean) = (self.gamma[ci], self.beta[ci], self.running_mean[ci]);
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    let x = &mut xhat.data_mut()[base..][..plane];
                    let o = &mut out.data_mut()[base..][..plane];
                    for (xv, ov) in x.iter_mut().zip(o.iter_mut()) {
                        *xv = (*xv - mean) * inv_std;
                        *ov = g * *xv + b;
                    }
                }
            }
            self.cached_xhat = Some(xhat);
            self.cached_frozen = true;
            return Ok(out);
        }
        if n < 2 {
            return Err(Error::InvalidArgument(
                "batch norm in train mode needs a batch of at least 2".into(),
            ));
        }
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut xhat = input;
        self.cached_inv_std = vec![0.0; c];
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for ci in 0..c {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for ni in 0..n {
                let x = &xhat.data()[(ni * c + ci) * plane..][..plane];
                for v in x {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / m;
            let var = (sum_sq / m - mean * mean).max(0.0);
            let inv_std = 1.0 / (var + self.eps).sqrt();
            self.cached_inv_std[ci] = inv_std;
            self.running_mean[ci] = self.momentum * self.running_mean[ci] + (1.0 - self.momentum) * mean;
            self.running_var[ci] = self.momentum * self.running_var[ci] + (1.0 - self.momentum) * var;
            let (g, b) = (self.gamma[ci], self.beta[ci]);
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                let x = &mut xhat.data_mut()[base..][..plane];
                let o = &mut out.data_mut()[base..][..plane];
                for (xv, ov) in x.iter_mut().zip(o.iter_mut()) {
                    *xv = (*xv - mean) * inv_std;
                    *ov = g * *xv + b;
                }
            }
        }
        self.cached_xhat = Some(xhat);
        self.cached_frozen = false;
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(input)?;
        if c != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "batch norm over {} channels got {c}",
                self.channels
            )));
        }
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for ci in 0..c {
            let inv_std = 1.0 / (self.running_var[ci] + self.eps).sqrt();
            let (g, b, mean) = (self.gamma[ci], self.beta[ci], self.running_mean[ci]);
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                let x = &input.data()[base..][..plane];
                let o = &mut out.data_mut()[base..][..plane];
                for (xv, ov) in x.iter().zip(o.iter_mut()) {
                    *ov = g * (xv - mean) * inv_std + b;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: Tensor) -> Result<Tensor> {
        let xhat = self
            .cached_xhat
            .take()
            .ok_or_else(|| Error::InvalidArgument("batch norm backward before forward".into()))?;
        let (n, c, h, w) = dims4(&xhat)?;
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut grad_in = Tensor::zeros(&[n, c, h, w]);
        if self.cached_frozen {
            // Running stats are constants: the pass is a plain affine map.
            for ci in 0..c {
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                let scale = self.gamma[ci] * self.cached_inv_std[ci];
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    let g = &grad_out.data()[base..][..plane];
                    let xh = &xhat.data()[base..][..plane];
                    let gi = &mut grad_in.data_mut()[base..][..plane];
                    for ((gv, xv), giv) in g.iter().zip(xh).zip(gi.iter_mut()) {
                        sum_g += gv;
                        sum_gx += gv * xv;
                        *giv = scale * gv;
                    }
                }
                self.grad_gamma[ci] += sum_gx;
                self.grad_beta[ci] += sum_g;
            }
            return Ok(grad_in);
        }
        for ci in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                let g = &grad_out.data()[base..][..plane];
                let xh = &xhat.data()[base..][..plane];
                for (gv, xv) in g.iter().zip(xh) {
                    sum_g += gv;
                    sum_gx += gv * xv;
                }
            }
            self.grad_gamma[ci] += sum_gx;
            self.grad_beta[ci] += sum_g;
            let scale = self.gamma[ci] * self.cached_inv_std[ci] / m;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                let g = &grad_out.data()[base..][..plane];
                let xh = &xhat.data()[base..][..plane];
                let gi = &mut grad_in.data_mut()[base..][..plane];
                for ((gv, xv), giv) in g.iter().zip(xh).zip(gi.iter_mut()) {
                    *giv = scale * (m * gv - sum_g - xv * sum_gx);
                }
            }
        }
        Ok(grad_in)
    }
}

/// Elementwise max(0, x).
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
    mask_valid: bool,
}

impl Relu {
    pub fn forward(&mut self, mut input: Tensor) -> Tensor {
        self.mask.clear();
        self.mask.extend(input.data().iter().map(|&v| v > 0.0));
        for v in input.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.mask_valid = true;
        input
    }

    pub fn infer(&self, input: &Tensor) -> Tensor {
        let mut out = input.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Result<Tensor> {
        if !self.mask_valid || self.mask.len() != grad.numel() {
            return Err(Error::InvalidArgument("relu backward before forward".into()));
        }
        self.mask_valid = false;
        for (g, keep) in grad.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *g = 0.0;
            }
        }
        Ok(grad)
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cached_argmax: Option<Vec<u32>>,
    cached_in_shape: Vec<usize>,
}

impl MaxPool2 {
    fn pool(input: &Tensor, argmax: Option<&mut Vec<u32>>) -> Result<Tensor> {
        let (n, c, h, w) = dims4(input)?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::DimensionMismatch(format!("{h}x{w} too small to pool")));
        }
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut arg = argmax;
        if let Some(a) = arg.as_deref_mut() {
            a.clear();
            a.reserve(n * c * oh * ow);
        }
        let plane = h * w;
        for nc in 0..n * c {
            let x = &input.data()[nc * plane..][..plane];
            let o = &mut out.data_mut()[nc * oh * ow..][..oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = (2 * oy) * w + 2 * ox;
                    let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = candidates[0];
                    for &idx in &candidates[1..] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    o[oy * ow + ox] = x[best];
                    if let Some(a) = arg.as_deref_mut() {
                        a.push(best as u32);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: Tensor) -> Result<Tensor> {
        let mut argmax = Vec::new();
        let out = Self::pool(&input, Some(&mut argmax))?;
        self.cached_argmax = Some(argmax);
        self.cached_in_shape = input.shape().to_vec();
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Self::pool(input, None)
    }

    pub fn backward(&mut self, grad_out: Tensor) -> Result<Tensor> {
        let argmax = self
            .cached_argmax
            .take()
            .ok_or_else(|| Error::InvalidArgument("max pool backward before forward".into()))?;
        let shape = std::mem::take(&mut self.cached_in_shape);
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let (oh, ow) = (h / 2, w / 2);
        let mut grad_in = Tensor::zeros(&[n, c, h, w]);
        for nc in 0..n * c {
            let g = &grad_out.data()[nc * oh * ow..][..oh * ow];
            let gi = &mut grad_in.data_mut()[nc * plane..][..plane];
            let a = &argmax[nc * oh * ow..][..oh * ow];
            for (idx, gv) in a.iter().zip(g) {
                gi[*idx as usize] += gv;
            }
        }
        Ok(grad_in)
    }
}

/// Spatial mean per channel: `[N, C, H, W] -> [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cached_in_shape: Vec<usize>,
}

impl GlobalAvgPool {
    fn pool(input: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(input)?;
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, c]);
        for nc in 0..n * c {
            let x = &input.data()[nc * plane..][..plane];
            out.data_mut()[nc] = x.iter().sum::<f64>() / plane as f64;
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: Tensor) -> Result<Tensor> {
        let out = Self::pool(&input)?;
        self.cached_in_shape = input.shape().to_vec();
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Self::pool(input)
    }

    pub fn backward(&mut self, grad_out: Tensor) -> Result<Tensor> {
        let shape = std::mem::take(&mut self.cached_in_shape);
        if shape.len() != 4 {
            return Err(Error::InvalidArgument("gap backward before forward".into()));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let mut grad_in = Tensor::zeros(&[n, c, h, w]);
        for nc in 0..n * c {
            let g = grad_out.data()[nc] / plane as f64;
            for v in &mut grad_in.data_mut()[nc * plane..][..plane] {
                *v = g;
            }
        }
        Ok(grad_in)
    }
}

/// Inverted dropout: units zeroed with probability `rate` in training,
/// survivors scaled by 1/(1-rate); identity at inference.
#[derive(Debug, Clone)]
pub struct DropoutLayer {
    pub rate: f64,
    cached_mask: Option<Vec<bool>>,
}

impl DropoutLayer {
    pub fn new(rate: f64) -> Result<DropoutLayer> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(DropoutLayer {
            rate,
            cached_mask: None,
        })
    }

    pub fn forward(&mut self, mut input: Tensor, rng: &mut DetRng) -> Tensor {
        if self.rate == 0.0 {
            self.cached_mask = Some(vec![true; input.numel()]);
            return input;
        }
        let scale = 1.0 / (1.0 - self.rate);
        let mask: Vec<bool> = (0..input.numel()).map(|_| rng.next_f64() >= self.rate).collect();
        for (v, &keep) in input.data_mut().iter_mut().zip(&mask) {
            *v = if keep { *v * scale } else { 0.0 };
        }
        self.cached_mask = Some(mask);
        input
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Result<Tensor> {
        let mask = self
            .cached_mask
            .take()
            .ok_or_else(|| Error::InvalidArgument("dropout backward before forward".into()))?;
        let scale = 1.0 / (1.0 - self.rate);
        for (g, keep) in grad.data_mut().iter_mut().zip(mask) {
            *g = if keep { *g * scale } else { 0.0 };
        }
        Ok(grad)
    }
}

/// Standalone dropout draw over any tensor; `train == false` is the identity.
pub fn dropout(input: &Tensor, rate: f64, train: bool, rng: &mut DetRng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !train {
        return Ok(input.clone());
    }
    let mut layer = DropoutLayer::new(rate)?;
    Ok(layer.forward(input.clone(), rng))
}

/// Fully connected layer: `[N, in] -> [N, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub frozen: bool,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, rng: &mut DetRng) -> Dense {
        let limit = (6.0 / in_features as f64).sqrt();
        let weights = (0..in_features * out_features)
            .map(|_| rng.range_f64(-limit, limit))
            .collect();
        Dense {
            in_features,
            out_features,
            weights,
            bias: vec![0.0; out_features],
            frozen: false,
            grad_weights: vec![0.0; in_features * out_features],
            grad_bias: vec![0.0; out_features],
            cached_input: None,
        }
    }

    fn run_forward(&self, input: &Tensor) -> Result<Tensor> {
        let (n, c) = dims2(input)?;
        if c != self.in_features {
            return Err(Error::DimensionMismatch(format!(
                "dense expects {} features, got {c}",
                self.in_features
            )));
        }
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for ni in 0..n {
            let x = &input.data()[ni * c..][..c];
            let o = &mut out.data_mut()[ni * self.out_features..][..self.out_features];
            for (oi, ov) in o.iter_mut().enumerate() {
                let w = &self.weights[oi * c..][..c];
                *ov = self.bias[oi] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: Tensor) -> Result<Tensor> {
        let out = self.run_forward(&input)?;
        self.cached_input = Some(input);
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.run_forward(input)
    }

    pub fn backward(&mut self, grad_out: Tensor) -> Result<Tensor> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::InvalidArgument("dense backward before forward".into()))?;
        let (n, c) = dims2(&input)?;
        let k = self.out_features;
        for ni in 0..n {
            let g = &grad_out.data()[ni * k..][..k];
            let x = &input.data()[ni * c..][..c];
            for (oi, gv) in g.iter().enumerate() {
                self.grad_bias[oi] += gv;
                let wrow = &mut self.grad_weights[oi * c..][..c];
                for (wv, xv) in wrow.iter_mut().zip(x) {
                    *wv += gv * xv;
                }
            }
        }
        let mut grad_in = Tensor::zeros(&[n, c]);
        for ni in 0..n {
            let g = &grad_out.data()[ni * k..][..k];
            let gi = &mut grad_in.data_mut()[ni * c..][..c];
            for (oi, gv) in g.iter().enumerate() {
                let wrow = &self.weights[oi * c..][..c];
                for (giv, wv) in gi.iter_mut().zip(wrow) {
                    *giv += gv * wv;
                }
            }
        }
        Ok(grad_in)
    }
}

/// The layer union a [`super::model::Model`] is built from.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu(Relu),
    MaxPool(MaxPool2),
    GlobalAvgPool(GlobalAvgPool),
    Dropout(DropoutLayer),
    Dense(Dense),
}

impl Layer {
    pub fn forward(&mut self, input: Tensor, rng: &mut DetRng) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(input),
            Layer::BatchNorm(l) => l.forward(input),
            Layer::Relu(l) => Ok(l.forward(input)),
            Layer::MaxPool(l) => l.forward(input),
            Layer::GlobalAvgPool(l) => l.forward(input),
            Layer::Dropout(l) => Ok(l.forward(input, rng)),
            Layer::Dense(l) => l.forward(input),
        }
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.infer(input),
            Layer::BatchNorm(l) => l.infer(input),
            Layer::Relu(l) => Ok(l.infer(input)),
            Layer::MaxPool(l) => l.infer(input),
            Layer::GlobalAvgPool(l) => l.infer(input),
            Layer::Dropout(_) => Ok(input.clone()),
            Layer::Dense(l) => l.infer(input),
        }
    }

    pub fn backward(&mut self, grad_out: Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::MaxPool(l) => l.backward(grad_out),
            Layer::GlobalAvgPool(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
        }
    }

    /// (values, grads) pairs for each trainable tensor in this layer.
    pub fn param_tensors(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv2d(l) => vec![
                (&mut l.weights, &mut l.grad_weights),
                (&mut l.bias, &mut l.grad_bias),
            ],
            Layer::BatchNorm(l) => vec![
                (&mut l.gamma, &mut l.grad_gamma),
                (&mut l.beta, &mut l.grad_beta),
            ],
            Layer::Dense(l) => vec![
                (&mut l.weights, &mut l.grad_weights),
                (&mut l.bias, &mut l.grad_bias),
            ],
            _ => Vec::new(),
        }
    }

    /// Read-only view of the trainable tensors.
    pub fn param_values(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv2d(l) => vec![&l.weights, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Dense(l) => vec![&l.weights, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn frozen(&self) -> bool {
        match self {
            Layer::Conv2d(l) => l.frozen,
            Layer::BatchNorm(l) => l.frozen,
            Layer::Dense(l) => l.frozen,
            _ => false,
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Conv2d(l) => l.frozen = frozen,
            Layer::BatchNorm(l) => l.frozen = frozen,
            Layer::Dense(l) => l.frozen = frozen,
            _ => {}
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, grads) in self.param_tensors() {
            grads.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Central finite differences against the analytic backward pass, using a
    // random projection of the output as the scalar loss. The numeric side
    // never touches the backward code.
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn random_tensor(shape: &[usize], rng: &mut DetRng, lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.range_f64(lo, hi);
        }
        t
    }

    fn projection(shape: &[usize], rng: &mut DetRng) -> Tensor {
        random_tensor(shape, rng, -1.0, 1.0)
    }

    fn project(out: &Tensor, weights: &Tensor) -> f64 {
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = DetRng::new(100 + seed);
            let mut conv = Conv2d::new(2, 3, 3, 1, 1, &mut rng);
            let input = random_tensor(&[2, 2, 6, 6], &mut rng, -1.0, 1.0);
            let (oh, ow) = conv.out_dims(6, 6).unwrap();
            let proj = projection(&[2, 3, oh, ow], &mut rng);

            let out = conv.forward(input.clone()).unwrap();
            assert_eq!(out.shape(), &[2, 3, oh, ow]);
            let grad_in = conv.backward(proj.clone()).unwrap();

            let mut probe = input.clone();
            let mut numeric_in = Vec::new();
            for i in 0..probe.numel() {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + EPS;
                let up = project(&conv.infer(&probe).unwrap(), &proj);
                probe.data_mut()[i] = orig - EPS;
                let down = project(&conv.infer(&probe).unwrap(), &proj);
                probe.data_mut()[i] = orig;
                numeric_in.push((up - down) / (2.0 * EPS));
            }
            assert!(max_rel_err(grad_in.data(), &numeric_in) < TOL);

            let mut numeric_w = Vec::new();
            for i in 0..conv.weights.len() {
                let orig = conv.weights[i];
                conv.weights[i] = orig + EPS;
                let up = project(&conv.infer(&input).unwrap(), &proj);
                conv.weights[i] = orig - EPS;
                let down = project(&conv.infer(&input).unwrap(), &proj);
                conv.weights[i] = orig;
                numeric_w.push((up - down) / (2.0 * EPS));
            }
            assert!(max_rel_err(&conv.grad_weights, &numeric_w) < TOL);

            let mut numeric_b = Vec::new();
            for i in 0..conv.bias.len() {
                let orig = conv.bias[i];
                conv.bias[i] = orig + EPS;
                let up = project(&conv.infer(&input).unwrap(), &proj);
                conv.bias[i] = orig - EPS;
                let down = project(&conv.infer(&input).unwrap(), &proj);
                conv.bias[i] = orig;
                numeric_b.push((up - down) / (2.0 * EPS));
            }
            assert!(max_rel_err(&conv.grad_bias, &numeric_b) < TOL);
        }
    }

    #[test]
    fn conv_identity_and_all_ones_kernels() {
        let mut rng = DetRng::new(1);
        // 1x1 identity kernel.
        let mut conv = Conv2d::new(1, 1, 1, 1, 0, &mut rng);
        conv.weights = vec![1.0];
        conv.bias = vec![0.0];
        let input = random_tensor(&[1, 1, 5, 5], &mut rng, 0.0, 1.0);
        let out = conv.infer(&input).unwrap();
        assert_eq!(out.data(), input.data());

        // 3x3 all-ones kernel on a constant image, zero bias, no padding.
        let mut conv = Conv2d::new(1, 1, 3, 1, 0, &mut rng);
        conv.weights = vec![1.0; 9];
        conv.bias = vec![0.0];
        let input = Tensor::from_vec(vec![1, 1, 5, 5], vec![0.4; 25]).unwrap();
        let out = conv.infer(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        for &v in out.data() {
            assert!((v - 9.0 * 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_stride_two_gradcheck() {
        let mut rng = DetRng::new(77);
        let mut conv = Conv2d::new(1, 2, 3, 2, 1, &mut rng);
        let input = random_tensor(&[1, 1, 7, 7], &mut rng, -1.0, 1.0);
        let (oh, ow) = conv.out_dims(7, 7).unwrap();
        assert_eq!((oh, ow), (4, 4));
        let proj = projection(&[1, 2, oh, ow], &mut rng);
        conv.forward(input.clone()).unwrap();
        let grad_in = conv.backward(proj.clone()).unwrap();
        let mut probe = input.clone();
        let mut numeric = Vec::new();
        for i in 0..probe.numel() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + EPS;
            let up = project(&conv.infer(&probe).unwrap(), &proj);
            probe.data_mut()[i] = orig - EPS;
            let down = project(&conv.infer(&probe).unwrap(), &proj);
            probe.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * EPS));
        }
        assert!(max_rel_err(grad_in.data(), &numeric) < TOL);
    }

    #[test]
    fn batch_norm_train_mode_standardizes() {
        let mut rng = DetRng::new(5);
        let mut bn = BatchNorm2d::new(3);
        let input = random_tensor(&[4, 3, 5, 5], &mut rng, -2.0, 3.0);
        let out = bn.forward(input).unwrap();
        let plane = 25;
        for c in 0..3 {
            let mut values = Vec::new();
            for n in 0..4 {
                values.extend_from_slice(&out.data()[(n * 3 + c) * plane..][..plane]);
            }
            let m = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
            assert!(m.abs() < 1e-9, "channel mean {m}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel std {}", var.sqrt());
        }
    }

    #[test]
    fn batch_norm_fixed_point_on_standardized_input() {
        // gamma=1, beta=0 on an already-standardized batch: output ~ input.
        let mut rng = DetRng::new(17);
        let mut input = random_tensor(&[4, 1, 4, 4], &mut rng, -1.0, 1.0);
        let n = input.numel() as f64;
        let mean = input.data().iter().sum::<f64>() / n;
        let var = input.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        for v in input.data_mut() {
            *v = (*v - mean) / var.sqrt();
        }
        let mut bn = BatchNorm2d::new(1);
        let out = bn.forward(input.clone()).unwrap();
        for (a, b) in out.data().iter().zip(input.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_rejects_batch_of_one_in_train() {
        let mut bn = BatchNorm2d::new(2);
        let input = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(bn.forward(input).is_err());
    }

    #[test]
    fn batch_norm_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = DetRng::new(200 + seed);
            let mut bn = BatchNorm2d::new(2);
            for g in &mut bn.gamma {
                *g = rng.range_f64(0.5, 1.5);
            }
            for b in &mut bn.beta {
                *b = rng.range_f64(-0.5, 0.5);
            }
            let input = random_tensor(&[3, 2, 4, 4], &mut rng, -1.0, 1.0);
            let proj = projection(&[3, 2, 4, 4], &mut rng);

            let out = bn.forward(input.clone()).unwrap();
            assert_eq!(out.shape(), input.shape());
            let grad_in = bn.backward(proj.clone()).unwrap();

            // Finite differences must re-run the full train-mode forward so
            // the batch-statistic coupling is included.
            let eval = |bn_template: &BatchNorm2d, x: &Tensor| {
                let mut fresh = bn_template.clone();
                project(&fresh.forward(x.clone()).unwrap(), &proj)
            };
            let mut probe = input.clone();
            let mut numeric = Vec::new();
            for i in 0..probe.numel() {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + EPS;
                let up = eval(&bn, &probe);
                probe.data_mut()[i] = orig - EPS;
                let down = eval(&bn, &probe);
                probe.data_mut()[i] = orig;
                numeric.push((up - down) / (2.0 * EPS));
            }
            assert!(max_rel_err(grad_in.data(), &numeric) < TOL, "input gradient");

            let mut numeric_g = Vec::new();
            for i in 0..bn.gamma.len() {
                let orig = bn.gamma[i];
                let mut hi = bn.clone();
                hi.gamma[i] = orig + EPS;
                let up = eval(&hi, &input);
                let mut lo = bn.clone();
                lo.gamma[i] = orig - EPS;
                let down = eval(&lo, &input);
                numeric_g.push((up - down) / (2.0 * EPS));
            }
            assert!(max_rel_err(&bn.grad_gamma, &numeric_g) < TOL, "gamma gradient");

            let mut numeric_b = Vec::new();
            for i in 0..bn.beta.len() {
                let orig = bn.beta[i];
                let mut hi = bn.clone();
                hi.beta[i] = orig + EPS;
                let up = eval(&hi, &input);
                let mut lo = bn.clone();
                lo.beta[i] = orig - EPS;
                let down = eval(&lo, &input);
                numeric_b.push((up - down) / (2.0 * EPS));
            }
            assert!(max_rel_err(&bn.grad_beta, &numeric_b) < TOL, "beta gradient");
        }
    }

    #[test]
    fn gap_known_values_and_gradient() {
        let input = Tensor::from_vec(vec![1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        let mut gap = GlobalAvgPool::default();
        let out = gap.forward(input).unwrap();
        assert_eq!(out.data(), &[2.5, 5.0]);
        let grad = gap
            .backward(Tensor::from_vec(vec![1, 2], vec![4.0, 8.0]).unwrap())
            .unwrap();
        for &v in &grad.data()[..4] {
            assert_eq!(v, 1.0);
        }
        for &v in &grad.data()[4..] {
            assert_eq!(v, 2.0);
        }
    }

    #[test]
    fn relu_maxpool_dense_gradcheck() {
        let mut rng = DetRng::new(321);
        // ReLU: inputs bounded away from the kink.
        let mut relu = Relu::default();
        let mut input = random_tensor(&[2, 2, 4, 4], &mut rng, 0.1, 1.0);
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        let proj = projection(&[2, 2, 4, 4], &mut rng);
        relu.forward(input.clone());
        let grad = relu.backward(proj.clone()).unwrap();
        for (i, (g, x)) in grad.data().iter().zip(input.data()).enumerate() {
            let expect = if *x > 0.0 { proj.data()[i] } else { 0.0 };
            assert_eq!(*g, expect);
        }

        // Max pool: gradient routes to the window argmax.
        let mut pool = MaxPool2::default();
        let input = random_tensor(&[1, 1, 4, 4], &mut rng, 0.0, 1.0);
        let out = pool.forward(input.clone()).unwrap();
        let proj = projection(&[1, 1, 2, 2], &mut rng);
        let grad = pool.backward(proj.clone()).unwrap();
        let mut numeric = Vec::new();
        let pool_ref = MaxPool2::default();
        let mut probe = input.clone();
        for i in 0..probe.numel() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + EPS;
            let up = project(&pool_ref.infer(&probe).unwrap(), &proj);
            probe.data_mut()[i] = orig - EPS;
            let down = project(&pool_ref.infer(&probe).unwrap(), &proj);
            probe.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * EPS));
        }
        assert!(max_rel_err(grad.data(), &numeric) < TOL);
        assert_eq!(out.shape(), &[1, 1, 2, 2]);

        // Dense.
        let mut dense = Dense::new(5, 3, &mut rng);
        let input = random_tensor(&[2, 5], &mut rng, -1.0, 1.0);
        let proj = projection(&[2, 3], &mut rng);
        dense.forward(input.clone()).unwrap();
        let grad_in = dense.backward(proj.clone()).unwrap();
        let mut probe = input.clone();
        let mut numeric = Vec::new();
        for i in 0..probe.numel() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + EPS;
            let up = project(&dense.infer(&probe).unwrap(), &proj);
            probe.data_mut()[i] = orig - EPS;
            let down = project(&dense.infer(&probe).unwrap(), &proj);
            probe.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * EPS));
        }
        assert!(max_rel_err(grad_in.data(), &numeric) < TOL);

        let mut numeric_w = Vec::new();
        for i in 0..dense.weights.len() {
            let orig = dense.weights[i];
            dense.weights[i] = orig + EPS;
            let up = project(&dense.infer(&input).unwrap(), &proj);
            dense.weights[i] = orig - EPS;
            let down = project(&dense.infer(&input).unwrap(), &proj);
            dense.weights[i] = orig;
            numeric_w.push((up - down) / (2.0 * EPS));
        }
        assert!(max_rel_err(&dense.grad_weights, &numeric_w) < TOL);
    }

    #[test]
    fn dropout_gradient_uses_same_mask() {
        let mut rng = DetRng::from_seed_index(3, 9);
        let mut layer = DropoutLayer::new(0.3).unwrap();
        let input = random_tensor(&[4, 8], &mut DetRng::new(4), -1.0, 1.0);
        let out = layer.forward(input.clone(), &mut rng);
        let proj = projection(&[4, 8], &mut DetRng::new(5));
        let grad = layer.backward(proj.clone()).unwrap();
        let scale = 1.0 / 0.7;
        for i in 0..input.numel() {
            let kept = out.data()[i] != 0.0 || input.data()[i] == 0.0;
            let expect = if kept { proj.data()[i] * scale } else { 0.0 };
            assert!((grad.data()[i] - expect).abs() < 1e-12);
        }
    }
}
