//! Layer kernels with explicit forward and backward passes.
//!
//! Convolutions use im2col followed by a single-precision GEMM. Reductions
//! run in a fixed sequential order so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Learnable parameter with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, value: Vec<f32>) -> Self {
        let len = dims.iter().product::<usize>();
        assert_eq!(value.len(), len, "parameter length must match dims");
        Self {
            name: name.into(),
            dims,
            grad: vec![0.0; len],
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// `C = A·B (+ C if accumulate)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices covering the strided extents, checked in
    // debug builds by the length assertions at each call site.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn check(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Shape("kernel and stride must be positive".into()));
        }
        if self.in_h + 2 * self.padding < self.kernel || self.in_w + 2 * self.padding < self.kernel {
            return Err(Error::Shape(format!(
                "kernel {} larger than padded input {}x{}",
                self.kernel, self.in_h, self.in_w
            )));
        }
        Ok(())
    }
}

/// Writes the patch matrix of one sample; row `r` starts at `cols[r * row_stride]`.
fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32], row_stride: usize) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * row_stride..row * row_stride + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`] for one sample, accumulating into `dx`.
fn col2im_add(cols: &[f32], g: &ConvGeom, dx: &mut [f32], row_stride: usize) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * row_stride..row * row_stride + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Saved state of a training-mode convolution.
#[derive(Clone, Debug)]
pub struct ConvCache {
    pub geom: ConvGeom,
    pub batch: usize,
    /// Per-sample patch matrices, `rows × (out_h · out_w)` each.
    cols: Vec<f32>,
}

fn conv_geom(x: Shape4, weight_dims: &[usize], stride: usize, padding: usize) -> Result<ConvGeom> {
    if weight_dims.len() != 4 || weight_dims[2] != weight_dims[3] {
        return Err(Error::Shape(format!(
            "conv weight must be (out, in, k, k), got {weight_dims:?}"
        )));
    }
    if weight_dims[1] != x.c {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            weight_dims[1], x.c
        )));
    }
    let g = ConvGeom {
        in_c: x.c,
        in_h: x.h,
        in_w: x.w,
        out_c: weight_dims[0],
        kernel: weight_dims[2],
        stride,
        padding,
    };
    g.check()?;
    Ok(g)
}

/// Zero-padded cross-correlation. `weights` is (out, in, k, k) row-major.
/// Returns the output and, when `keep_cache`, what backward needs.
pub fn conv2d_forward(
    x: &Tensor,
    weights: &[f32],
    weight_dims: &[usize],
    bias: &[f32],
    stride: usize,
    padding: usize,
    keep_cache: bool,
) -> Result<(Tensor, Option<ConvCache>)> {
    let s = x.shape();
    let g = conv_geom(s, weight_dims, stride, padding)?;
    if bias.len() != g.out_c || weights.len() != g.out_c * g.col_rows() {
        return Err(Error::Shape("conv weight/bias sizes disagree".into()));
    }
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let out_shape = Shape4::new(s.n, g.out_c, g.out_h(), g.out_w());
    let mut y = vec![0.0f32; out_shape.len()];
    let mut all_cols = if keep_cache {
        vec![0.0f32; s.n * rows * ncols]
    } else {
        Vec::new()
    };
    let mut scratch = if keep_cache {
        Vec::new()
    } else {
        vec![0.0f32; rows * ncols]
    };
    for n in 0..s.n {
        let cols: &mut [f32] = if keep_cache {
            &mut all_cols[n * rows * ncols..(n + 1) * rows * ncols]
        } else {
            &mut scratch
        };
        im2col(x.sample(n), &g, cols, ncols);
        let out = &mut y[n * g.out_c * ncols..(n + 1) * g.out_c * ncols];
        gemm(g.out_c, rows, ncols, weights, rows, 1, cols, ncols, 1, out, false);
        for (co, plane) in out.chunks_mut(ncols).enumerate() {
            let b = bias[co];
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    let cache = keep_cache.then_some(ConvCache {
        geom: g,
        batch: s.n,
        cols: all_cols,
    });
    Ok((Tensor::from_vec_unchecked(out_shape, y), cache))
}

/// Gradients of a convolution. `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward(
    cache: &ConvCache,
    weights: &[f32],
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Vec<f32>, Vec<f32>)> {
    let g = cache.geom;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let expect = Shape4::new(cache.batch, g.out_c, g.out_h(), g.out_w());
    if dy.shape() != expect {
        return Err(Error::Shape(format!(
            "conv backward expects dy {expect}, got {}",
            dy.shape()
        )));
    }
    let mut dw = vec![0.0f32; g.out_c * rows];
    let mut db = vec![0.0f64; g.out_c];
    let in_shape = Shape4::new(cache.batch, g.in_c, g.in_h, g.in_w);
    let mut dx = need_dx.then(|| vec![0.0f32; in_shape.len()]);
    let mut dcols = vec![0.0f32; rows * ncols];
    for n in 0..cache.batch {
        let cols = &cache.cols[n * rows * ncols..(n + 1) * rows * ncols];
        let dyn_ = dy.sample(n);
        gemm(g.out_c, ncols, rows, dyn_, ncols, 1, cols, 1, ncols, &mut dw, true);
        for (co, plane) in dyn_.chunks(ncols).enumerate() {
            db[co] += sum_f64(plane);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                rows, g.out_c, ncols, weights, 1, rows, dyn_, ncols, 1, &mut dcols, false,
            );
            let len = in_shape.sample_len();
            col2im_add(&dcols, &g, &mut dx[n * len..(n + 1) * len], ncols);
        }
    }
    let db = db.into_iter().map(|v| v as f32).collect();
    Ok((dx.map(|d| Tensor::from_vec_unchecked(in_shape, d)), dw, db))
}

/// Batch-norm mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;

/// Saved state of a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f64>,
    shape: Shape4,
}

/// Sum with eight f32 lanes folded into f64 (fixed order).
pub(crate) fn sum_f64(xs: &[f32]) -> f64 {
    let mut acc = [0.0f32; 8];
    let chunks = xs.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l];
        }
    }
    let mut s: f64 = acc.iter().map(|&v| f64::from(v)).sum();
    for &v in rem {
        s += f64::from(v);
    }
    s
}

/// `Σ aᵢ·bᵢ`, same accumulation scheme as [`sum_f64`].
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s: f64 = acc.iter().map(|&v| f64::from(v)).sum();
    for (&x, &y) in ra.iter().zip(rb) {
        s += f64::from(x) * f64::from(y);
    }
    s
}

fn sum_sq_dev(xs: &[f32], m: f64) -> f64 {
    let m = m as f32;
    let mut acc = [0.0f32; 8];
    let chunks = xs.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            let d = c[l] - m;
            acc[l] += d * d;
        }
    }
    let mut s: f64 = acc.iter().map(|&v| f64::from(v)).sum();
    for &v in rem {
        s += f64::from(v - m).powi(2);
    }
    s
}

/// Per-channel batch statistics (mean, biased variance) in `f64`.
pub fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    for c in 0..s.c {
        let sum: f64 = (0..s.n).map(|n| sum_f64(x.plane(n, c))).sum();
        let m = sum / count;
        let sq: f64 = (0..s.n).map(|n| sum_sq_dev(x.plane(n, c), m)).sum();
        mean[c] = m;
        var[c] = sq / count;
    }
    (mean, var)
}

/// Batch normalization over (N, H, W) per channel.
///
/// Train mode normalizes with batch statistics and moves `running_*` toward
/// them by `momentum` (running variance uses the unbiased estimate). Eval
/// mode normalizes with the running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
    momentum: f64,
    mode: Mode,
) -> Result<(Tensor, Option<BnCache>)> {
    let s = x.shape();
    if gamma.len() != s.c || beta.len() != s.c || running_mean.len() != s.c || running_var.len() != s.c {
        return Err(Error::Shape(format!(
            "batch norm over {} channels got {} parameters",
            s.c,
            gamma.len()
        )));
    }
    let mut y = vec![0.0f32; s.len()];
    let plane = s.plane();
    match mode {
        Mode::Eval => {
            for c in 0..s.c {
                let inv = 1.0 / (f64::from(running_var[c]) + BN_EPS).sqrt();
                let scale = (f64::from(gamma[c]) * inv) as f32;
                let shift = (f64::from(beta[c]) - f64::from(running_mean[c]) * f64::from(gamma[c]) * inv) as f32;
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    for (o, &v) in y[off..off + plane].iter_mut().zip(x.plane(n, c)) {
                        *o = v * scale + shift;
                    }
                }
            }
            Ok((Tensor::from_vec_unchecked(s, y), None))
        }
        Mode::Train => {
            if s.n < 2 {
                return Err(Error::InvalidBatch(format!(
                    "batch norm in train mode needs at least 2 samples, got {}",
                    s.n
                )));
            }
            let (mean, var) = channel_stats(x);
            let count = (s.n * plane) as f64;
            let mut xhat = vec![0.0f32; s.len()];
            let mut inv_std = vec![0.0f64; s.c];
            for c in 0..s.c {
                let inv = 1.0 / (var[c] + BN_EPS).sqrt();
                inv_std[c] = inv;
                let (m32, inv32) = (mean[c] as f32, inv as f32);
                let (g, b) = (gamma[c], beta[c]);
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    let xs = x.plane(n, c);
                    let xh_out = &mut xhat[off..off + plane];
                    let y_out = &mut y[off..off + plane];
                    for ((&v, xh), o) in xs.iter().zip(xh_out.iter_mut()).zip(y_out.iter_mut()) {
                        *xh = (v - m32) * inv32;
                        *o = g * *xh + b;
                    }
                }
                let unbiased = var[c] * count / (count - 1.0);
                running_mean[c] = ((1.0 - momentum) * f64::from(running_mean[c]) + momentum * mean[c]) as f32;
                running_var[c] = ((1.0 - momentum) * f64::from(running_var[c]) + momentum * unbiased) as f32;
            }
            Ok((
                Tensor::from_vec_unchecked(s, y),
                Some(BnCache {
                    xhat,
                    inv_std,
                    shape: s,
                }),
            ))
        }
    }
}

/// Returns (dx, dgamma, dbeta) for a training-mode batch norm.
pub fn batchnorm_backward(cache: &BnCache, gamma: &[f32], dy: &Tensor) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let s = cache.shape;
    if dy.shape() != s {
        return Err(Error::Shape(format!(
            "batch norm backward expects dy {s}, got {}",
            dy.shape()
        )));
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut dx = vec![0.0f32; s.len()];
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    for c in 0..s.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            sum_dy += sum_f64(dy.plane(n, c));
            sum_dy_xhat += dot_f64(dy.plane(n, c), &cache.xhat[off..off + plane]);
        }
        dgamma[c] = sum_dy_xhat as f32;
        dbeta[c] = sum_dy as f32;
        let k = (f64::from(gamma[c]) * cache.inv_std[c] / count) as f32;
        let (cnt, sdy, sdx) = (count as f32, sum_dy as f32, sum_dy_xhat as f32);
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            let xh = &cache.xhat[off..off + plane];
            for ((o, &d), &h) in dx[off..off + plane].iter_mut().zip(dy.plane(n, c)).zip(xh) {
                *o = k * (cnt * d - sdy - h * sdx);
            }
        }
    }
    Ok((Tensor::from_vec_unchecked(s, dx), dgamma, dbeta))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec_unchecked(x.shape(), data)
}

/// Gradient of ReLU given its output (`y > 0` selects the pass-through).
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &d)| if o > 0.0 { d } else { 0.0 })
        .collect();
    Tensor::from_vec_unchecked(y.shape(), data)
}

/// Non-overlapping `size×size` max pooling (floor on ragged edges).
/// Returns the output and the flat input index of each maximum.
pub fn maxpool_forward(x: &Tensor, size: usize) -> (Tensor, Vec<u32>) {
    let s = x.shape();
    let (oh, ow) = (s.h / size, s.w / size);
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut y = Vec::with_capacity(out_shape.len());
    let mut arg = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            let p = x.plane(n, c);
            if size == 2 {
                for oy in 0..oh {
                    let r0 = 2 * oy * s.w;
                    let r1 = r0 + s.w;
                    for ox in 0..ow {
                        let i = [r0 + 2 * ox, r0 + 2 * ox + 1, r1 + 2 * ox, r1 + 2 * ox + 1];
                        let mut best_i = i[0];
                        for &j in &i[1..] {
                            best_i = if p[j] > p[best_i] { j } else { best_i };
                        }
                        y.push(p[best_i]);
                        arg.push((base + best_i) as u32);
                    }
                }
                continue;
            }
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = (oy * size + dy) * s.w + ox * size + dx;
                            if p[i] > best {
                                best = p[i];
                                best_i = i;
                            }
                        }
                    }
                    y.push(best);
                    arg.push((base + best_i) as u32);
                }
            }
        }
    }
    (Tensor::from_vec_unchecked(out_shape, y), arg)
}

pub fn maxpool_backward(in_shape: Shape4, argmax: &[u32], dy: &Tensor) -> Tensor {
    let mut dx = vec![0.0f32; in_shape.len()];
    for (&i, &d) in argmax.iter().zip(dy.data()) {
        dx[i as usize] += d;
    }
    Tensor::from_vec_unchecked(in_shape, dx)
}

pub fn global_avgpool_forward(x: &Tensor) -> Tensor {
    let s = x.shape();
    let inv = 1.0 / s.plane() as f32;
    let mut y = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            y.push(x.plane(n, c).iter().sum::<f32>() * inv);
        }
    }
    Tensor::from_vec_unchecked(Shape4::new(s.n, s.c, 1, 1), y)
}

pub fn global_avgpool_backward(in_shape: Shape4, dy: &Tensor) -> Tensor {
    let inv = 1.0 / in_shape.plane() as f32;
    let mut dx = Vec::with_capacity(in_shape.len());
    for &d in dy.data() {
        dx.extend(std::iter::repeat_n(d * inv, in_shape.plane()));
    }
    Tensor::from_vec_unchecked(in_shape, dx)
}

/// Fully connected layer on flattened samples; `weights` is (out, in).
pub fn linear_forward(x: &Tensor, weights: &[f32], bias: &[f32]) -> Result<Tensor> {
    let s = x.shape();
    let fin = s.sample_len();
    let fout = bias.len();
    if weights.len() != fout * fin {
        return Err(Error::Shape(format!(
            "linear layer expects {} inputs, got {fin}",
            weights.len() / fout.max(1)
        )));
    }
    let mut y = vec![0.0f32; s.n * fout];
    // (N × in)·(in × out) with the weight read transposed.
    gemm(s.n, fin, fout, x.data(), fin, 1, weights, 1, fin, &mut y, false);
    for row in y.chunks_mut(fout) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(Tensor::from_vec_unchecked(Shape4::new(s.n, fout, 1, 1), y))
}

/// Returns (dx, dW, db).
pub fn linear_backward(x: &Tensor, weights: &[f32], dy: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>) {
    let s = x.shape();
    let fin = s.sample_len();
    let fout = dy.shape().c;
    let mut dw = vec![0.0f32; fout * fin];
    gemm(fout, s.n, fin, dy.data(), 1, fout, x.data(), fin, 1, &mut dw, false);
    let mut db = vec![0.0f32; fout];
    for row in dy.data().chunks(fout) {
        for (b, d) in db.iter_mut().zip(row) {
            *b += d;
        }
    }
    let mut dx = vec![0.0f32; s.n * fin];
    gemm(s.n, fout, fin, dy.data(), fout, 1, weights, fin, 1, &mut dx, false);
    (Tensor::from_vec_unchecked(s, dx), dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_tensor(shape: Shape4, seed: u64) -> Tensor {
        let v = RngStream::new(seed)
            .gaussian_vec(shape.len(), 0.0, 1.0)
            .unwrap()
            .into_iter()
            .map(|x| x as f32)
            .collect();
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn identity_1x1_conv_copies_input() {
        let x = random_tensor(Shape4::new(2, 3, 4, 5), 1);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let (y, _) = conv2d_forward(&x, &w, &[3, 3, 1, 1], &[0.0; 3], 1, 0, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::zeros(Shape4::new(1, 2, 5, 5));
        let w = random_tensor(Shape4::new(4, 2, 3, 3), 2).into_vec();
        let bias = [0.5, -1.0, 2.0, 0.0];
        let (y, _) = conv2d_forward(&x, &w, &[4, 2, 3, 3], &bias, 1, 1, false).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 4, 5, 5));
        for (c, &b) in bias.iter().enumerate() {
            assert!(y.plane(0, c).iter().all(|&v| v == b));
        }
    }

    #[test]
    fn conv_matches_naive_loop_with_stride() {
        let x = random_tensor(Shape4::new(2, 2, 7, 6), 3);
        let w = random_tensor(Shape4::new(3, 2, 3, 3), 4).into_vec();
        let b = [0.1, 0.2, 0.3];
        let (y, _) = conv2d_forward(&x, &w, &[3, 2, 3, 3], &b, 2, 1, false).unwrap();
        let s = y.shape();
        for n in 0..2 {
            for co in 0..3 {
                for oy in 0..s.h {
                    for ox in 0..s.w {
                        let mut acc = f64::from(b[co]);
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy >= 0 && ix >= 0 && iy < 7 && ix < 6 {
                                        acc += f64::from(w[((co * 2 + ci) * 3 + ky) * 3 + kx])
                                            * f64::from(x.at(n, ci, iy as usize, ix as usize));
                                    }
                                }
                            }
                        }
                        assert!((acc as f32 - y.at(n, co, oy, ox)).abs() < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(Shape4::new(1, 2, 5, 5));
        assert!(matches!(
            conv2d_forward(&x, &[0.0; 27], &[1, 3, 3, 3], &[0.0], 1, 1, false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let x = random_tensor(Shape4::new(4, 3, 5, 5), 5);
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let (y, _) = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &mut rm, &mut rv, 0.1, Mode::Train).unwrap();
        let (mean, var) = channel_stats(&y);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-5);
            assert!((var[c] - 1.0).abs() < 1e-3, "{}", var[c]);
        }
    }

    #[test]
    fn batchnorm_eval_matches_train_when_stats_agree() {
        let x = random_tensor(Shape4::new(4, 2, 3, 3), 6);
        let (mean, var) = channel_stats(&x);
        let (gamma, beta) = ([1.5, 0.5], [0.2, -0.3]);
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let (yt, _) = batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, Mode::Train).unwrap();
        let mut em: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
        let mut ev: Vec<f32> = var.iter().map(|&v| v as f32).collect();
        let (ye, _) = batchnorm_forward(&x, &gamma, &beta, &mut em, &mut ev, 0.1, Mode::Eval).unwrap();
        for (a, b) in yt.data().iter().zip(ye.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_train_rejects_single_sample() {
        let x = Tensor::zeros(Shape4::new(1, 2, 3, 3));
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        assert!(matches!(
            batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], &mut rm, &mut rv, 0.1, Mode::Train),
            Err(Error::InvalidBatch(_))
        ));
    }

    #[test]
    fn pooling_shapes_and_routing() {
        let x = Tensor::from_vec(Shape4::new(1, 1, 2, 4), vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0]).unwrap();
        let (y, arg) = maxpool_forward(&x, 2);
        assert_eq!(y.data(), &[5.0, 9.0]);
        let dx = maxpool_backward(x.shape(), &arg, &Tensor::from_vec(y.shape(), vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let g = global_avgpool_forward(&x);
        assert_eq!(g.data(), &[4.0]);
    }
}
