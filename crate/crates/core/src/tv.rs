//! Anisotropic total variation of feature maps.
//!
//! `TV(x) = Σ |x[i,j+1] − x[i,j]| + |x[i+1,j] − x[i,j]|` over in-range
//! forward differences; the last row and column contribute no forward term.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f64 = 1e-5;

/// Regularizer strength and placement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvConfig {
    pub lambda: f64,
    /// Layer whose output is regularized; `None` means the first convolution.
    pub tap: Option<usize>,
    /// Regularize the augmented views too, not only the clean view.
    pub all_views: bool,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            tap: None,
            all_views: false,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!(
                "tv lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `sign(d)` with `sign(0) = 0`, branch-free.
fn sign(d: f32) -> f32 {
    f32::from(u8::from(d > 0.0)) - f32::from(u8::from(d < 0.0))
}

/// `Σ |bᵢ − aᵢ|` with eight f32 lanes folded into f64.
fn abs_diff_sum(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += (y[l] - x[l]).abs();
        }
    }
    let mut s: f64 = acc.iter().map(|&v| f64::from(v)).sum();
    for (x, y) in ra.iter().zip(rb) {
        s += f64::from((y - x).abs());
    }
    s
}

/// TV of one `h × w` row-major map.
pub fn tv_norm(map: &[f32], h: usize, w: usize) -> f64 {
    assert_eq!(map.len(), h * w, "map length must be h*w");
    let mut total = 0.0f64;
    for i in 0..h {
        let row = &map[i * w..(i + 1) * w];
        if w > 1 {
            total += abs_diff_sum(&row[..w - 1], &row[1..]);
        }
        if i + 1 < h {
            total += abs_diff_sum(row, &map[(i + 1) * w..(i + 2) * w]);
        }
    }
    total
}

/// Subgradient of [`tv_norm`] with `sign(0) = 0`, added into `out` scaled by `scale`.
///
/// Pixel `(i, j)` receives `sign(dh[i][j−1]) − sign(dh[i][j]) + sign(dv[i−1][j]) − sign(dv[i][j])`
/// where `dh`, `dv` are the forward differences that exist.
pub fn tv_grad_into(map: &[f32], h: usize, w: usize, scale: f64, out: &mut [f32]) {
    assert_eq!(map.len(), h * w, "map length must be h*w");
    assert_eq!(out.len(), h * w, "output length must be h*w");
    let scale = scale as f32;
    // sh[j] = sign of horizontal difference entering column j (0 at j = 0 and past the end).
    let mut sh = vec![0.0f32; w + 1];
    let mut dv_prev = vec![0.0f32; w];
    let mut dv_cur = vec![0.0f32; w];
    for i in 0..h {
        let row = &map[i * w..(i + 1) * w];
        for j in 1..w {
            sh[j] = sign(row[j] - row[j - 1]);
        }
        if i + 1 < h {
            let next = &map[(i + 1) * w..(i + 2) * w];
            for ((d, &a), &b) in dv_cur.iter_mut().zip(row).zip(next) {
                *d = sign(b - a);
            }
        } else {
            dv_cur.iter_mut().for_each(|d| *d = 0.0);
        }
        let o = &mut out[i * w..(i + 1) * w];
        for j in 0..w {
            // Entries are small integers, exact in f32.
            let g = sh[j] - sh[j + 1] + dv_prev[j] - dv_cur[j];
            o[j] += g * scale;
        }
        std::mem::swap(&mut dv_prev, &mut dv_cur);
    }
}

pub fn tv_grad(map: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; h * w];
    tv_grad_into(map, h, w, 1.0, &mut out);
    out
}

/// `λ · mean_n Σ_c TV(F[n,c])` and its gradient with respect to `tapped`.
pub fn tv_loss_batch(tapped: &Tensor, lambda: f64) -> (f64, Tensor) {
    let s = tapped.shape();
    let mut grad = Tensor::zeros(s);
    if lambda == 0.0 || s.n == 0 {
        return (0.0, grad);
    }
    let scale = lambda / s.n as f64;
    let plane = s.plane();
    let mut total = 0.0f64;
    for (map, g) in tapped.data().chunks(plane).zip(grad.data_mut().chunks_mut(plane)) {
        total += tv_norm(map, s.h, s.w);
        tv_grad_into(map, s.h, s.w, scale, g);
    }
    (total * scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn small_examples() {
        assert_eq!(tv_norm(&[0.0, 1.0, 2.0, 3.0], 2, 2), 6.0);
        assert_eq!(tv_norm(&[0.0, 2.0, 4.0, 6.0], 2, 2), 12.0);
        assert_eq!(tv_norm(&[0.7; 9], 3, 3), 0.0);
        assert_eq!(tv_grad(&[0.0, 1.0, 2.0], 1, 3), vec![-1.0, 0.0, 1.0]);
        assert!(tv_grad(&[0.3; 12], 3, 4).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_loss_is_a_mean() {
        let one = Tensor::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let (loss, _) = tv_loss_batch(&one, 1e-5);
        assert!((loss - 6e-5).abs() < 1e-18);
        let two = Tensor::from_vec(Shape4::new(2, 1, 2, 2), [one.data(), one.data()].concat()).unwrap();
        assert_eq!(tv_loss_batch(&two, 1e-5).0, loss);
        let (zero, g) = tv_loss_batch(&two, 0.0);
        assert_eq!(zero, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_lambda_rejected() {
        let cfg = TvConfig {
            lambda: -1.0,
            ..TvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
