//! Float64 reference layers and central-difference gradient checks.
//!
//! Each check draws a random problem, projects the layer output onto a
//! random direction `r` so the scalar loss is `Σ r·y`, feeds `r` to the
//! library backward pass, and compares against central differences of an
//! independent f64 forward pass. The error measure is
//! `max_i |analytic_i − numeric_i| / max_i |numeric_i|`.

use fqln::nn::layers::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, global_avgpool_backward,
    global_avgpool_forward, linear_backward, linear_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward, Mode, BN_EPS,
};
use fqln::nn::softmax_cross_entropy;
use fqln::rng::RngStream;
use fqln::tv::tv_loss_batch;
use fqln::{Shape4, Tensor};

const STEP: f64 = 1e-5;

fn uniform(rng: &mut RngStream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
}

/// Values rounded to f32, so the reference and the library see the same inputs.
fn f32_exact(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x as f32)).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn tensor(shape: Shape4, v: &[f64]) -> Tensor {
    Tensor::from_vec(shape, to_f32(v)).expect("finite test data")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (&a, &n)| m.max((f64::from(a) - n).abs()));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

struct ConvProblem {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvProblem {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn forward(&self, x: &[f64], wt: &[f64], b: &[f64]) -> Vec<f64> {
        let (oh, ow) = self.out_hw();
        let mut y = vec![0.0; self.n * self.out_c * oh * ow];
        for n in 0..self.n {
            for o in 0..self.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for c in 0..self.c {
                            for ky in 0..self.k {
                                for kx in 0..self.k {
                                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                                        continue;
                                    }
                                    let xi = ((n * self.c + c) * self.h + iy as usize) * self.w + ix as usize;
                                    let wi = ((o * self.c + c) * self.k + ky) * self.k + kx;
                                    acc += x[xi] * wt[wi];
                                }
                            }
                        }
                        y[((n * self.out_c + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }
}

/// Worst error over dx, dW and db of one random convolution.
fn conv_trial(rng: &mut RngStream) -> f64 {
    let k = [1, 3][rng.index(2)];
    let p = ConvProblem {
        n: 1 + rng.index(2),
        c: 1 + rng.index(3),
        h: 4 + rng.index(4),
        w: 4 + rng.index(4),
        out_c: 1 + rng.index(4),
        k,
        stride: 1 + rng.index(2),
        pad: if k == 3 { rng.index(2) } else { 0 },
    };
    let xs = Shape4::new(p.n, p.c, p.h, p.w);
    let wdims = vec![p.out_c, p.c, p.k, p.k];
    let x = f32_exact(uniform(rng, xs.len(), -1.0, 1.0));
    let wt = f32_exact(uniform(rng, wdims.iter().product(), -1.0, 1.0));
    let b = f32_exact(uniform(rng, p.out_c, -0.5, 0.5));
    let (oh, ow) = p.out_hw();
    let r = f32_exact(uniform(rng, p.n * p.out_c * oh * ow, -1.0, 1.0));

    let (y, cache) = conv2d_forward(
        &tensor(xs, &x),
        &to_f32(&wt),
        &wdims,
        &to_f32(&b),
        p.stride,
        p.pad,
        true,
    )
    .unwrap();
    let (dx, dw, db) = conv2d_backward(&cache.unwrap(), &to_f32(&wt), &tensor(y.shape(), &r), true).unwrap();

    let nx = numeric_grad(&x, |v| dot(&r, &p.forward(v, &wt, &b)));
    let nw = numeric_grad(&wt, |v| dot(&r, &p.forward(&x, v, &b)));
    let nb = numeric_grad(&b, |v| dot(&r, &p.forward(&x, &wt, v)));
    rel_error(dx.unwrap().data(), &nx)
        .max(rel_error(&dw, &nw))
        .max(rel_error(&db, &nb))
}

fn bn_reference(s: Shape4, x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let plane = s.h * s.w;
    let count = (s.n * plane) as f64;
    let mut y = vec![0.0; x.len()];
    for c in 0..s.c {
        let idx = |n: usize, i: usize| (n * s.c + c) * plane + i;
        let mean = (0..s.n)
            .flat_map(|n| (0..plane).map(move |i| (n, i)))
            .map(|(n, i)| x[idx(n, i)])
            .sum::<f64>()
            / count;
        let var = (0..s.n)
            .flat_map(|n| (0..plane).map(move |i| (n, i)))
            .map(|(n, i)| (x[idx(n, i)] - mean).powi(2))
            .sum::<f64>()
            / count;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        for n in 0..s.n {
            for i in 0..plane {
                y[idx(n, i)] = gamma[c] * (x[idx(n, i)] - mean) * inv + beta[c];
            }
        }
    }
    y
}

fn batchnorm_trial(rng: &mut RngStream) -> f64 {
    let s = Shape4::new(2 + rng.index(3), 1 + rng.index(3), 2 + rng.index(3), 2 + rng.index(3));
    let x = f32_exact(uniform(rng, s.len(), -2.0, 2.0));
    let gamma = f32_exact(uniform(rng, s.c, 0.5, 1.5));
    let beta = f32_exact(uniform(rng, s.c, -0.5, 0.5));
    let r = f32_exact(uniform(rng, s.len(), -1.0, 1.0));
    let (mut rm, mut rv) = (vec![0.0f32; s.c], vec![1.0f32; s.c]);
    let (_, cache) = batchnorm_forward(
        &tensor(s, &x),
        &to_f32(&gamma),
        &to_f32(&beta),
        &mut rm,
        &mut rv,
        0.1,
        Mode::Train,
    )
    .unwrap();
    let (dx, dg, dbeta) = batchnorm_backward(&cache.unwrap(), &to_f32(&gamma), &tensor(s, &r)).unwrap();

    let nx = numeric_grad(&x, |v| dot(&r, &bn_reference(s, v, &gamma, &beta)));
    let ng = numeric_grad(&gamma, |v| dot(&r, &bn_reference(s, &x, v, &beta)));
    let nb = numeric_grad(&beta, |v| dot(&r, &bn_reference(s, &x, &gamma, v)));
    rel_error(dx.data(), &nx)
        .max(rel_error(&dg, &ng))
        .max(rel_error(&dbeta, &nb))
}

/// Inputs at least `gap` away from zero, so no probe crosses the kink.
fn relu_trial(rng: &mut RngStream) -> f64 {
    let gap = 1e-2;
    let s = Shape4::new(1 + rng.index(3), 1 + rng.index(3), 2 + rng.index(4), 2 + rng.index(4));
    let x = f32_exact(
        uniform(rng, s.len(), gap, 1.0)
            .into_iter()
            .map(|v| if rng.uniform() < 0.5 { -v } else { v })
            .collect(),
    );
    let r = f32_exact(uniform(rng, s.len(), -1.0, 1.0));
    let y = relu_forward(&tensor(s, &x));
    let dx = relu_backward(&y, &tensor(s, &r));
    let nx = numeric_grad(&x, |v| v.iter().zip(&r).map(|(a, b)| a.max(0.0) * b).sum());
    rel_error(dx.data(), &nx)
}

/// Distinct values spaced well beyond the probe step, so every window has a
/// unique maximum that stays put under perturbation.
fn maxpool_trial(rng: &mut RngStream) -> f64 {
    let s = Shape4::new(
        1 + rng.index(2),
        1 + rng.index(3),
        2 * (1 + rng.index(3)),
        2 * (1 + rng.index(3)),
    );
    let mut order: Vec<usize> = (0..s.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.index(i + 1));
    }
    let x = f32_exact(order.iter().map(|&k| k as f64 * 0.03 - 1.0).collect());
    let r = f32_exact(uniform(rng, s.len() / 4, -1.0, 1.0));
    let (y, arg) = maxpool_forward(&tensor(s, &x), 2);
    let dx = maxpool_backward(s, &arg, &tensor(y.shape(), &r));
    let reference = |v: &[f64]| {
        let (oh, ow) = (s.h / 2, s.w / 2);
        let mut total = 0.0;
        for nc in 0..s.n * s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let at = |dy: usize, dx: usize| v[nc * s.h * s.w + (2 * oy + dy) * s.w + 2 * ox + dx];
                    let m = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
                    total += m * r[(nc * oh + oy) * ow + ox];
                }
            }
        }
        total
    };
    rel_error(dx.data(), &numeric_grad(&x, reference))
}

fn avgpool_trial(rng: &mut RngStream) -> f64 {
    let s = Shape4::new(1 + rng.index(3), 1 + rng.index(4), 1 + rng.index(5), 1 + rng.index(5));
    let x = f32_exact(uniform(rng, s.len(), -1.0, 1.0));
    let r = f32_exact(uniform(rng, s.n * s.c, -1.0, 1.0));
    global_avgpool_forward(&tensor(s, &x));
    let dx = global_avgpool_backward(s, &tensor(Shape4::new(s.n, s.c, 1, 1), &r));
    let plane = s.h * s.w;
    let nx = numeric_grad(&x, |v| {
        v.chunks(plane)
            .zip(&r)
            .map(|(p, w)| p.iter().sum::<f64>() / plane as f64 * w)
            .sum()
    });
    rel_error(dx.data(), &nx)
}

fn linear_trial(rng: &mut RngStream) -> f64 {
    let s = Shape4::new(1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(2), 1 + rng.index(2));
    let fin = s.c * s.h * s.w;
    let fout = 1 + rng.index(5);
    let x = f32_exact(uniform(rng, s.len(), -1.0, 1.0));
    let wt = f32_exact(uniform(rng, fout * fin, -1.0, 1.0));
    let b = f32_exact(uniform(rng, fout, -0.5, 0.5));
    let r = f32_exact(uniform(rng, s.n * fout, -1.0, 1.0));
    let reference = |x: &[f64], wt: &[f64], b: &[f64]| -> f64 {
        let mut total = 0.0;
        for n in 0..s.n {
            for o in 0..fout {
                let y = b[o] + dot(&wt[o * fin..(o + 1) * fin], &x[n * fin..(n + 1) * fin]);
                total += y * r[n * fout + o];
            }
        }
        total
    };
    linear_forward(&tensor(s, &x), &to_f32(&wt), &to_f32(&b)).unwrap();
    let (dx, dw, db) = linear_backward(&tensor(s, &x), &to_f32(&wt), &tensor(Shape4::new(s.n, fout, 1, 1), &r));
    rel_error(dx.data(), &numeric_grad(&x, |v| reference(v, &wt, &b)))
        .max(rel_error(&dw, &numeric_grad(&wt, |v| reference(&x, v, &b))))
        .max(rel_error(&db, &numeric_grad(&b, |v| reference(&x, &wt, v))))
}

fn cross_entropy_trial(rng: &mut RngStream) -> f64 {
    let (n, k) = (1 + rng.index(4), 2 + rng.index(6));
    let logits = f32_exact(uniform(rng, n * k, -3.0, 3.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.index(k)).collect();
    let (_, grad) = softmax_cross_entropy(&tensor(Shape4::new(n, k, 1, 1), &logits), &labels).unwrap();
    let reference = |v: &[f64]| {
        v.chunks(k)
            .zip(&labels)
            .map(|(row, &l)| row.iter().map(|z| z.exp()).sum::<f64>().ln() - row[l])
            .sum::<f64>()
            / n as f64
    };
    rel_error(grad.data(), &numeric_grad(&logits, reference))
}

/// Maps whose neighbouring entries all differ by more than 1e-3.
fn tv_trial(rng: &mut RngStream) -> f64 {
    let s = Shape4::new(1 + rng.index(3), 1 + rng.index(3), 6, 6);
    let x = loop {
        let x = f32_exact(uniform(rng, s.len(), -1.0, 1.0));
        let separated = x.chunks(36).all(|m| {
            (0..6).all(|i| (0..5).all(|j| (m[i * 6 + j + 1] - m[i * 6 + j]).abs() > 1e-3))
                && (0..5).all(|i| (0..6).all(|j| (m[(i + 1) * 6 + j] - m[i * 6 + j]).abs() > 1e-3))
        });
        if separated {
            break x;
        }
    };
    let lambda = rng.uniform_range(0.5, 2.0);
    let (_, grad) = tv_loss_batch(&tensor(s, &x), lambda);
    let reference = |v: &[f64]| {
        let tv: f64 = v
            .chunks(36)
            .map(|m| {
                let mut t = 0.0;
                for i in 0..6 {
                    for j in 0..6 {
                        if j + 1 < 6 {
                            t += (m[i * 6 + j + 1] - m[i * 6 + j]).abs();
                        }
                        if i + 1 < 6 {
                            t += (m[(i + 1) * 6 + j] - m[i * 6 + j]).abs();
                        }
                    }
                }
                t
            })
            .sum();
        lambda * tv / s.n as f64
    };
    rel_error(grad.data(), &numeric_grad(&x, reference))
}

pub type Trial = fn(&mut RngStream) -> f64;

pub const CHECKS: [(&str, Trial); 8] = [
    ("conv2d", conv_trial),
    ("batchnorm", batchnorm_trial),
    ("relu", relu_trial),
    ("maxpool", maxpool_trial),
    ("global_avgpool", avgpool_trial),
    ("linear", linear_trial),
    ("softmax_cross_entropy", cross_entropy_trial),
    ("tv", tv_trial),
];
