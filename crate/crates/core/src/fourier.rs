//! Fourier-domain diagnostics for corruptions.
//!
//! Two transform routes are provided: [`dft2_direct`], a plain O(N²)-per-axis
//! sum in `f64`, and [`dft2`], which uses an iterative radix-2 FFT along any
//! axis whose length is a power of two and falls back to the direct sum
//! otherwise. Both are unnormalized forward transforms.

use std::f64::consts::PI;

use crate::corruption::{apply_corruption, CorruptionKind, CorruptionSpec};
use crate::data::{Dataset, Image};
use crate::error::{Error, Result};
use crate::rng::{label_hash, RngStream};

/// Minimal complex number; only what the transforms need.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }

    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }

    fn scale(self, s: f64) -> Complex {
        Complex::new(self.re * s, self.im * s)
    }
}

/// Row-major H×W grid of complex values.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex>,
}

impl ComplexGrid {
    pub fn at(&self, u: usize, v: usize) -> Complex {
        self.data[u * self.width + v]
    }
}

fn dft_direct_1d(input: &[Complex], inverse: bool) -> Vec<Complex> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            input.iter().enumerate().fold(Complex::ZERO, |acc, (j, &x)| {
                // Reduce the phase index first to keep the angle small.
                let phase = ((k * j) % n) as f64 / n as f64;
                let (s, c) = (sign * 2.0 * PI * phase).sin_cos();
                acc.add(x.mul(Complex::new(c, s)))
            })
        })
        .collect()
}

fn fft_radix2_in_place(buf: &mut [Complex], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (sign * 2.0 * PI * k as f64 / len as f64).sin_cos();
                let w = Complex::new(c, s);
                let a = buf[start + k];
                let t = buf[start + k + half].mul(w);
                buf[start + k] = a.add(t);
                buf[start + k + half] = a.sub(t);
            }
        }
        len <<= 1;
    }
}

fn transform_1d(input: &mut [Complex], inverse: bool, force_direct: bool) {
    if !force_direct && input.len().is_power_of_two() {
        fft_radix2_in_place(input, inverse);
    } else {
        let out = dft_direct_1d(input, inverse);
        input.copy_from_slice(&out);
    }
}

fn transform_2d(grid: &mut ComplexGrid, inverse: bool, force_direct: bool) {
    let (h, w) = (grid.height, grid.width);
    for row in grid.data.chunks_mut(w) {
        transform_1d(row, inverse, force_direct);
    }
    let mut col = vec![Complex::ZERO; h];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = grid.data[y * w + x];
        }
        transform_1d(&mut col, inverse, force_direct);
        for (y, c) in col.iter().enumerate() {
            grid.data[y * w + x] = *c;
        }
    }
}

fn real_grid(values: &[f64], h: usize, w: usize) -> ComplexGrid {
    assert_eq!(values.len(), h * w, "grid needs h*w values");
    ComplexGrid {
        height: h,
        width: w,
        data: values.iter().map(|&v| Complex::new(v, 0.0)).collect(),
    }
}

/// Unnormalized forward 2D DFT of a real H×W grid (fast route).
pub fn dft2(values: &[f64], h: usize, w: usize) -> ComplexGrid {
    let mut g = real_grid(values, h, w);
    transform_2d(&mut g, false, false);
    g
}

/// Unnormalized forward 2D DFT by direct summation (reference route).
pub fn dft2_direct(values: &[f64], h: usize, w: usize) -> ComplexGrid {
    let mut g = real_grid(values, h, w);
    transform_2d(&mut g, false, true);
    g
}

/// Inverse 2D DFT including the 1/(HW) factor.
pub fn idft2(spec: &ComplexGrid) -> ComplexGrid {
    let mut g = spec.clone();
    transform_2d(&mut g, true, false);
    let s = 1.0 / (g.height * g.width) as f64;
    for v in g.data.iter_mut() {
        *v = v.scale(s);
    }
    g
}

/// Moves the DC bin from (0, 0) to (H/2, W/2).
pub fn fftshift<T: Copy>(values: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    for y in 0..h {
        let sy = (y + h - h / 2) % h;
        for x in 0..w {
            let sx = (x + w - w / 2) % w;
            out.push(values[sy * w + sx]);
        }
    }
    out
}

/// Inverse of [`fftshift`] (identical for even dimensions).
pub fn ifftshift<T: Copy>(values: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    for y in 0..h {
        let sy = (y + h / 2) % h;
        for x in 0..w {
            let sx = (x + w / 2) % w;
            out.push(values[sy * w + sx]);
        }
    }
    out
}

/// DC-centered magnitude spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub mags: Vec<f64>,
}

impl Spectrum {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.mags[u * self.width + v]
    }

    /// Center (DC) coordinates after the shift.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Distance of bin (u, v) from the centered DC bin.
    pub fn radius_of(&self, u: usize, v: usize) -> f64 {
        let (cu, cv) = self.center();
        (u as f64 - cu as f64).hypot(v as f64 - cv as f64)
    }

    /// Mean magnitude over bins whose radius lies in `[lo, hi)`, DC excluded.
    pub fn annulus_mean(&self, lo: f64, hi: f64) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for u in 0..self.height {
            for v in 0..self.width {
                let r = self.radius_of(u, v);
                if r > 0.0 && r >= lo && r < hi {
                    sum += self.at(u, v);
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Sum of squared magnitudes with radius `< r` (DC included).
    pub fn energy_within(&self, r: f64) -> f64 {
        self.energy_where(|d| d < r)
    }

    /// Sum of squared magnitudes with radius `> r`.
    pub fn energy_outside(&self, r: f64) -> f64 {
        self.energy_where(|d| d > r)
    }

    fn energy_where(&self, keep: impl Fn(f64) -> bool) -> f64 {
        let mut e = 0.0;
        for u in 0..self.height {
            for v in 0..self.width {
                if keep(self.radius_of(u, v)) {
                    e += self.at(u, v).powi(2);
                }
            }
        }
        e
    }

    /// H rows of W comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.mags.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// `ln(1 + m)` scaled to the full u16 range.
    pub fn log_heatmap_u16(&self) -> Vec<u16> {
        let logs: Vec<f64> = self.mags.iter().map(|m| m.ln_1p()).collect();
        let max = logs.iter().cloned().fold(0.0, f64::max);
        logs.iter()
            .map(|&l| {
                if max > 0.0 {
                    (l / max * f64::from(u16::MAX)).round() as u16
                } else {
                    0
                }
            })
            .collect()
    }
}

/// Circular high-pass mask in DC-centered coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct HighPassMask {
    pub height: usize,
    pub width: usize,
    pub radius: f64,
    pub pass: Vec<bool>,
}

impl HighPassMask {
    /// Passes bins strictly farther than `radius` from the centered DC bin.
    /// The DC bin itself never passes.
    pub fn new(height: usize, width: usize, radius: f64) -> Self {
        let (cu, cv) = (height / 2, width / 2);
        let mut pass = Vec::with_capacity(height * width);
        for u in 0..height {
            for v in 0..width {
                let d = (u as f64 - cu as f64).hypot(v as f64 - cv as f64);
                pass.push(d > radius && !(u == cu && v == cv));
            }
        }
        Self {
            height,
            width,
            radius,
            pass,
        }
    }

    /// Default cutoff: a quarter of the height.
    pub fn default_for(height: usize, width: usize) -> Self {
        Self::new(height, width, height as f64 / 4.0)
    }

    pub fn passed_bins(&self) -> usize {
        self.pass.iter().filter(|&&p| p).count()
    }
}

fn difference_planes(clean: &Image, corrupted: &Image) -> Result<Vec<Vec<f64>>> {
    if !clean.same_shape(corrupted) {
        return Err(Error::Shape(format!(
            "clean {} vs corrupted {}",
            clean.shape_string(),
            corrupted.shape_string()
        )));
    }
    Ok((0..clean.channels)
        .map(|c| {
            clean
                .plane(c)
                .iter()
                .zip(corrupted.plane(c))
                .map(|(&a, &b)| f64::from(b) - f64::from(a))
                .collect()
        })
        .collect())
}

/// Fraction of the difference's spectral energy that passes `mask`,
/// pooled over channels.
pub fn f_hf(clean: &Image, corrupted: &Image, mask: &HighPassMask) -> Result<f64> {
    if mask.height != clean.height || mask.width != clean.width {
        return Err(Error::Shape(format!(
            "mask {}x{} vs image {}",
            mask.height,
            mask.width,
            clean.shape_string()
        )));
    }
    let (h, w) = (clean.height, clean.width);
    let mut passed = 0.0;
    let mut total = 0.0;
    for plane in difference_planes(clean, corrupted)? {
        let spec = dft2(&plane, h, w);
        let energy: Vec<f64> = spec.data.iter().map(|c| c.norm_sqr()).collect();
        let shifted = fftshift(&energy, h, w);
        for (e, &p) in shifted.iter().zip(&mask.pass) {
            total += e;
            if p {
                passed += e;
            }
        }
    }
    if total == 0.0 {
        return Err(Error::UndefinedRatio("clean and corrupted images are identical".into()));
    }
    Ok(passed / total)
}

/// Stream for corrupting image `index` in a diagnostic run.
fn diagnostic_stream(seed: u64, spec: CorruptionSpec, index: usize) -> RngStream {
    RngStream::derived(
        seed,
        &[label_hash(spec.kind.name()), u64::from(spec.severity), index as u64],
    )
}

/// `E[|F(C(X) − X)|]` over the first `n` images, channel-averaged and shifted.
pub fn corruption_spectrum(ds: &Dataset, spec: CorruptionSpec, n: usize, seed: u64) -> Result<Spectrum> {
    if n == 0 {
        return Err(Error::invalid("spectrum needs n >= 1 images"));
    }
    if n > ds.len() {
        return Err(Error::invalid(format!(
            "requested {n} images from a dataset of {}",
            ds.len()
        )));
    }
    let (channels, h, w) = ds.image_shape().expect("non-empty dataset");
    let mut acc = vec![0.0f64; h * w];
    for (i, img) in ds.images.iter().take(n).enumerate() {
        let corrupted = apply_corruption(img, spec, &mut diagnostic_stream(seed, spec, i));
        for plane in difference_planes(img, &corrupted)? {
            let f = dft2(&plane, h, w);
            for (a, c) in acc.iter_mut().zip(&f.data) {
                *a += c.abs();
            }
        }
    }
    let denom = (n * channels) as f64;
    let mean: Vec<f64> = acc.iter().map(|v| v / denom).collect();
    Ok(Spectrum {
        height: h,
        width: w,
        mags: fftshift(&mean, h, w),
    })
}

/// One row of a frequency ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderEntry {
    pub spec: CorruptionSpec,
    pub mean_f_hf: f64,
    /// Images skipped because the corruption left them unchanged.
    pub skipped: usize,
}

/// Sorts corruptions ascending by mean `F_hf` over the first `n` images.
/// Ties are broken by kind name.
pub fn order_corruptions(
    ds: &Dataset,
    kinds: &[CorruptionSpec],
    n: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<OrderEntry>> {
    if n == 0 {
        return Err(Error::invalid("ordering needs n >= 1 images"));
    }
    let (_, h, w) = ds
        .image_shape()
        .ok_or_else(|| Error::invalid("ordering needs a non-empty dataset"))?;
    let mask = HighPassMask::new(h, w, radius);
    let mut rows = Vec::with_capacity(kinds.len());
    for &spec in kinds {
        let mut sum = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for (i, img) in ds.images.iter().take(n).enumerate() {
            let corrupted = apply_corruption(img, spec, &mut diagnostic_stream(seed, spec, i));
            match f_hf(img, &corrupted, &mask) {
                Ok(v) => {
                    sum += v;
                    used += 1;
                }
                Err(Error::UndefinedRatio(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if used == 0 {
            return Err(Error::UndefinedRatio(format!(
                "{spec} left all {skipped} images unchanged"
            )));
        }
        rows.push(OrderEntry {
            spec,
            mean_f_hf: sum / used as f64,
            skipped,
        });
    }
    rows.sort_by(|a, b| {
        a.mean_f_hf
            .total_cmp(&b.mean_f_hf)
            .then_with(|| a.spec.kind.name().cmp(b.spec.kind.name()))
    });
    Ok(rows)
}

/// Severity-1 specs for every kind, the setting used for spectra.
pub fn severity_one_suite() -> Vec<CorruptionSpec> {
    CorruptionKind::ALL
        .into_iter()
        .map(|k| CorruptionSpec::new(k, 1).expect("severity 1 is valid"))
        .collect()
}

/// `kind,mean_f_hf` CSV for an ordering.
pub fn ordering_csv(rows: &[OrderEntry]) -> String {
    let mut s = String::from("kind,mean_f_hf\n");
    for r in rows {
        s.push_str(&format!("{},{:.9}\n", r.spec.kind, r.mean_f_hf));
    }
    s
}
