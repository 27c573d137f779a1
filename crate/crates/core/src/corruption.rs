//! Severity-graded image corruptions.
//!
//! Each `(kind, severity)` pair resolves to a fixed parameter tuple from
//! [`CorruptionKind::params`]. The tables are local choices that keep the
//! usual grouping: noise and blur perturb mostly high frequencies, while
//! contrast, brightness and fog change mostly low frequencies.
//!
//! | kind            | parameter            | severities 1..5                  |
//! |-----------------|----------------------|----------------------------------|
//! | gaussian_noise  | sigma                | 0.04, 0.06, 0.08, 0.10, 0.14     |
//! | shot_noise      | photons per unit     | 60, 30, 15, 8, 4                 |
//! | impulse_noise   | corrupted fraction   | 0.01, 0.02, 0.04, 0.06, 0.10     |
//! | gaussian_blur   | sigma (3x3 kernel)   | 0.5, 0.75, 1.0, 1.5, 2.0         |
//! | contrast        | scale about the mean | 0.75, 0.6, 0.45, 0.3, 0.2        |
//! | brightness      | additive shift       | 0.05, 0.1, 0.15, 0.2, 0.3        |
//! | fog             | plasma blend weight  | 0.15, 0.25, 0.35, 0.45, 0.6      |
//! | pixelate        | downscale factor     | 1.25, 1.5, 2, 3, 4               |

use std::fmt;
use std::str::FromStr;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Kernel size used for all Gaussian blurs.
pub const BLUR_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    Contrast,
    Brightness,
    Fog,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 8] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Fog,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    /// Whether applying the corruption consumes random draws.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            CorruptionKind::GaussianNoise
                | CorruptionKind::ShotNoise
                | CorruptionKind::ImpulseNoise
                | CorruptionKind::Fog
        )
    }

    /// The documented parameter tuple for `severity` in 1..=5.
    pub fn params(self, severity: u8) -> Result<CorruptionParams> {
        if !(1..=5).contains(&severity) {
            return Err(Error::invalid(format!("severity must be in [1, 5], got {severity}")));
        }
        let i = usize::from(severity - 1);
        Ok(match self {
            CorruptionKind::GaussianNoise => CorruptionParams::GaussianNoise {
                sigma: [0.04, 0.06, 0.08, 0.10, 0.14][i],
            },
            CorruptionKind::ShotNoise => CorruptionParams::ShotNoise {
                photons: [60.0, 30.0, 15.0, 8.0, 4.0][i],
            },
            CorruptionKind::ImpulseNoise => CorruptionParams::ImpulseNoise {
                fraction: [0.01, 0.02, 0.04, 0.06, 0.10][i],
            },
            CorruptionKind::GaussianBlur => CorruptionParams::GaussianBlur {
                sigma: [0.5, 0.75, 1.0, 1.5, 2.0][i],
            },
            CorruptionKind::Contrast => CorruptionParams::Contrast {
                scale: [0.75, 0.6, 0.45, 0.3, 0.2][i],
            },
            CorruptionKind::Brightness => CorruptionParams::Brightness {
                shift: [0.05, 0.1, 0.15, 0.2, 0.3][i],
            },
            CorruptionKind::Fog => CorruptionParams::Fog {
                blend: [0.15, 0.25, 0.35, 0.45, 0.6][i],
            },
            CorruptionKind::Pixelate => CorruptionParams::Pixelate {
                factor: [1.25, 1.5, 2.0, 3.0, 4.0][i],
            },
        })
    }

    /// A parameterization of this kind that leaves every image unchanged.
    pub fn identity_params(self) -> CorruptionParams {
        match self {
            CorruptionKind::GaussianNoise => CorruptionParams::GaussianNoise { sigma: 0.0 },
            CorruptionKind::ShotNoise => CorruptionParams::Identity,
            CorruptionKind::ImpulseNoise => CorruptionParams::ImpulseNoise { fraction: 0.0 },
            CorruptionKind::GaussianBlur => CorruptionParams::Identity,
            CorruptionKind::Contrast => CorruptionParams::Contrast { scale: 1.0 },
            CorruptionKind::Brightness => CorruptionParams::Brightness { shift: 0.0 },
            CorruptionKind::Fog => CorruptionParams::Fog { blend: 0.0 },
            CorruptionKind::Pixelate => CorruptionParams::Pixelate { factor: 1.0 },
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown corruption kind '{s}'")))
    }
}

/// A corruption kind together with its severity level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        kind.params(severity)?;
        Ok(Self { kind, severity })
    }

    pub fn params(&self) -> CorruptionParams {
        self.kind
            .params(self.severity)
            .expect("severity validated at construction")
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_s{}", self.kind, self.severity)
    }
}

/// Fully resolved corruption parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CorruptionParams {
    Identity,
    GaussianNoise { sigma: f64 },
    ShotNoise { photons: f64 },
    ImpulseNoise { fraction: f64 },
    GaussianBlur { sigma: f64 },
    Contrast { scale: f64 },
    Brightness { shift: f64 },
    Fog { blend: f64 },
    Pixelate { factor: f64 },
}

impl CorruptionParams {
    /// (parameter name, value) for tabular output.
    pub fn describe(&self) -> (&'static str, f64) {
        match *self {
            CorruptionParams::Identity => ("none", 0.0),
            CorruptionParams::GaussianNoise { sigma } => ("sigma", sigma),
            CorruptionParams::ShotNoise { photons } => ("photons", photons),
            CorruptionParams::ImpulseNoise { fraction } => ("fraction", fraction),
            CorruptionParams::GaussianBlur { sigma } => ("sigma", sigma),
            CorruptionParams::Contrast { scale } => ("scale", scale),
            CorruptionParams::Brightness { shift } => ("shift", shift),
            CorruptionParams::Fog { blend } => ("blend", blend),
            CorruptionParams::Pixelate { factor } => ("factor", factor),
        }
    }
}

/// Corrupts `img` according to `spec`. Stochastic kinds draw from `stream`.
pub fn apply_corruption(img: &Image, spec: CorruptionSpec, stream: &mut RngStream) -> Image {
    apply_params(img, spec.params(), stream)
}

/// Corrupts `img` with explicit parameters. Output is clamped to [0, 1].
pub fn apply_params(img: &Image, params: CorruptionParams, stream: &mut RngStream) -> Image {
    let mut out = img.clone();
    match params {
        CorruptionParams::Identity => {}
        CorruptionParams::GaussianNoise { sigma } => {
            let noise = stream
                .gaussian_vec(out.data.len(), 0.0, sigma.max(0.0))
                .expect("sigma is non-negative");
            for (v, n) in out.data.iter_mut().zip(noise) {
                *v = (f64::from(*v) + n) as f32;
            }
        }
        CorruptionParams::ShotNoise { photons } => {
            for v in out.data.iter_mut() {
                let k = stream.poisson(f64::from(*v).max(0.0) * photons);
                *v = (f64::from(k) / photons) as f32;
            }
        }
        CorruptionParams::ImpulseNoise { fraction } => {
            for v in out.data.iter_mut() {
                let hit = stream.uniform();
                let salt = stream.uniform();
                if hit < fraction {
                    *v = if salt < 0.5 { 0.0 } else { 1.0 };
                }
            }
        }
        CorruptionParams::GaussianBlur { sigma } => {
            let kernel = gaussian_kernel(BLUR_KERNEL, sigma).expect("odd kernel, positive sigma");
            for c in 0..out.channels {
                let blurred = convolve_reflect(img.plane(c), img.height, img.width, &kernel, BLUR_KERNEL);
                out.plane_mut(c).copy_from_slice(&blurred);
            }
        }
        CorruptionParams::Contrast { scale } => contrast_in_place(&mut out, scale),
        CorruptionParams::Brightness { shift } => {
            let shift = shift as f32;
            for v in out.data.iter_mut() {
                *v += shift;
            }
        }
        CorruptionParams::Fog { blend } => {
            let plasma = plasma_fractal(out.height, out.width, stream);
            let plane = out.height * out.width;
            for (i, v) in out.data.iter_mut().enumerate() {
                let p = plasma[i % plane];
                *v = ((f64::from(*v) + blend * p) / (1.0 + blend)) as f32;
            }
        }
        CorruptionParams::Pixelate { factor } => {
            for c in 0..out.channels {
                let px = pixelate_plane(img.plane(c), img.height, img.width, factor);
                out.plane_mut(c).copy_from_slice(&px);
            }
        }
    }
    for v in out.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// `clamp(mu + scale·(x − mu))` with `mu` the mean over all pixels.
pub(crate) fn contrast_in_place(img: &mut Image, scale: f64) {
    if scale == 1.0 {
        return;
    }
    let mean = img.data.iter().map(|&v| f64::from(v)).sum::<f64>() / img.data.len().max(1) as f64;
    for v in img.data.iter_mut() {
        *v = (mean + scale * (f64::from(*v) - mean)) as f32;
    }
}

/// Normalized `k×k` Gaussian kernel (row-major), summing to 1.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Vec<f64>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::invalid(format!("kernel size must be odd, got {k}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let r = (k / 2) as f64;
    let mut kern: Vec<f64> = (0..k * k)
        .map(|i| {
            let dy = (i / k) as f64 - r;
            let dx = (i % k) as f64 - r;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kern.iter().sum();
    for v in kern.iter_mut() {
        *v /= total;
    }
    Ok(kern)
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// 2D correlation of one plane with a `k×k` kernel under reflect padding.
pub fn convolve_reflect(plane: &[f32], h: usize, w: usize, kernel: &[f64], k: usize) -> Vec<f32> {
    let r = (k / 2) as isize;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for ky in 0..k {
                let sy = reflect(y as isize + ky as isize - r, h);
                for kx in 0..k {
                    let sx = reflect(x as isize + kx as isize - r, w);
                    acc += kernel[ky * k + kx] * f64::from(plane[sy * w + sx]);
                }
            }
            out.push(acc as f32);
        }
    }
    out
}

/// Block-average down to `round(h/factor)` cells per axis, then expand back.
fn pixelate_plane(plane: &[f32], h: usize, w: usize, factor: f64) -> Vec<f32> {
    let sh = ((h as f64 / factor).round() as usize).clamp(1, h);
    let sw = ((w as f64 / factor).round() as usize).clamp(1, w);
    if sh == h && sw == w {
        return plane.to_vec();
    }
    let mut sums = vec![0.0f64; sh * sw];
    let mut counts = vec![0u32; sh * sw];
    let cell = |i: usize, n: usize, s: usize| i * s / n;
    for y in 0..h {
        for x in 0..w {
            let idx = cell(y, h, sh) * sw + cell(x, w, sw);
            sums[idx] += f64::from(plane[y * w + x]);
            counts[idx] += 1;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let idx = cell(y, h, sh) * sw + cell(x, w, sw);
            out.push((sums[idx] / f64::from(counts[idx])) as f32);
        }
    }
    out
}

/// Per-octave amplitude decay of the plasma field. Amplitude falls with the
/// square of this factor, matching the widely used fog generator.
const PLASMA_DECAY: f64 = 3.0;

/// Diamond-square plasma field on a torus, cropped to `h×w`, scaled to [0, 1].
pub fn plasma_fractal(h: usize, w: usize, stream: &mut RngStream) -> Vec<f64> {
    let size = h.max(w).max(2).next_power_of_two();
    let mut map = vec![0.0f64; size * size];
    let at = |y: usize, x: usize| (y % size) * size + (x % size);
    let mut step = size;
    let mut wibble = 1.0f64;
    while step >= 2 {
        let half = step / 2;
        let amp = wibble * wibble;
        // squares
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                let mean =
                    (map[at(y, x)] + map[at(y + step, x)] + map[at(y, x + step)] + map[at(y + step, x + step)]) / 4.0;
                map[at(y + half, x + half)] = mean + amp * stream.uniform_range(-1.0, 1.0);
            }
        }
        // diamonds
        for y in (0..size).step_by(step) {
            for x in (0..size).step_by(step) {
                for (py, px) in [(y, x + half), (y + half, x)] {
                    let mean = (map[at(py + size - half, px)]
                        + map[at(py + half, px)]
                        + map[at(py, px + size - half)]
                        + map[at(py, px + half)])
                        / 4.0;
                    map[at(py, px)] = mean + amp * stream.uniform_range(-1.0, 1.0);
                }
            }
        }
        step = half;
        wibble /= PLASMA_DECAY;
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend_from_slice(&map[y * size..y * size + w]);
    }
    let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in out.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    out
}

/// `kind,severity,parameter,value` rows for every kind and severity.
pub fn params_csv() -> String {
    let mut s = String::from("kind,severity,parameter,value\n");
    for kind in CorruptionKind::ALL {
        for sev in 1..=5u8 {
            let (name, value) = kind.params(sev).expect("valid severity").describe();
            s.push_str(&format!("{kind},{sev},{name},{value}\n"));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_shapes;

    fn ramp() -> Image {
        let data = (0..64).map(|i| 0.2 + 0.6 * (i as f32) / 63.0).collect();
        Image::new(1, 8, 8, data).unwrap()
    }

    #[test]
    fn kernel_edge_cases() {
        assert_eq!(gaussian_kernel(1, 0.7).unwrap(), vec![1.0]);
        assert!(gaussian_kernel(4, 1.0).is_err());
        assert!(gaussian_kernel(3, 0.0).is_err());
        let k = gaussian_kernel(3, 1.0).unwrap();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-7);
        let max = k.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(k[4], max);
        // 90-degree rotation: (y, x) -> (x, 2 - y)
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(k[y * 3 + x], k[x * 3 + (2 - y)]);
            }
        }
    }

    #[test]
    fn identity_parameterizations_are_exact() {
        let img = ramp();
        let mut s = RngStream::new(0);
        for kind in CorruptionKind::ALL {
            let out = apply_params(&img, kind.identity_params(), &mut s);
            assert_eq!(out, img, "{kind}");
        }
    }

    #[test]
    fn blur_keeps_constant_images() {
        let img = Image::filled(1, 9, 7, 0.37);
        let mut s = RngStream::new(0);
        for sev in 1..=5 {
            let out = apply_corruption(
                &img,
                CorruptionSpec::new(CorruptionKind::GaussianBlur, sev).unwrap(),
                &mut s,
            );
            for v in &out.data {
                assert!((v - 0.37).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_kinds_ignore_stream() {
        let img = ramp();
        for kind in CorruptionKind::ALL.into_iter().filter(|k| !k.is_stochastic()) {
            let spec = CorruptionSpec::new(kind, 3).unwrap();
            let mut a = RngStream::new(1);
            let mut b = RngStream::new(2);
            assert_eq!(
                apply_corruption(&img, spec, &mut a),
                apply_corruption(&img, spec, &mut b)
            );
            assert_eq!(a.next_u64(), RngStream::new(1).next_u64());
        }
    }

    #[test]
    fn gaussian_noise_std_matches_clipped_gaussian() {
        // sigma = 0.08 at severity 3; 0.5 is > 6 sigma from either bound so
        // the clipped std equals sigma to many digits.
        let img = Image::filled(1, 320, 320, 0.5);
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3).unwrap();
        let out = apply_corruption(&img, spec, &mut RngStream::new(4));
        let d: Vec<f64> = out.data.iter().map(|&v| f64::from(v) - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - 0.08).abs() < 0.01, "std {std}");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("frost".parse::<CorruptionKind>().is_err());
        assert_eq!("fog".parse::<CorruptionKind>().unwrap(), CorruptionKind::Fog);
        assert!(CorruptionSpec::new(CorruptionKind::Fog, 6).is_err());
    }

    #[test]
    fn contrast_scale_one_is_identity() {
        let img = ramp();
        let out = apply_params(&img, CorruptionParams::Contrast { scale: 1.0 }, &mut RngStream::new(0));
        assert_eq!(out, img);
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let ds = synth_shapes(5, 30, 16, 10).unwrap();
        let extremes = [Image::filled(1, 16, 16, 0.0), Image::filled(1, 16, 16, 1.0)];
        let mut s = RngStream::new(8);
        for img in ds.images.iter().chain(extremes.iter()) {
            for kind in CorruptionKind::ALL {
                for sev in 1..=5 {
                    let out = apply_corruption(img, CorruptionSpec::new(kind, sev).unwrap(), &mut s);
                    assert!(out.in_unit_range(), "{kind} s{sev}");
                }
            }
        }
    }

    #[test]
    fn plasma_is_normalized_and_seeded() {
        let a = plasma_fractal(20, 13, &mut RngStream::new(3));
        let b = plasma_fractal(20, 13, &mut RngStream::new(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 260);
        let lo = a.iter().cloned().fold(f64::MAX, f64::min);
        let hi = a.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn pixelate_averages_blocks() {
        let img = ramp();
        let out = apply_params(&img, CorruptionParams::Pixelate { factor: 4.0 }, &mut RngStream::new(0));
        // 8x8 -> 2x2 cells of 4x4 pixels each.
        assert_eq!(out.data[0], out.data[3 * 8 + 3]);
        assert_ne!(out.data[0], out.data[4]);
        let mean_in: f32 = img.data.iter().sum::<f32>() / 64.0;
        let mean_out: f32 = out.data.iter().sum::<f32>() / 64.0;
        assert!((mean_in - mean_out).abs() < 1e-5);
    }

    #[test]
    fn reflect_padding_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(0, 1), 0);
    }

    #[test]
    fn params_csv_has_forty_rows() {
        assert_eq!(params_csv().lines().count(), 41);
    }
}
