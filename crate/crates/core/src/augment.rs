//! AugMix-style stochastic augmentation and the frequency-targeted op lists.
//!
//! Magnitude ranges below are expressed on [0, 1] images and mirror the
//! usual AugMix defaults at augmentation severity 3 (for a 32 px image):
//!
//! | op            | magnitude                         | default range |
//! |---------------|-----------------------------------|---------------|
//! | autocontrast  | unused                            | -             |
//! | equalize      | unused                            | -             |
//! | posterize     | bits kept                         | 3 ..= 4       |
//! | rotate        | degrees, random sign              | 0 .. 9        |
//! | solarize      | threshold                         | 0.7 .. 1.0    |
//! | shear_x/y     | shear factor, random sign         | 0 .. 0.09     |
//! | translate_x/y | fraction of the side, random sign | 0 .. 0.094    |
//! | gaussian_noise| sigma                             | 0.08          |
//! | gaussian_blur | sigma of the 3x3 kernel           | 0.5 .. 1.5    |
//! | contrast      | scale about the image mean        | 0.1 .. 1.0    |

use std::fmt;
use std::str::FromStr;

use crate::corruption::{contrast_in_place, convolve_reflect, gaussian_kernel, BLUR_KERNEL};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugOpKind {
    Autocontrast,
    Equalize,
    Posterize,
    Rotate,
    Solarize,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    GaussianNoise,
    GaussianBlur,
    Contrast,
}

impl AugOpKind {
    pub const ALL: [AugOpKind; 12] = [
        AugOpKind::Autocontrast,
        AugOpKind::Equalize,
        AugOpKind::Posterize,
        AugOpKind::Rotate,
        AugOpKind::Solarize,
        AugOpKind::ShearX,
        AugOpKind::ShearY,
        AugOpKind::TranslateX,
        AugOpKind::TranslateY,
        AugOpKind::GaussianNoise,
        AugOpKind::GaussianBlur,
        AugOpKind::Contrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOpKind::Autocontrast => "autocontrast",
            AugOpKind::Equalize => "equalize",
            AugOpKind::Posterize => "posterize",
            AugOpKind::Rotate => "rotate",
            AugOpKind::Solarize => "solarize",
            AugOpKind::ShearX => "shear_x",
            AugOpKind::ShearY => "shear_y",
            AugOpKind::TranslateX => "translate_x",
            AugOpKind::TranslateY => "translate_y",
            AugOpKind::GaussianNoise => "gaussian_noise",
            AugOpKind::GaussianBlur => "gaussian_blur",
            AugOpKind::Contrast => "contrast",
        }
    }

    /// Default magnitude range (lo, hi).
    pub fn default_range(self) -> (f64, f64) {
        match self {
            AugOpKind::Autocontrast | AugOpKind::Equalize => (0.0, 0.0),
            AugOpKind::Posterize => (3.0, 4.0),
            AugOpKind::Rotate => (0.0, 9.0),
            AugOpKind::Solarize => (0.7, 1.0),
            AugOpKind::ShearX | AugOpKind::ShearY => (0.0, 0.09),
            AugOpKind::TranslateX | AugOpKind::TranslateY => (0.0, 3.0 / 32.0),
            AugOpKind::GaussianNoise => (0.08, 0.08),
            AugOpKind::GaussianBlur => (0.5, 1.5),
            AugOpKind::Contrast => (0.1, 1.0),
        }
    }
}

impl fmt::Display for AugOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugOpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation op '{s}'")))
    }
}

/// An augmentation operation with the range its magnitude is drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugOp {
    pub kind: AugOpKind,
    pub lo: f64,
    pub hi: f64,
}

impl AugOp {
    pub fn new(kind: AugOpKind) -> Self {
        let (lo, hi) = kind.default_range();
        Self { kind, lo, hi }
    }

    /// The op with its magnitude pinned to one value.
    pub fn fixed(kind: AugOpKind, magnitude: f64) -> Self {
        Self {
            kind,
            lo: magnitude,
            hi: magnitude,
        }
    }

    /// Applies the op, drawing its magnitude (and sign) from `stream`.
    pub fn apply(&self, img: &Image, stream: &mut RngStream) -> Image {
        let mag = stream.uniform_range(self.lo, self.hi);
        let sign = if stream.uniform() < 0.5 { -1.0 } else { 1.0 };
        let mut out = match self.kind {
            AugOpKind::Autocontrast => autocontrast(img),
            AugOpKind::Equalize => equalize(img),
            AugOpKind::Posterize => posterize(img, mag.round().clamp(1.0, 8.0) as u32),
            AugOpKind::Rotate => {
                let (s, c) = (sign * mag).to_radians().sin_cos();
                affine(img, [c, -s, s, c], [0.0, 0.0])
            }
            AugOpKind::Solarize => {
                let t = mag as f32;
                let mut out = img.clone();
                for v in out.data.iter_mut() {
                    if *v >= t {
                        *v = 1.0 - *v;
                    }
                }
                out
            }
            AugOpKind::ShearX => affine(img, [1.0, sign * mag, 0.0, 1.0], [0.0, 0.0]),
            AugOpKind::ShearY => affine(img, [1.0, 0.0, sign * mag, 1.0], [0.0, 0.0]),
            AugOpKind::TranslateX => affine(img, [1.0, 0.0, 0.0, 1.0], [sign * mag * img.width as f64, 0.0]),
            AugOpKind::TranslateY => affine(img, [1.0, 0.0, 0.0, 1.0], [0.0, sign * mag * img.height as f64]),
            AugOpKind::GaussianNoise => {
                let mut out = img.clone();
                let noise = stream
                    .gaussian_vec(out.data.len(), 0.0, mag.max(0.0))
                    .expect("non-negative sigma");
                for (v, n) in out.data.iter_mut().zip(noise) {
                    *v = (f64::from(*v) + n) as f32;
                }
                out
            }
            AugOpKind::GaussianBlur => {
                let mut out = img.clone();
                if mag > 0.0 {
                    let kernel = gaussian_kernel(BLUR_KERNEL, mag).expect("valid kernel");
                    for c in 0..img.channels {
                        let b = convolve_reflect(img.plane(c), img.height, img.width, &kernel, BLUR_KERNEL);
                        out.plane_mut(c).copy_from_slice(&b);
                    }
                }
                out
            }
            AugOpKind::Contrast => {
                let mut out = img.clone();
                contrast_in_place(&mut out, mag);
                out
            }
        };
        for v in out.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }
}

/// Default AugMix operation list (geometric and tonal ops only).
pub fn augmix_op_list() -> Vec<AugOp> {
    [
        AugOpKind::Autocontrast,
        AugOpKind::Equalize,
        AugOpKind::Posterize,
        AugOpKind::Rotate,
        AugOpKind::Solarize,
        AugOpKind::ShearX,
        AugOpKind::ShearY,
        AugOpKind::TranslateX,
        AugOpKind::TranslateY,
    ]
    .into_iter()
    .map(AugOp::new)
    .collect()
}

/// High-frequency list: additive noise with sigma 0.08 and a 3x3 blur.
pub fn hf_op_list() -> Vec<AugOp> {
    vec![
        AugOp::new(AugOpKind::GaussianNoise),
        AugOp::new(AugOpKind::GaussianBlur),
    ]
}

/// Low-frequency list: contrast change only.
pub fn lf_op_list() -> Vec<AugOp> {
    vec![AugOp::new(AugOpKind::Contrast)]
}

/// AugMix hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AugMixConfig {
    pub k: usize,
    pub alpha: f64,
    pub max_depth: usize,
    pub op_list: Vec<AugOp>,
}

impl Default for AugMixConfig {
    fn default() -> Self {
        Self {
            k: 3,
            alpha: 1.0,
            max_depth: 3,
            op_list: augmix_op_list(),
        }
    }
}

impl AugMixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("augmix k must be >= 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::invalid("augmix max_depth must be >= 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("augmix alpha must be > 0"));
        }
        if self.op_list.is_empty() {
            return Err(Error::invalid("augmix op_list is empty"));
        }
        Ok(())
    }

    /// Comma-separated op names.
    pub fn op_names(&self) -> String {
        self.op_list.iter().map(|o| o.kind.name()).collect::<Vec<_>>().join(",")
    }
}

/// Overrides for the random choices in [`augmix_compose_with`]; test hooks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugMixOverrides {
    /// Weight of the clean image.
    pub mix: Option<f64>,
    /// Chain weights (length k).
    pub weights: Option<Vec<f64>>,
    /// Ops per chain.
    pub depth: Option<usize>,
}

/// One AugMix sample: `m·img + (1−m)·Σ wᵢ·chainᵢ(img)`, clamped to [0, 1].
pub fn augmix_compose(img: &Image, cfg: &AugMixConfig, stream: &mut RngStream) -> Result<Image> {
    augmix_compose_with(img, cfg, stream, &AugMixOverrides::default())
}

pub fn augmix_compose_with(
    img: &Image,
    cfg: &AugMixConfig,
    stream: &mut RngStream,
    hooks: &AugMixOverrides,
) -> Result<Image> {
    cfg.validate()?;
    let weights = match &hooks.weights {
        Some(w) if w.len() == cfg.k => w.clone(),
        Some(w) => {
            return Err(Error::invalid(format!(
                "forced weights have length {}, expected {}",
                w.len(),
                cfg.k
            )))
        }
        None => stream.dirichlet(cfg.alpha, cfg.k),
    };
    let m = match hooks.mix {
        Some(m) => m,
        None => stream.beta(cfg.alpha, cfg.alpha),
    };

    let mut mixed = vec![0.0f64; img.data.len()];
    for &w in &weights {
        let depth = hooks.depth.unwrap_or_else(|| 1 + stream.index(cfg.max_depth));
        let mut chain = img.clone();
        for _ in 0..depth {
            let op = cfg.op_list[stream.index(cfg.op_list.len())];
            chain = op.apply(&chain, stream);
        }
        for (acc, &v) in mixed.iter_mut().zip(&chain.data) {
            *acc += w * f64::from(v);
        }
    }
    let mut out = img.clone();
    if m == 1.0 {
        return Ok(out);
    }
    for (o, acc) in out.data.iter_mut().zip(mixed) {
        *o = ((m * f64::from(*o) + (1.0 - m) * acc) as f32).clamp(0.0, 1.0);
    }
    Ok(out)
}

fn autocontrast(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        let plane = out.plane_mut(c);
        let lo = plane.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            for v in plane.iter_mut() {
                *v = (*v - lo) / (hi - lo);
            }
        }
    }
    out
}

fn equalize(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        let plane = out.plane_mut(c);
        let bins: Vec<usize> = plane
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as usize)
            .collect();
        let mut hist = [0usize; 256];
        for &b in &bins {
            hist[b] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (i, h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc;
        }
        let n = plane.len();
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
        if n == cdf_min {
            continue;
        }
        for (v, &b) in plane.iter_mut().zip(&bins) {
            *v = (cdf[b] - cdf_min) as f32 / (n - cdf_min) as f32;
        }
    }
    out
}

fn posterize(img: &Image, bits: u32) -> Image {
    let mut out = img.clone();
    let mask = !((1u32 << (8 - bits.min(8))) - 1) & 0xff;
    for v in out.data.iter_mut() {
        let b = (*v * 255.0).round().clamp(0.0, 255.0) as u32;
        *v = (b & mask) as f32 / 255.0;
    }
    out
}

/// Resamples with `src = A·(dst − center) + center + t` (bilinear, zero fill).
fn affine(img: &Image, a: [f64; 4], t: [f64; 2]) -> Image {
    let (h, w) = (img.height, img.width);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = img.clone();
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = a[0] * dx + a[1] * dy + cx + t[0];
                let sy = a[2] * dx + a[3] * dy + cy + t[1];
                dst[y * w + x] = bilinear(src, h, w, sx, sy);
            }
        }
    }
    out
}

fn bilinear(src: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    // Truncate-and-correct floor; `f64::floor` is a libm call on baseline x86-64.
    let floor = |v: f64| {
        let t = v as i64;
        if (t as f64) > v {
            t - 1
        } else {
            t
        }
    };
    let (x0, y0) = (floor(x), floor(y));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let (hi, wi) = (h as i64, w as i64);
    let fetch = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= hi || xx >= wi {
            0.0
        } else {
            f64::from(src[yy as usize * w + xx as usize])
        }
    };
    // Exact sample positions skip the weighted blend so identity maps are exact.
    if fx == 0.0 && fy == 0.0 {
        return fetch(y0, x0) as f32;
    }
    let v = fetch(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + fetch(y0, x0 + 1) * fx * (1.0 - fy)
        + fetch(y0 + 1, x0) * (1.0 - fx) * fy
        + fetch(y0 + 1, x0 + 1) * fx * fy;
    v as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_shapes;

    fn sample() -> Image {
        synth_shapes(2, 3, 32, 4).unwrap().images[1].clone()
    }

    #[test]
    fn forced_clean_weight_returns_input() {
        let img = sample();
        let hooks = AugMixOverrides {
            mix: Some(1.0),
            ..Default::default()
        };
        let out = augmix_compose_with(&img, &AugMixConfig::default(), &mut RngStream::new(1), &hooks).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn zero_rotation_chain_is_identity() {
        let img = sample();
        let cfg = AugMixConfig {
            k: 1,
            op_list: vec![AugOp::fixed(AugOpKind::Rotate, 0.0)],
            ..Default::default()
        };
        let hooks = AugMixOverrides {
            mix: None,
            weights: Some(vec![1.0]),
            depth: Some(1),
        };
        let out = augmix_compose_with(&img, &cfg, &mut RngStream::new(5), &hooks).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_op_list_is_rejected() {
        let cfg = AugMixConfig {
            op_list: vec![],
            ..Default::default()
        };
        assert!(augmix_compose(&sample(), &cfg, &mut RngStream::new(0)).is_err());
        let bad = AugMixConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_augmix_perturbs_within_range() {
        let ds = synth_shapes(4, 50, 32, 10).unwrap();
        let cfg = AugMixConfig::default();
        let mut s = RngStream::new(12);
        let mut total = 0.0f64;
        for i in 0..1000 {
            let img = &ds.images[i % ds.len()];
            let out = augmix_compose(img, &cfg, &mut s).unwrap();
            assert!(out.in_unit_range());
            total += out
                .data
                .iter()
                .zip(&img.data)
                .map(|(a, b)| f64::from((a - b).abs()))
                .sum::<f64>()
                / img.data.len() as f64;
        }
        assert!(total / 1000.0 > 0.0);
    }

    #[test]
    fn op_lists_are_disjoint() {
        let base: Vec<AugOpKind> = augmix_op_list().iter().map(|o| o.kind).collect();
        assert_eq!(hf_op_list().len(), 2);
        assert_eq!(lf_op_list().len(), 1);
        for op in hf_op_list().iter().chain(lf_op_list().iter()) {
            assert!(!base.contains(&op.kind));
        }
        assert_eq!(hf_op_list()[0].lo, 0.08);
    }

    #[test]
    fn identity_magnitudes_are_noops() {
        let img = sample();
        let mut s = RngStream::new(3);
        for op in [
            AugOp::fixed(AugOpKind::Rotate, 0.0),
            AugOp::fixed(AugOpKind::Contrast, 1.0),
            AugOp::fixed(AugOpKind::ShearX, 0.0),
            AugOp::fixed(AugOpKind::TranslateY, 0.0),
            AugOp::fixed(AugOpKind::GaussianNoise, 0.0),
            AugOp::fixed(AugOpKind::GaussianBlur, 0.0),
        ] {
            assert_eq!(op.apply(&img, &mut s), img, "{}", op.kind);
        }
    }

    #[test]
    fn every_op_keeps_unit_range() {
        let img = sample();
        let mut s = RngStream::new(6);
        for kind in AugOpKind::ALL {
            for _ in 0..20 {
                assert!(AugOp::new(kind).apply(&img, &mut s).in_unit_range(), "{kind}");
            }
        }
    }

    #[test]
    fn op_names_round_trip() {
        for kind in AugOpKind::ALL {
            assert_eq!(kind.name().parse::<AugOpKind>().unwrap(), kind);
        }
    }
}
