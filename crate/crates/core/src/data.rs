//! Images, datasets, IDX ingestion and the built-in synthetic shape dataset.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Shape4, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A single channels-first sample with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.height * self.width;
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn shape_string(&self) -> String {
        format!("({},{},{})", self.channels, self.height, self.width)
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Labelled image collection with a uniform image shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if let Some(i) = images.iter().position(|im| !im.same_shape(first)) {
                return Err(Error::Consistency(format!(
                    "image {i} has shape {} but image 0 has {}",
                    images[i].shape_string(),
                    first.shape_string()
                )));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel { label: l, num_classes });
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// (C, H, W) of every image, or `None` when empty.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|im| (im.channels, im.height, im.width))
    }

    /// Subset with the given indices, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Splits off the first `n` samples; returns (head, tail).
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (
            self.subset(&head, format!("{}[..{n}]", self.name)),
            self.subset(&tail, format!("{}[{n}..]", self.name)),
        )
    }

    /// Stacks images `indices` into an NCHW tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        stack_images(indices.iter().map(|&i| &self.images[i]))
    }
}

/// Stacks same-shaped images into an NCHW tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Tensor {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for im in images {
        let d = (im.channels, im.height, im.width);
        debug_assert!(dims.is_none() || dims == Some(d));
        dims = Some(d);
        data.extend_from_slice(&im.data);
        n += 1;
    }
    let (c, h, w) = dims.unwrap_or((0, 0, 0));
    Tensor::from_vec_unchecked(Shape4::new(n, c, h, w), data)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> ByteReader<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Format {
            what: self.what.to_string(),
            offset: self.pos as u64,
            msg: "truncated header".into(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let chunk = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            what: self.what.to_string(),
            offset: self.bytes.len() as u64,
            msg: format!("expected {n} payload bytes from offset {}", self.pos),
        })?;
        self.pos += n;
        Ok(chunk)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label file pair. Pixels are scaled by 1/255 and
/// images get a single channel.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img_bytes = read_file(images_path)?;
    let lbl_bytes = read_file(labels_path)?;
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();

    let mut r = ByteReader {
        bytes: &img_bytes,
        pos: 0,
        what: &img_name,
    };
    let magic = r.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            what: img_name.clone(),
            offset: 0,
            msg: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let pixels = r.take(count * rows * cols)?;

    let mut lr = ByteReader {
        bytes: &lbl_bytes,
        pos: 0,
        what: &lbl_name,
    };
    let magic = lr.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            what: lbl_name.clone(),
            offset: 0,
            msg: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = lr.u32_be()? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{img_name} holds {count} images but {lbl_name} holds {label_count} labels"
        )));
    }
    let labels: Vec<usize> = lr.take(count)?.iter().map(|&b| usize::from(b)).collect();

    let plane = rows * cols;
    let images = (0..count)
        .map(|i| Image {
            channels: 1,
            height: rows,
            width: cols,
            data: pixels[i * plane..(i + 1) * plane]
                .iter()
                .map(|&p| f32::from(p) / 255.0)
                .collect(),
        })
        .collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let name = images_path
        .file_name()
        .map_or_else(|| img_name.clone(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, images, labels, num_classes)
}

/// Encodes images (first channel, rounded to bytes) and labels as an IDX pair.
pub fn encode_idx(ds: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let (_, h, w) = ds.image_shape().unwrap_or((1, 0, 0));
    let mut img = Vec::with_capacity(16 + ds.len() * h * w);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), h, w] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for im in &ds.images {
        img.extend(im.plane(0).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let mut lbl = Vec::with_capacity(8 + ds.len());
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lbl.extend(ds.labels.iter().map(|&l| l as u8));
    (img, lbl)
}

/// Shape families used by [`synth_shapes`], indexed by class.
pub const SHAPE_FAMILIES: [&str; 10] = [
    "disk",
    "rectangle",
    "cross",
    "ring",
    "stripes",
    "triangle",
    "frame",
    "ellipse",
    "bar",
    "dots",
];

/// Pixel range used by synthetic images. Staying away from 0 and 1 keeps
/// mild corruptions (brightness shift, low-sigma noise) out of the clamp.
pub const SYNTH_MIN: f32 = 0.15;
pub const SYNTH_MAX: f32 = 0.85;

/// Deterministic grayscale images of parametric shapes; label = shape family.
///
/// Sample `i` has label `i % num_classes`, so classes are balanced up to the
/// remainder. Each sample is drawn from its own derived stream, so a sample
/// does not depend on `n`.
pub fn synth_shapes(seed: u64, n: usize, size: usize, num_classes: usize) -> Result<Dataset> {
    if !(2..=10).contains(&num_classes) {
        return Err(Error::invalid(format!(
            "num_classes must be in [2, 10], got {num_classes}"
        )));
    }
    if size < 16 {
        return Err(Error::invalid(format!("size must be >= 16, got {size}")));
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % num_classes;
        let mut stream = RngStream::derived(seed, &[0x5348_4150, i as u64]);
        images.push(render_shape(label, size, &mut stream));
        labels.push(label);
    }
    Dataset::new(
        format!("synth_shapes(seed={seed},n={n},size={size},classes={num_classes})"),
        images,
        labels,
        num_classes,
    )
}

/// Signed distance (pixels, negative inside) of a family member at point
/// `(x, y)` given in the shape's local, rotated frame scaled by `r`.
fn shape_sdf(family: usize, x: f64, y: f64, r: f64, p: &[f64; 4]) -> f64 {
    let boxd = |x: f64, y: f64, hx: f64, hy: f64| {
        let dx = x.abs() - hx;
        let dy = y.abs() - hy;
        dx.max(0.0).hypot(dy.max(0.0)) + dx.max(dy).min(0.0)
    };
    match family {
        // disk
        0 => x.hypot(y) - r,
        // rectangle
        1 => boxd(x, y, r * (0.55 + 0.45 * p[0]), r * (0.35 + 0.35 * p[1])),
        // plus-shaped cross
        2 => {
            let w = r * (0.22 + 0.1 * p[0]);
            boxd(x, y, r, w).min(boxd(x, y, w, r))
        }
        // ring
        3 => (x.hypot(y) - r).abs() - r * (0.14 + 0.08 * p[0]),
        // stripes clipped to a disk
        4 => {
            let period = 3.5 + 3.0 * p[0];
            let phase = (x / period).rem_euclid(1.0);
            let stripe = (phase - 0.5).abs() * period - period * 0.25;
            stripe.max(x.hypot(y) - r * 1.1)
        }
        // triangle (equilateral, circumradius r): max of three edge half-planes
        5 => (0..3)
            .map(|k| {
                let a = PI / 2.0 + f64::from(k) * 2.0 * PI / 3.0;
                x * a.cos() + y * a.sin() - r * 0.5
            })
            .fold(f64::MIN, f64::max),
        // hollow square frame
        6 => {
            let t = r * (0.16 + 0.08 * p[0]);
            boxd(x, y, r * 0.9, r * 0.9).abs() - t
        }
        // ellipse (approximate distance)
        7 => {
            let a = r;
            let b = r * (0.4 + 0.15 * p[0]);
            let k = ((x / a).powi(2) + (y / b).powi(2)).sqrt();
            (k - 1.0) * a.min(b)
        }
        // single long bar
        8 => boxd(x, y, r * 1.1, r * (0.16 + 0.08 * p[0])),
        // 2x2 dots
        _ => {
            let off = r * 0.55;
            let rad = r * (0.26 + 0.06 * p[0]);
            let dx = x.abs() - off;
            let dy = y.abs() - off;
            dx.hypot(dy) - rad
        }
    }
}

fn render_shape(family: usize, size: usize, s: &mut RngStream) -> Image {
    let sz = size as f64;
    let lo = f64::from(SYNTH_MIN) + 0.05;
    let hi = f64::from(SYNTH_MAX) - 0.05;
    // Foreground and background at least 0.25 apart.
    let bg = s.uniform_range(lo, hi);
    let mut fg = s.uniform_range(lo, hi);
    if (fg - bg).abs() < 0.25 {
        fg = if bg + 0.25 <= hi {
            bg + 0.25 + (hi - bg - 0.25) * s.uniform()
        } else {
            bg - 0.25 - (bg - 0.25 - lo) * s.uniform()
        };
    } else {
        let _ = s.uniform();
    }
    let r = sz * s.uniform_range(0.2, 0.32);
    let cx = sz * 0.5 + s.uniform_range(-0.12, 0.12) * sz;
    let cy = sz * 0.5 + s.uniform_range(-0.12, 0.12) * sz;
    let angle = s.uniform_range(0.0, PI);
    let params = [s.uniform(), s.uniform(), s.uniform(), s.uniform()];
    // Smooth low-amplitude background gradient.
    let gx = s.uniform_range(-0.06, 0.06);
    let gy = s.uniform_range(-0.06, 0.06);
    let (sin_a, cos_a) = angle.sin_cos();

    let mut data = Vec::with_capacity(size * size);
    for yi in 0..size {
        for xi in 0..size {
            // 2x2 supersampling for anti-aliased edges.
            let mut cover = 0.0;
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let px = xi as f64 + ox - cx;
                let py = yi as f64 + oy - cy;
                let lx = cos_a * px + sin_a * py;
                let ly = -sin_a * px + cos_a * py;
                let d = shape_sdf(family, lx, ly, r, &params);
                cover += (0.5 - d).clamp(0.0, 1.0);
            }
            cover *= 0.25;
            let base = bg + gx * (xi as f64 / sz - 0.5) + gy * (yi as f64 / sz - 0.5);
            let v = base + (fg - bg) * cover;
            data.push((v as f32).clamp(SYNTH_MIN, SYNTH_MAX));
        }
    }
    Image {
        channels: 1,
        height: size,
        width: size,
        data,
    }
}
