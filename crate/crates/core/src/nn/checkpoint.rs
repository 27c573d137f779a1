//! Binary checkpoint format.
//!
//! Layout: `FQLN`, u32 version, u32 config length, UTF-8 config text, then
//! one blob per tensor in declaration order: u16 name length, name, u8 rank,
//! u32 dims, f32 data. All integers and floats are little-endian.

use std::path::Path;

use super::layers::Param;
use super::model::{ArchSpec, Layer, Model};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FQLN";
pub const FORMAT_VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";

fn config_text(model: &Model) -> Result<String> {
    let mut text = model.arch.to_text();
    for (k, v) in &model.metadata {
        if k.contains(['\n', '=']) || v.contains('\n') {
            return Err(Error::invalid(format!(
                "metadata entry '{k}' cannot be stored as a line"
            )));
        }
        text.push_str(&format!("{META_PREFIX}{k}={v}\n"));
    }
    Ok(text)
}

struct BlobRef<'a> {
    name: String,
    dims: Vec<usize>,
    data: &'a [f32],
}

fn param(p: &Param) -> BlobRef<'_> {
    BlobRef {
        name: p.name.clone(),
        dims: p.dims.clone(),
        data: &p.value,
    }
}

fn blobs(model: &Model) -> Vec<BlobRef<'_>> {
    let mut out = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            Layer::Conv { weight, bias, .. } | Layer::Linear { weight, bias } => {
                out.push(param(weight));
                out.push(param(bias));
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                out.push(param(gamma));
                out.push(param(beta));
                out.push(BlobRef {
                    name: format!("{i}.bn.running_mean"),
                    dims: vec![running_mean.len()],
                    data: running_mean,
                });
                out.push(BlobRef {
                    name: format!("{i}.bn.running_var"),
                    dims: vec![running_var.len()],
                    data: running_var,
                });
            }
            _ => {}
        }
    }
    out
}

/// Serializes a model.
pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let text = config_text(model)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for blob in blobs(model) {
        out.extend_from_slice(&(blob.name.len() as u16).to_le_bytes());
        out.extend_from_slice(blob.name.as_bytes());
        out.push(blob.dims.len() as u8);
        for &d in &blob.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in blob.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                what: what.to_string(),
                offset: self.pos as u64,
                msg: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint. Errors carry the blob or header field and byte offset.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header magic")? != MAGIC {
        return Err(Error::Format {
            what: "header magic".into(),
            offset: 0,
            msg: "not an FQLN checkpoint".into(),
        });
    }
    let version = r.u32("header version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            what: "header version".into(),
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let len = r.u32("config length")? as usize;
    let text_offset = r.pos as u64;
    let text = std::str::from_utf8(r.take(len, "config text")?).map_err(|e| Error::Format {
        what: "config text".into(),
        offset: text_offset,
        msg: e.to_string(),
    })?;
    let (arch, extras) = ArchSpec::from_text(text)?;
    let mut model = Model::zeroed(arch)?;
    for (k, v) in extras {
        match k.strip_prefix(META_PREFIX) {
            Some(key) => {
                model.metadata.insert(key.to_string(), v);
            }
            None => return Err(Error::Config(format!("unknown checkpoint config key '{k}'"))),
        }
    }

    let expected: Vec<(String, Vec<usize>)> = blobs(&model).into_iter().map(|b| (b.name, b.dims)).collect();
    let mut values = Vec::with_capacity(expected.len());
    for (name, dims) in &expected {
        let start = r.pos as u64;
        let what = format!("blob '{name}'");
        let name_len = u16::from_le_bytes(r.take(2, &what)?.try_into().expect("2 bytes")) as usize;
        let found = r.take(name_len, &what)?;
        if found != name.as_bytes() {
            return Err(Error::Format {
                what,
                offset: start,
                msg: format!("found blob '{}'", String::from_utf8_lossy(found)),
            });
        }
        let rank = r.take(1, &what)?[0] as usize;
        let mut got = Vec::with_capacity(rank);
        for _ in 0..rank {
            got.push(r.u32(&what)? as usize);
        }
        if &got != dims {
            return Err(Error::Shape(format!(
                "{what} has dims {got:?}, architecture expects {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(4 * n, &what)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if name.ends_with(".running_var") && data.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Format {
                what,
                offset: start,
                msg: "running variance must be positive and finite".into(),
            });
        }
        values.push(data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            what: "trailer".into(),
            offset: r.pos as u64,
            msg: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        });
    }

    let mut values = values.into_iter();
    for layer in &mut model.layers {
        match layer {
            Layer::Conv { weight, bias, .. } | Layer::Linear { weight, bias } => {
                weight.value = values.next().expect("blob count");
                bias.value = values.next().expect("blob count");
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                gamma.value = values.next().expect("blob count");
                beta.value = values.next().expect("blob count");
                *running_mean = values.next().expect("blob count");
                *running_var = values.next().expect("blob count");
            }
            _ => {}
        }
    }
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// Loads a checkpoint and requires its architecture to match `arch`. The
/// tap index is a training setting and is not compared.
pub fn load_checkpoint_for(path: impl AsRef<Path>, arch: &ArchSpec) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let tap_free = ArchSpec {
        tap: arch.tap,
        ..model.arch.clone()
    };
    if &tap_free != arch {
        return Err(Error::Shape(format!(
            "checkpoint architecture differs from the requested one:\n{}---\n{}",
            model.arch.to_text(),
            arch.to_text()
        )));
    }
    Ok(model)
}
