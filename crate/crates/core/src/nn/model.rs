//! Sequential CNN with a feature-map tap.

use std::collections::BTreeMap;
use std::fmt;

use super::layers::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, global_avgpool_backward,
    global_avgpool_forward, linear_backward, linear_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward, BnCache, ConvCache, Mode, Param,
};
use crate::error::{Error, Result};
use crate::rng::{RngStream, RNG_ALGORITHM};
use crate::tensor::{Shape4, Tensor};

/// One layer of the architecture description.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    Linear {
        out_features: usize,
    },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv({out_channels},{kernel},{stride},{padding})"),
            LayerSpec::BatchNorm => f.write_str("bn"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { size } => write!(f, "maxpool({size})"),
            LayerSpec::GlobalAvgPool => f.write_str("gap"),
            LayerSpec::Linear { out_features } => write!(f, "linear({out_features})"),
        }
    }
}

impl LayerSpec {
    fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    fn parse(token: &str) -> Result<Self> {
        let token = token.trim();
        let (name, args) = match token.find('(') {
            Some(i) if token.ends_with(')') => (&token[..i], &token[i + 1..token.len() - 1]),
            Some(_) => return Err(Error::Config(format!("malformed layer '{token}'"))),
            None => (token, ""),
        };
        let nums: Vec<usize> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad number in layer '{token}'")))
                })
                .collect::<Result<_>>()?
        };
        let arity = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!("layer '{token}' takes {n} arguments")))
            }
        };
        Ok(match name {
            "conv" => {
                arity(4)?;
                LayerSpec::Conv {
                    out_channels: nums[0],
                    kernel: nums[1],
                    stride: nums[2],
                    padding: nums[3],
                }
            }
            "bn" => {
                arity(0)?;
                LayerSpec::BatchNorm
            }
            "relu" => {
                arity(0)?;
                LayerSpec::Relu
            }
            "maxpool" => {
                arity(1)?;
                LayerSpec::MaxPool { size: nums[0] }
            }
            "gap" => {
                arity(0)?;
                LayerSpec::GlobalAvgPool
            }
            "linear" => {
                arity(1)?;
                LayerSpec::Linear { out_features: nums[0] }
            }
            other => return Err(Error::Config(format!("unknown layer kind '{other}'"))),
        })
    }
}

/// Architecture description: input geometry, layers, tap and BN momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose output is exposed as the tapped feature maps.
    pub tap: usize,
    pub bn_momentum: f64,
    /// Fixed input standardization `(x − mean) / std` applied before layer 0.
    pub input_mean: f32,
    pub input_std: f32,
}

impl ArchSpec {
    /// conv(3×3,16)→BN→ReLU→maxpool2→conv(3×3,32)→BN→ReLU→maxpool2→GAP→linear.
    pub fn tinycnn(in_channels: usize, height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            name: "tinycnn".into(),
            in_channels,
            height,
            width,
            num_classes,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    out_channels: 32,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear {
                    out_features: num_classes,
                },
            ],
            tap: 0,
            bn_momentum: 0.1,
            input_mean: 0.5,
            input_std: 0.25,
        }
    }

    /// Index of the `k`-th convolution (0-based).
    pub fn conv_index(&self, k: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .nth(k)
            .map(|(i, _)| i)
    }

    pub fn with_tap(mut self, tap: usize) -> Self {
        self.tap = tap;
        self
    }

    /// Output shape of every layer for a batch of `n`; validates compatibility.
    pub fn shapes(&self, n: usize) -> Result<Vec<Shape4>> {
        let mut cur = Shape4::new(n, self.in_channels, self.height, self.width);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            cur = match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if kernel == 0 || stride == 0 || cur.h + 2 * padding < kernel || cur.w + 2 * padding < kernel {
                        return Err(Error::Shape(format!("layer {i} ({l}) does not fit input {cur}")));
                    }
                    Shape4::new(
                        n,
                        out_channels,
                        (cur.h + 2 * padding - kernel) / stride + 1,
                        (cur.w + 2 * padding - kernel) / stride + 1,
                    )
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => cur,
                LayerSpec::MaxPool { size } => {
                    if size == 0 || cur.h < size || cur.w < size {
                        return Err(Error::Shape(format!("layer {i} ({l}) does not fit input {cur}")));
                    }
                    Shape4::new(n, cur.c, cur.h / size, cur.w / size)
                }
                LayerSpec::GlobalAvgPool => Shape4::new(n, cur.c, 1, 1),
                LayerSpec::Linear { out_features } => Shape4::new(n, out_features, 1, 1),
            };
            out.push(cur);
        }
        match out.last() {
            Some(s) if s.sample_len() == self.num_classes => {}
            Some(s) => {
                return Err(Error::Shape(format!(
                    "network ends with {} outputs but num_classes is {}",
                    s.sample_len(),
                    self.num_classes
                )))
            }
            None => return Err(Error::Shape("architecture has no layers".into())),
        }
        if self.tap >= self.layers.len() {
            return Err(Error::Shape(format!(
                "tap layer {} outside {} layers",
                self.tap,
                self.layers.len()
            )));
        }
        Ok(out)
    }

    /// Canonical `key=value` text.
    pub fn to_text(&self) -> String {
        let layers: Vec<String> = self.layers.iter().map(ToString::to_string).collect();
        format!(
            "arch={}\ninput={}x{}x{}\nnum_classes={}\nlayers={}\ntap={}\nbn_momentum={}\ninput_mean={}\ninput_std={}\n",
            self.name,
            self.in_channels,
            self.height,
            self.width,
            self.num_classes,
            layers.join(";"),
            self.tap,
            self.bn_momentum,
            self.input_mean,
            self.input_std
        )
    }

    /// Parses [`ArchSpec::to_text`] output. Unknown keys are returned as extras.
    pub fn from_text(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let mut kv = crate::config::parse_key_values(text)?;
        let mut take = |k: &str| {
            kv.remove(k)
                .ok_or_else(|| Error::Config(format!("architecture is missing '{k}'")))
        };
        let name = take("arch")?;
        let input = take("input")?;
        let dims: Vec<usize> = input
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad input geometry '{input}'")))?;
        if dims.len() != 3 {
            return Err(Error::Config(format!("input must be CxHxW, got '{input}'")));
        }
        let num = |k: &str, v: String| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad value for {k}: '{v}'")))
        };
        let num_classes = num("num_classes", take("num_classes")?)? as usize;
        let layers = take("layers")?
            .split(';')
            .map(LayerSpec::parse)
            .collect::<Result<Vec<_>>>()?;
        let tap = num("tap", take("tap")?)? as usize;
        let bn_momentum = num("bn_momentum", take("bn_momentum")?)?;
        let input_mean = num("input_mean", take("input_mean")?)? as f32;
        let input_std = num("input_std", take("input_std")?)? as f32;
        let arch = ArchSpec {
            name,
            in_channels: dims[0],
            height: dims[1],
            width: dims[2],
            num_classes,
            layers,
            tap,
            bn_momentum,
            input_mean,
            input_std,
        };
        arch.shapes(1)?;
        Ok((arch, kv))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layer {
    Conv {
        weight: Param,
        bias: Param,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        gamma: Param,
        beta: Param,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
    },
    Relu,
    MaxPool(usize),
    GlobalAvgPool,
    Linear {
        weight: Param,
        bias: Param,
    },
}

/// Per-layer cache produced by a training-mode forward pass.
#[derive(Debug)]
enum LayerCache {
    Conv(ConvCache),
    Bn(BnCache),
    Relu(Tensor),
    MaxPool(Shape4, Vec<u32>),
    Gap(Shape4),
    Linear(Tensor),
}

/// Result of a training-mode forward pass.
#[derive(Debug)]
pub struct ForwardTrace {
    /// (N, num_classes, 1, 1)
    pub logits: Tensor,
    /// Output of the tap layer.
    pub tapped: Tensor,
    caches: Vec<LayerCache>,
    /// Set once backward has consumed the caches.
    consumed: bool,
}

/// A sequential network plus metadata carried into checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub(crate) layers: Vec<Layer>,
    /// Extra `key=value` metadata persisted with the checkpoint.
    pub metadata: BTreeMap<String, String>,
}

impl Model {
    /// Kaiming-style fan-in Gaussian init from `seed`; biases zero, BN
    /// gamma one, beta zero, running mean zero, running variance one.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(arch)?;
        let mut stream = RngStream::derived(seed, &[0x494e_4954]);
        for layer in &mut model.layers {
            match layer {
                Layer::Conv { weight, .. } | Layer::Linear { weight, .. } => {
                    let fan_in: usize = weight.dims[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    let draws = stream.gaussian_vec(weight.value.len(), 0.0, std)?;
                    for (w, d) in weight.value.iter_mut().zip(draws) {
                        *w = d as f32;
                    }
                }
                Layer::BatchNorm { gamma, .. } => gamma.value.iter_mut().for_each(|g| *g = 1.0),
                _ => {}
            }
        }
        model.metadata.insert("init_seed".into(), seed.to_string());
        model.metadata.insert("rng".into(), RNG_ALGORITHM.into());
        Ok(model)
    }

    /// Builds the layer skeleton with all-zero parameters (BN variance one).
    pub fn zeroed(arch: ArchSpec) -> Result<Self> {
        let shapes = arch.shapes(1)?;
        let mut in_shape = Shape4::new(1, arch.in_channels, arch.height, arch.width);
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let pname = |p: &str| format!("{i}.{}.{p}", spec.kind_name());
            layers.push(match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let dims = vec![out_channels, in_shape.c, kernel, kernel];
                    let len = dims.iter().product();
                    Layer::Conv {
                        weight: Param::new(pname("weight"), dims, vec![0.0; len]),
                        bias: Param::new(pname("bias"), vec![out_channels], vec![0.0; out_channels]),
                        stride,
                        padding,
                    }
                }
                LayerSpec::BatchNorm => {
                    let c = in_shape.c;
                    Layer::BatchNorm {
                        gamma: Param::new(pname("gamma"), vec![c], vec![1.0; c]),
                        beta: Param::new(pname("beta"), vec![c], vec![0.0; c]),
                        running_mean: vec![0.0; c],
                        running_var: vec![1.0; c],
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { size } => Layer::MaxPool(size),
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerSpec::Linear { out_features } => {
                    let fin = in_shape.sample_len();
                    Layer::Linear {
                        weight: Param::new(pname("weight"), vec![out_features, fin], vec![0.0; out_features * fin]),
                        bias: Param::new(pname("bias"), vec![out_features], vec![0.0; out_features]),
                    }
                }
            });
            in_shape = shapes[i];
        }
        Ok(Self {
            arch,
            layers,
            metadata: BTreeMap::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Learnable parameters in declaration order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv { weight, bias, .. } | Layer::Linear { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv { weight, bias, .. } | Layer::Linear { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Layer index owning each parameter, aligned with [`Model::params`].
    pub fn param_layers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if matches!(l, Layer::Conv { .. } | Layer::Linear { .. } | Layer::BatchNorm { .. }) {
                out.push(i);
                out.push(i);
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Indices of batch-norm layers.
    pub fn bn_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::BatchNorm { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Running (mean, variance) of BN layer `index`.
    pub fn bn_stats(&self, index: usize) -> Option<(&[f32], &[f32])> {
        match self.layers.get(index) {
            Some(Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            }) => Some((running_mean, running_var)),
            _ => None,
        }
    }

    pub fn set_bn_stats(&mut self, index: usize, mean: &[f32], var: &[f32]) -> Result<()> {
        match self.layers.get_mut(index) {
            Some(Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            }) if running_mean.len() == mean.len() && running_var.len() == var.len() => {
                running_mean.copy_from_slice(mean);
                running_var.copy_from_slice(var);
                Ok(())
            }
            _ => Err(Error::Shape(format!("layer {index} is not a matching batch norm"))),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.c != self.arch.in_channels || s.h != self.arch.height || s.w != self.arch.width {
            return Err(Error::Shape(format!(
                "model expects input (N,{},{},{}), got {s}",
                self.arch.in_channels, self.arch.height, self.arch.width
            )));
        }
        Ok(())
    }

    fn standardize(&self, x: &Tensor) -> Tensor {
        let (m, inv) = (self.arch.input_mean, 1.0 / self.arch.input_std);
        let data = x.data().iter().map(|&v| (v - m) * inv).collect();
        Tensor::from_vec_unchecked(x.shape(), data)
    }

    /// Eval-mode forward through layers `0..end`, returning the input of
    /// layer `end` (or the logits when `end == num_layers`) and the tap
    /// output if the tap lies before `end`.
    pub fn forward_prefix(&self, x: &Tensor, end: usize) -> Result<(Tensor, Option<Tensor>)> {
        self.check_input(x)?;
        let mut cur = self.standardize(x);
        let mut tapped = None;
        for (i, layer) in self.layers.iter().enumerate().take(end) {
            cur = match layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    padding,
                } => conv2d_forward(&cur, &weight.value, &weight.dims, &bias.value, *stride, *padding, false)?.0,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let (mut rm, mut rv) = (running_mean.clone(), running_var.clone());
                    batchnorm_forward(&cur, &gamma.value, &beta.value, &mut rm, &mut rv, 0.0, Mode::Eval)?.0
                }
                Layer::Relu => relu_forward(&cur),
                Layer::MaxPool(size) => maxpool_forward(&cur, *size).0,
                Layer::GlobalAvgPool => global_avgpool_forward(&cur),
                Layer::Linear { weight, bias } => linear_forward(&cur, &weight.value, &bias.value)?,
            };
            if i == self.arch.tap {
                tapped = Some(cur.clone());
            }
        }
        Ok((cur, tapped))
    }

    /// Eval-mode logits, (N, num_classes, 1, 1).
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_prefix(x, self.layers.len())?.0)
    }

    /// Eval-mode logits and tapped feature maps.
    pub fn infer_with_tap(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (logits, tapped) = self.forward_prefix(x, self.layers.len())?;
        Ok((logits, tapped.expect("tap index validated by the architecture")))
    }

    /// Forward pass that records what backward needs. In train mode BN
    /// layers use batch statistics and update their running statistics.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let momentum = self.arch.bn_momentum;
        let tap = self.arch.tap;
        let mut cur = self.standardize(x);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut tapped = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (next, cache) = match layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let (y, c) =
                        conv2d_forward(&cur, &weight.value, &weight.dims, &bias.value, *stride, *padding, true)?;
                    (y, LayerCache::Conv(c.expect("cache requested")))
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let (y, c) = batchnorm_forward(
                        &cur,
                        &gamma.value,
                        &beta.value,
                        running_mean,
                        running_var,
                        momentum,
                        mode,
                    )?;
                    match c {
                        Some(c) => (y, LayerCache::Bn(c)),
                        None => {
                            return Err(Error::Usage(
                                "backward through eval-mode batch norm is not supported; use Mode::Train".into(),
                            ))
                        }
                    }
                }
                Layer::Relu => {
                    let y = relu_forward(&cur);
                    (y.clone(), LayerCache::Relu(y))
                }
                Layer::MaxPool(size) => {
                    let (y, arg) = maxpool_forward(&cur, *size);
                    (y, LayerCache::MaxPool(cur.shape(), arg))
                }
                Layer::GlobalAvgPool => (global_avgpool_forward(&cur), LayerCache::Gap(cur.shape())),
                Layer::Linear { weight, bias } => {
                    let y = linear_forward(&cur, &weight.value, &bias.value)?;
                    (y, LayerCache::Linear(cur))
                }
            };
            if i == tap {
                tapped = Some(next.clone());
            }
            caches.push(cache);
            cur = next;
        }
        Ok(ForwardTrace {
            logits: cur,
            tapped: tapped.expect("tap index validated by the architecture"),
            caches,
            consumed: false,
        })
    }

    /// Backpropagates `dlogits` (and an optional extra gradient on the tapped
    /// maps) and overwrites every parameter gradient.
    pub fn backward(&mut self, trace: &mut ForwardTrace, dlogits: &Tensor, dtapped: Option<&Tensor>) -> Result<()> {
        if trace.consumed || trace.caches.len() != self.layers.len() {
            return Err(Error::Usage("backward needs a fresh forward trace".into()));
        }
        if dlogits.shape() != trace.logits.shape() {
            return Err(Error::Shape(format!(
                "dlogits {} vs logits {}",
                dlogits.shape(),
                trace.logits.shape()
            )));
        }
        if let Some(d) = dtapped {
            if d.shape() != trace.tapped.shape() {
                return Err(Error::Shape(format!(
                    "tap gradient {} vs tapped maps {}",
                    d.shape(),
                    trace.tapped.shape()
                )));
            }
        }
        trace.consumed = true;
        self.zero_grads();
        let tap = self.arch.tap;
        let mut grad = dlogits.clone();
        let caches = std::mem::take(&mut trace.caches);
        for (i, (layer, cache)) in self.layers.iter_mut().zip(caches).enumerate().rev() {
            if i == tap {
                if let Some(d) = dtapped {
                    for (g, e) in grad.data_mut().iter_mut().zip(d.data()) {
                        *g += e;
                    }
                }
            }
            let need_dx = i > 0;
            grad = match (layer, cache) {
                (Layer::Conv { weight, bias, .. }, LayerCache::Conv(c)) => {
                    let (dx, dw, db) = conv2d_backward(&c, &weight.value, &grad, need_dx)?;
                    weight.grad = dw;
                    bias.grad = db;
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::BatchNorm { gamma, beta, .. }, LayerCache::Bn(c)) => {
                    let (dx, dg, db) = batchnorm_backward(&c, &gamma.value, &grad)?;
                    gamma.grad = dg;
                    beta.grad = db;
                    dx
                }
                (Layer::Relu, LayerCache::Relu(y)) => relu_backward(&y, &grad),
                (Layer::MaxPool(_), LayerCache::MaxPool(shape, arg)) => maxpool_backward(shape, &arg, &grad),
                (Layer::GlobalAvgPool, LayerCache::Gap(shape)) => global_avgpool_backward(shape, &grad),
                (Layer::Linear { weight, bias }, LayerCache::Linear(x)) => {
                    let (dx, dw, db) = linear_backward(&x, &weight.value, &grad);
                    weight.grad = dw;
                    bias.grad = db;
                    dx
                }
                _ => return Err(Error::Usage("forward trace does not match the model".into())),
            };
        }
        Ok(())
    }

    /// Whether every parameter and running statistic is finite.
    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.iter().all(|v| v.is_finite()))
            && self.bn_layers().iter().all(|&i| {
                let (m, v) = self.bn_stats(i).expect("bn layer");
                m.iter().chain(v).all(|x| x.is_finite())
            })
    }
}
