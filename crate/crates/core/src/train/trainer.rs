use std::path::Path;

use super::config::TrainConfig;
use super::jsd::jsd_consistency;
use super::sgd::{sgd_step, Velocity};
use crate::augment::{augmix_compose, hf_op_list, lf_op_list, AugMixConfig, AugOp};
use crate::data::{stack_images, Dataset, Image};
use crate::error::{Error, Result};
use crate::eval::clean_error;
use crate::nn::{save_checkpoint, softmax, softmax_cross_entropy, ArchSpec, Mode, Model};
use crate::par::map_indexed;
use crate::rng::{derive_seed, RngStream};
use crate::tensor::Tensor;
use crate::tv::{tv_loss_batch, TvConfig};

const SHUFFLE_TAG: u64 = 0x5348_5546;
const AUG_TAG: u64 = 0x4155_474d;
const INIT_TAG: u64 = 0x4d4f_444c;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce_loss: f64,
    pub jsd_loss: f64,
    pub tv_loss: f64,
    pub val_error: f64,
    pub lr: f64,
}

/// Per-epoch log plus the configuration it was produced under.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub config: String,
    pub rows: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with every config line echoed as a `#` comment header.
    pub fn to_csv(&self) -> String {
        let mut s: String = self.config.lines().map(|l| format!("# {l}\n")).collect();
        s.push_str("epoch,train_loss,ce_loss,jsd_loss,tv_loss,val_error,lr\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9},{:.4},{}\n",
                r.epoch, r.train_loss, r.ce_loss, r.jsd_loss, r.tv_loss, r.val_error, r.lr
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Model after the epoch with the lowest validation error (earliest on ties).
    pub best: Model,
    pub best_epoch: usize,
    pub log: TrainLog,
}

fn check_compatible(model: &Model, ds: &Dataset, what: &str) -> Result<()> {
    let shape = ds.image_shape();
    let a = &model.arch;
    if let Some((c, h, w)) = shape {
        if (c, h, w) != (a.in_channels, a.height, a.width) {
            return Err(Error::Shape(format!(
                "{what} images are {c}x{h}x{w}, model expects {}x{}x{}",
                a.in_channels, a.height, a.width
            )));
        }
    }
    if ds.num_classes != a.num_classes {
        return Err(Error::Shape(format!(
            "{what} has {} classes, model has {}",
            ds.num_classes, a.num_classes
        )));
    }
    Ok(())
}

/// Layer index the TV term regularizes.
pub fn resolve_tap(arch: &ArchSpec, tv: &TvConfig) -> Result<usize> {
    let tap = match tv.tap {
        Some(t) => t,
        None => arch
            .conv_index(0)
            .ok_or_else(|| Error::invalid("TV needs a convolution to tap"))?,
    };
    if tap >= arch.layers.len() {
        return Err(Error::invalid(format!("tap layer {tap} outside the network")));
    }
    Ok(tap)
}

/// Trains a freshly initialized model.
pub fn train(
    train_ds: &Dataset,
    val_ds: &Dataset,
    arch: &ArchSpec,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let model = Model::new(arch.clone(), derive_seed(cfg.seed, &[INIT_TAG]))?;
    train_model(model, train_ds, val_ds, cfg, out_dir)
}

fn augmented_view(img: &Image, cfg: &AugMixConfig, seed: u64, epoch: usize, index: usize, view: u64) -> Result<Image> {
    let mut stream = RngStream::derived(seed, &[AUG_TAG, epoch as u64, index as u64, view]);
    augmix_compose(img, cfg, &mut stream)
}

struct StepLosses {
    ce: f64,
    jsd: f64,
    tv: f64,
}

fn train_step(model: &mut Model, ds: &Dataset, batch: &[usize], cfg: &TrainConfig, epoch: usize) -> Result<StepLosses> {
    let b = batch.len();
    let labels: Vec<usize> = batch.iter().map(|&i| ds.labels[i]).collect();
    let x = match &cfg.augmix {
        Some(aug) => {
            let views = map_indexed(2 * b, |j| {
                let idx = batch[j % b];
                augmented_view(&ds.images[idx], aug, cfg.seed, epoch, idx, 1 + (j / b) as u64)
            })
            .into_iter()
            .collect::<Result<Vec<Image>>>()?;
            stack_images(batch.iter().map(|&i| &ds.images[i]).chain(views.iter()))
        }
        None => ds.batch(batch),
    };
    let mut trace = model.forward(&x, Mode::Train)?;
    let k = model.num_classes();
    let logits = trace.logits.data();
    let clean_logits = Tensor::from_vec(crate::tensor::Shape4::new(b, k, 1, 1), logits[..b * k].to_vec())?;
    let (ce, dce) = softmax_cross_entropy(&clean_logits, &labels)?;
    let mut dlogits = Tensor::zeros(trace.logits.shape());
    dlogits.data_mut()[..b * k].copy_from_slice(dce.data());

    let mut jsd = 0.0;
    if cfg.augmix.is_some() && cfg.jsd_weight > 0.0 {
        let probs = softmax(&trace.logits);
        let (loss, grads) = jsd_consistency(&probs[..b], &probs[b..2 * b], &probs[2 * b..])?;
        jsd = loss;
        let d = dlogits.data_mut();
        for (view, rows) in grads.iter().enumerate() {
            for (i, row) in rows.iter().enumerate() {
                let base = (view * b + i) * k;
                for (c, g) in row.iter().enumerate() {
                    d[base + c] += (cfg.jsd_weight * g) as f32;
                }
            }
        }
    }

    let mut tv = 0.0;
    let mut dtap = None;
    if let Some(tvc) = cfg.tv.as_ref().filter(|t| t.lambda > 0.0) {
        let tapped = &trace.tapped;
        if tvc.all_views || cfg.augmix.is_none() {
            let (loss, g) = tv_loss_batch(tapped, tvc.lambda);
            tv = loss;
            dtap = Some(g);
        } else {
            let (loss, g) = tv_loss_batch(&tapped.slice_batch(0, b), tvc.lambda);
            tv = loss;
            let mut full = Tensor::zeros(tapped.shape());
            full.data_mut()[..g.data().len()].copy_from_slice(g.data());
            dtap = Some(full);
        }
    }
    model.backward(&mut trace, &dlogits, dtap.as_ref())?;
    Ok(StepLosses { ce, jsd, tv })
}

fn diverged(epoch: usize, step: usize, detail: String) -> Error {
    Error::TrainingDiverged { epoch, step, detail }
}

/// Runs the training loop from `model`. With `out_dir`, writes `log.csv`,
/// `best.fqln` and `final.fqln`; on divergence writes `last_good.fqln`.
pub fn train_model(
    mut model: Model,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(&model, train_ds, "training set")?;
    check_compatible(&model, val_ds, "validation set")?;
    if train_ds.len() < 2 {
        return Err(Error::invalid("training needs at least 2 samples"));
    }
    if let Some(tv) = &cfg.tv {
        model.arch.tap = resolve_tap(&model.arch, tv)?;
    }
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once('=') {
            model.metadata.insert(format!("train.{k}"), v.to_string());
        }
    }
    let mut log = TrainLog {
        config: format!("{}{}", model.arch.to_text(), cfg.to_text()),
        rows: Vec::new(),
    };
    let mut velocity = Velocity::new();
    let mut best = model.clone();
    let mut best_err = f64::INFINITY;
    let mut best_epoch = 0;
    let mut last_good = model.clone();

    let on_failure = |err: Error, last_good: &Model| -> Error {
        if let Some(dir) = out_dir {
            let _ = save_checkpoint(last_good, dir.join("last_good.fqln"));
        }
        err
    };

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        let mut shuffle = RngStream::derived(cfg.seed, &[SHUFFLE_TAG, epoch as u64]);
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle.index(i + 1));
        }
        let (mut ce_sum, mut jsd_sum, mut tv_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let losses = train_step(&mut model, train_ds, batch, cfg, epoch).map_err(|e| on_failure(e, &last_good))?;
            let total = losses.ce + cfg.jsd_weight * losses.jsd + losses.tv;
            if !total.is_finite() {
                return Err(on_failure(
                    diverged(epoch, step, format!("loss is {total}")),
                    &last_good,
                ));
            }
            sgd_step(&mut model, lr, cfg.momentum, cfg.weight_decay, &mut velocity).map_err(|e| {
                let e = match e {
                    Error::TrainingDiverged { detail, .. } => diverged(epoch, step, detail),
                    other => other,
                };
                on_failure(e, &last_good)
            })?;
            ce_sum += losses.ce;
            jsd_sum += losses.jsd;
            tv_sum += losses.tv;
            steps += 1;
        }
        if !model.all_finite() {
            return Err(on_failure(
                diverged(epoch, steps, "non-finite parameters after epoch".into()),
                &last_good,
            ));
        }
        let val_error = if val_ds.is_empty() {
            f64::NAN
        } else {
            clean_error(&model, val_ds)?
        };
        let n = steps.max(1) as f64;
        let row = EpochLog {
            epoch: epoch + 1,
            train_loss: (ce_sum + cfg.jsd_weight * jsd_sum + tv_sum) / n,
            ce_loss: ce_sum / n,
            jsd_loss: jsd_sum / n,
            tv_loss: tv_sum / n,
            val_error,
            lr,
        };
        if val_error < best_err || best_err.is_infinite() && epoch == 0 {
            best_err = val_error;
            best = model.clone();
            best_epoch = epoch + 1;
        }
        log.rows.push(row);
        last_good = model.clone();
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("log.csv"), log.to_csv()).map_err(|e| Error::io(dir.join("log.csv"), e))?;
        save_checkpoint(&best, dir.join("best.fqln"))?;
        save_checkpoint(&model, dir.join("final.fqln"))?;
    }
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        log,
    })
}

/// Direction of a frequency-biased fine-tune.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bias {
    Hf,
    Lf,
}

impl Bias {
    pub fn name(self) -> &'static str {
        match self {
            Bias::Hf => "hf",
            Bias::Lf => "lf",
        }
    }

    pub fn op_list(self) -> Vec<AugOp> {
        match self {
            Bias::Hf => hf_op_list(),
            Bias::Lf => lf_op_list(),
        }
    }
}

impl std::str::FromStr for Bias {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hf" | "HF" => Ok(Bias::Hf),
            "lf" | "LF" => Ok(Bias::Lf),
            other => Err(Error::invalid(format!("bias must be hf or lf, got '{other}'"))),
        }
    }
}

/// Fine-tuning request.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSpec {
    pub bias: Bias,
    pub epochs: usize,
    pub lr: f64,
    /// Replaces the bias's op list when set.
    pub op_list: Option<Vec<AugOp>>,
}

impl FinetuneSpec {
    pub fn new(bias: Bias) -> Self {
        Self {
            bias,
            epochs: 15,
            lr: 1e-3,
            op_list: None,
        }
    }
}

/// The base model's TV setting, read from its training metadata.
pub fn base_tv(base: &Model) -> Option<TvConfig> {
    if base.metadata.get("train.tv").map(String::as_str) != Some("on") {
        return None;
    }
    let lambda = base.metadata.get("train.tv.lambda")?.parse().ok()?;
    let all_views = base
        .metadata
        .get("train.tv.all_views")
        .and_then(|v| v.parse().ok())
        .unwrap_or(false);
    Some(TvConfig {
        lambda,
        tap: Some(base.arch.tap),
        all_views,
    })
}

/// Continues training `base` with the AugMix op list replaced by the bias
/// list, keeping JSD and keeping TV exactly when the base was TV-trained.
/// `template` supplies the remaining hyperparameters. Zero epochs return
/// the base unchanged.
pub fn finetune(
    base: &Model,
    spec: &FinetuneSpec,
    train_ds: &Dataset,
    val_ds: &Dataset,
    template: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    check_compatible(base, train_ds, "training set")?;
    check_compatible(base, val_ds, "validation set")?;
    if spec.epochs == 0 {
        return Ok(TrainOutcome {
            model: base.clone(),
            best: base.clone(),
            best_epoch: 0,
            log: TrainLog::default(),
        });
    }
    let augmix = AugMixConfig {
        op_list: spec.op_list.clone().unwrap_or_else(|| spec.bias.op_list()),
        ..template.augmix.clone().unwrap_or_default()
    };
    let cfg = TrainConfig {
        epochs: spec.epochs,
        lr: spec.lr,
        augmix: Some(augmix),
        tv: base_tv(base),
        ..template.clone()
    };
    let mut model = base.clone();
    model.metadata.insert("finetune.bias".into(), spec.bias.name().into());
    train_model(model, train_ds, val_ds, &cfg, out_dir)
}
