use std::collections::BTreeMap;
use std::fmt::Write;

use crate::augment::{AugMixConfig, AugOp, AugOpKind};
use crate::config::{parse_key_values, take_or};
use crate::error::{Error, Result};
use crate::tv::TvConfig;

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `epochs` at which the learning rate is multiplied by `lr_factor`.
    pub lr_milestones: Vec<f64>,
    pub lr_factor: f64,
    pub seed: u64,
    pub augmix: Option<AugMixConfig>,
    pub tv: Option<TvConfig>,
    pub jsd_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_milestones: vec![0.5, 0.75],
            lr_factor: 0.1,
            seed: 0,
            augmix: Some(AugMixConfig::default()),
            tv: None,
            jsd_weight: 12.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !(self.jsd_weight >= 0.0) {
            return Err(Error::invalid("weight_decay and jsd_weight must be >= 0"));
        }
        if let Some(a) = &self.augmix {
            a.validate()?;
        }
        if let Some(t) = &self.tv {
            t.validate()?;
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch as f64 >= m * self.epochs as f64)
            .count();
        self.lr * self.lr_factor.powi(passed as i32)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "momentum={}", self.momentum);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let milestones: Vec<String> = self.lr_milestones.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "lr_milestones={}", milestones.join(","));
        let _ = writeln!(s, "lr_factor={}", self.lr_factor);
        let _ = writeln!(s, "seed={}", self.seed);
        match &self.augmix {
            Some(a) => {
                let _ = writeln!(s, "augmix=on");
                let _ = writeln!(s, "augmix.k={}", a.k);
                let _ = writeln!(s, "augmix.alpha={}", a.alpha);
                let _ = writeln!(s, "augmix.depth={}", a.max_depth);
                let _ = writeln!(s, "augmix.ops={}", ops_to_text(&a.op_list));
            }
            None => {
                let _ = writeln!(s, "augmix=off");
            }
        }
        let _ = writeln!(s, "jsd_weight={}", self.jsd_weight);
        match &self.tv {
            Some(t) => {
                let _ = writeln!(s, "tv=on");
                let _ = writeln!(s, "tv.lambda={}", t.lambda);
                let tap = t.tap.map_or("first_conv".to_string(), |i| i.to_string());
                let _ = writeln!(s, "tv.tap_layer={tap}");
                let _ = writeln!(s, "tv.all_views={}", t.all_views);
            }
            None => {
                let _ = writeln!(s, "tv=off");
            }
        }
        s
    }

    /// Parses `key=value` text; absent keys keep their defaults, unknown keys fail.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        Self::from_map(kv)
    }

    pub fn from_map(mut kv: BTreeMap<String, String>) -> Result<Self> {
        let d = Self::default();
        let mut cfg = Self {
            epochs: take_or(&mut kv, "epochs", d.epochs)?,
            batch_size: take_or(&mut kv, "batch_size", d.batch_size)?,
            lr: take_or(&mut kv, "lr", d.lr)?,
            momentum: take_or(&mut kv, "momentum", d.momentum)?,
            weight_decay: take_or(&mut kv, "weight_decay", d.weight_decay)?,
            lr_milestones: match kv.remove("lr_milestones") {
                Some(v) if v.trim().is_empty() => Vec::new(),
                Some(v) => v
                    .split(',')
                    .map(|m| m.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad lr_milestones '{v}'")))?,
                None => d.lr_milestones,
            },
            lr_factor: take_or(&mut kv, "lr_factor", d.lr_factor)?,
            seed: take_or(&mut kv, "seed", d.seed)?,
            augmix: None,
            tv: None,
            jsd_weight: take_or(&mut kv, "jsd_weight", d.jsd_weight)?,
        };
        let augmix_on = on_off(kv.remove("augmix").as_deref(), true, "augmix")?;
        let ad = AugMixConfig::default();
        let augmix = AugMixConfig {
            k: take_or(&mut kv, "augmix.k", ad.k)?,
            alpha: take_or(&mut kv, "augmix.alpha", ad.alpha)?,
            max_depth: take_or(&mut kv, "augmix.depth", ad.max_depth)?,
            op_list: match kv.remove("augmix.ops") {
                Some(v) => ops_from_text(&v)?,
                None => ad.op_list,
            },
        };
        cfg.augmix = augmix_on.then_some(augmix);
        let tv_on = on_off(kv.remove("tv").as_deref(), false, "tv")?;
        let td = TvConfig::default();
        let tv = TvConfig {
            lambda: take_or(&mut kv, "tv.lambda", td.lambda)?,
            tap: match kv.remove("tv.tap_layer") {
                None => None,
                Some(v) if v == "first_conv" => None,
                Some(v) => Some(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad tv.tap_layer '{v}'")))?,
                ),
            },
            all_views: take_or(&mut kv, "tv.all_views", td.all_views)?,
        };
        cfg.tv = tv_on.then_some(tv);
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown training key '{k}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn on_off(v: Option<&str>, default: bool, key: &str) -> Result<bool> {
    match v {
        None => Ok(default),
        Some("on" | "true" | "1") => Ok(true),
        Some("off" | "false" | "0") => Ok(false),
        Some(other) => Err(Error::Config(format!("{key} must be on or off, got '{other}'"))),
    }
}

/// `name` for default ranges, `name:lo:hi` otherwise; comma-separated.
pub fn ops_to_text(ops: &[AugOp]) -> String {
    ops.iter()
        .map(|op| {
            if (op.lo, op.hi) == op.kind.default_range() {
                op.kind.name().to_string()
            } else {
                format!("{}:{}:{}", op.kind.name(), op.lo, op.hi)
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

pub fn ops_from_text(text: &str) -> Result<Vec<AugOp>> {
    text.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let kind: AugOpKind = parts[0].parse()?;
            match parts.len() {
                1 => Ok(AugOp::new(kind)),
                3 => {
                    let num = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad op range in '{item}'")))
                    };
                    Ok(AugOp {
                        kind,
                        lo: num(parts[1])?,
                        hi: num(parts[2])?,
                    })
                }
                _ => Err(Error::Config(format!("op must be name or name:lo:hi, got '{item}'"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::lf_op_list;

    #[test]
    fn text_round_trip_with_custom_ops_and_tv() {
        let cfg = TrainConfig {
            augmix: Some(AugMixConfig {
                op_list: vec![AugOp::fixed(AugOpKind::Contrast, 1.0), lf_op_list()[0]],
                ..AugMixConfig::default()
            }),
            tv: Some(TvConfig {
                tap: Some(4),
                ..TvConfig::default()
            }),
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_an_error() {
        assert!(TrainConfig::from_text("epochs=2\nepoch=3\n").is_err());
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig {
            epochs: 8,
            lr: 1.0,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..8).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs[3], 1.0);
        assert!((lrs[4] - 0.1).abs() < 1e-12);
        assert!((lrs[6] - 0.01).abs() < 1e-12);
    }
}
