//! The full experiment grid behind `fqln repro`: baseline and TV-trained
//! models, HF and LF experts, same-bias ensembles, expert mixtures and an
//! optional tap-placement ablation, all evaluated on one corruption suite.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;
use std::time::Instant;

use fqln::augment::{augmix_op_list, AugMixConfig, AugOp, AugOpKind};
use fqln::corruption::CorruptionKind;
use fqln::data::Dataset;
use fqln::eval::{corrupt_dataset, feature_distance, CorruptionSuite, EvalReport, SuiteOutputs};
use fqln::nn::{save_checkpoint, ArchSpec, Model};
use fqln::rng::derive_seed;
use fqln::train::{finetune, train, train_model, Bias, FinetuneSpec, TrainConfig, TrainOutcome};
use fqln::tv::TvConfig;
use fqln::{Error, Result};
use serde::Serialize;

use crate::data_spec::DataSpec;

/// Seed tag for the second same-bias member when only one seed is run.
const SECOND_MEMBER_TAG: u64 = 0x5345_434f;
/// Severity of the noise used for the feature-distance probe.
pub const PROBE_SEVERITY: u8 = 3;

#[derive(Clone, Debug)]
pub struct ReproConfig {
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    pub val_size: usize,
    /// Architecture; `None` builds TinyCNN for the data's geometry.
    pub arch: Option<ArchSpec>,
    /// Recipe for baseline and TV models; its seed is replaced per run.
    pub train: TrainConfig,
    pub tv_lambda: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub eval_seed: u64,
    pub kinds: Vec<CorruptionKind>,
    pub layer_ablation: bool,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            data: DataSpec::Synth {
                n: 12_000,
                size: 32,
                classes: 10,
                seed: 0,
            },
            val_size: 2000,
            arch: None,
            train: TrainConfig {
                epochs: 4,
                batch_size: 32,
                lr: 0.1,
                ..TrainConfig::default()
            },
            tv_lambda: fqln::tv::DEFAULT_LAMBDA,
            finetune_epochs: 1,
            finetune_lr: 0.003,
            eval_seed: 0,
            kinds: CorruptionKind::ALL.to_vec(),
            layer_ablation: false,
        }
    }
}

impl ReproConfig {
    pub fn base_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            tv: None,
            ..self.train.clone()
        }
    }

    pub fn tv_config(&self, seed: u64, tap: Option<usize>) -> TrainConfig {
        TrainConfig {
            tv: Some(TvConfig {
                lambda: self.tv_lambda,
                tap,
                all_views: false,
            }),
            ..self.base_config(seed)
        }
    }

    /// Fine-tune recipe for the same-bias ensemble members: the default
    /// AugMix list extended by every HF and LF operation.
    pub fn same_bias_config(&self, seed: u64) -> TrainConfig {
        let mut ops = augmix_op_list();
        ops.extend([AugOpKind::GaussianNoise, AugOpKind::GaussianBlur, AugOpKind::Contrast].map(AugOp::new));
        TrainConfig {
            epochs: self.finetune_epochs,
            lr: self.finetune_lr,
            augmix: Some(AugMixConfig {
                op_list: ops,
                ..self.train.augmix.clone().unwrap_or_default()
            }),
            ..self.base_config(seed)
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        let mut m = BTreeMap::new();
        m.insert("seeds".into(), seeds.join(","));
        m.insert("data".into(), self.data.to_string());
        m.insert("val_size".into(), self.val_size.to_string());
        m.insert("tv_lambda".into(), self.tv_lambda.to_string());
        m.insert("finetune_epochs".into(), self.finetune_epochs.to_string());
        m.insert("finetune_lr".into(), self.finetune_lr.to_string());
        m.insert("eval_seed".into(), self.eval_seed.to_string());
        m.insert("kinds".into(), kinds.join(","));
        m.insert("layer_ablation".into(), self.layer_ablation.to_string());
        for line in self.train.to_text().lines() {
            if let Some((k, v)) = line.split_once('=') {
                if k != "seed" {
                    m.insert(format!("train.{k}"), v.into());
                }
            }
        }
        m
    }
}

/// Reports of every model and mixture trained for one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    /// Keys: base, tv, hf, lf, same, rohl, same_bias and, with the ablation, tv_conv2.
    pub reports: BTreeMap<String, EvalReport>,
    /// Mean tap distance between clean and noisy validation images, keyed base and tv.
    pub feature_distance: BTreeMap<String, f64>,
}

impl SeedRun {
    pub fn report(&self, name: &str) -> &EvalReport {
        &self.reports[name]
    }
}

/// Wall-clock seconds per stage and seed. Never written to disk, so
/// output files stay byte-reproducible.
#[derive(Clone, Debug, Default)]
pub struct Timings {
    pub entries: Vec<(String, u64, f64)>,
}

impl Timings {
    /// Total seconds over stages whose name starts with any of `prefixes`.
    pub fn total(&self, prefixes: &[&str]) -> f64 {
        self.entries
            .iter()
            .filter(|(stage, _, _)| prefixes.iter().any(|p| stage.starts_with(p)))
            .map(|(_, _, s)| s)
            .sum()
    }

    pub fn all(&self) -> f64 {
        self.entries.iter().map(|(_, _, s)| s).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ReproOutcome {
    pub runs: Vec<SeedRun>,
    pub timings: Timings,
    pub summary: String,
}

struct Ctx<'a> {
    train: Dataset,
    val: Dataset,
    suite: CorruptionSuite,
    out_dir: &'a Path,
    timings: Timings,
    progress: &'a mut dyn FnMut(&str),
}

impl Ctx<'_> {
    fn timed<T>(&mut self, stage: &str, seed: u64, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        let secs = start.elapsed().as_secs_f64();
        (self.progress)(&format!("seed {seed}: {stage} {secs:.1}s"));
        self.timings.entries.push((stage.to_string(), seed, secs));
        Ok(out)
    }

    fn seed_dir(&self, seed: u64) -> Result<std::path::PathBuf> {
        let dir = self.out_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn keep(&self, seed: u64, name: &str, outcome: &TrainOutcome) -> Result<()> {
        let dir = self.seed_dir(seed)?;
        save_checkpoint(&outcome.model, dir.join(format!("{name}.fqln")))?;
        let log = dir.join(format!("{name}.log.csv"));
        std::fs::write(&log, outcome.log.to_csv()).map_err(|e| Error::io(&log, e))
    }

    fn evaluate(&mut self, seed: u64, name: &str, model: &Model) -> Result<(SuiteOutputs, EvalReport)> {
        let outputs = self.timed(&format!("eval.{name}"), seed, |c| c.suite.outputs(model))?;
        let mut report = self.suite.report(&outputs, &format!("{name}(seed={seed})"));
        annotate(&mut report, model);
        Ok((outputs, report))
    }
}

/// Copies the model's training metadata (recipe, LR schedule, seeds) into a report.
pub fn annotate(report: &mut EvalReport, model: &Model) {
    for (k, v) in &model.metadata {
        if k.starts_with("train.") || k.starts_with("finetune.") {
            report.metadata.insert(k.clone(), v.clone());
        }
    }
    report
        .metadata
        .insert("rng".into(), fqln::rng::RNG_ALGORITHM.to_string());
}

fn mixture_report(
    suite: &CorruptionSuite,
    members: &[&SuiteOutputs],
    name: &str,
    parts: &[&EvalReport],
) -> Result<EvalReport> {
    let mut report = suite.report(&SuiteOutputs::mean(members)?, name);
    let names: Vec<&str> = parts.iter().map(|r| r.model.as_str()).collect();
    report.metadata.insert("members".into(), names.join(","));
    Ok(report)
}

/// Runs the grid, writing checkpoints, logs, reports and a summary under `out_dir`.
pub fn run_repro(cfg: &ReproConfig, out_dir: &Path, progress: &mut dyn FnMut(&str)) -> Result<ReproOutcome> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("repro needs at least one seed"));
    }
    if cfg.finetune_epochs == 0 {
        return Err(Error::invalid("repro needs finetune_epochs >= 1"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let start = Instant::now();
    let ds = cfg.data.load()?;
    if cfg.val_size == 0 || cfg.val_size >= ds.len() {
        return Err(Error::invalid(format!(
            "val_size must lie in [1, {}), got {}",
            ds.len(),
            cfg.val_size
        )));
    }
    let (train_ds, val_ds) = ds.split_at(ds.len() - cfg.val_size);
    let (c, h, w) = ds.image_shape().expect("non-empty dataset");
    let arch = cfg
        .arch
        .clone()
        .unwrap_or_else(|| ArchSpec::tinycnn(c, h, w, ds.num_classes));
    let suite = CorruptionSuite::build(&val_ds, &cfg.kinds, cfg.eval_seed)?;
    let probe = corrupt_dataset(
        &val_ds,
        CorruptionKind::GaussianNoise,
        PROBE_SEVERITY,
        CorruptionKind::GaussianNoise.params(PROBE_SEVERITY)?,
        cfg.eval_seed,
    );
    let mut ctx = Ctx {
        train: train_ds,
        val: val_ds,
        suite,
        out_dir,
        timings: Timings::default(),
        progress,
    };
    let setup = start.elapsed().as_secs_f64();
    ctx.timings.entries.push(("setup".into(), 0, setup));

    struct Trained {
        base: Model,
        tv: Model,
        runs: SeedRun,
    }
    let mut trained = Vec::new();
    for &seed in &cfg.seeds {
        let base = ctx.timed("train.base", seed, |c| {
            train(&c.train, &c.val, &arch, &cfg.base_config(seed), None)
        })?;
        ctx.keep(seed, "base", &base)?;
        let (_, base_report) = ctx.evaluate(seed, "base", &base.model)?;
        let tv = ctx.timed("train.tv", seed, |c| {
            train(&c.train, &c.val, &arch, &cfg.tv_config(seed, None), None)
        })?;
        ctx.keep(seed, "tv", &tv)?;
        let (_, tv_report) = ctx.evaluate(seed, "tv", &tv.model)?;
        let mut fd = BTreeMap::new();
        fd.insert("base".to_string(), feature_distance(&base.model, &ctx.val, &probe)?);
        fd.insert("tv".to_string(), feature_distance(&tv.model, &ctx.val, &probe)?);
        let mut reports = BTreeMap::new();
        reports.insert("base".to_string(), base_report);
        reports.insert("tv".to_string(), tv_report);
        trained.push(Trained {
            base: base.model,
            tv: tv.model,
            runs: SeedRun {
                seed,
                reports,
                feature_distance: fd,
            },
        });
    }

    let mut expert_outputs = Vec::new();
    for t in trained.iter_mut() {
        let seed = t.runs.seed;
        let template = cfg.base_config(seed);
        let spec = |bias| FinetuneSpec {
            epochs: cfg.finetune_epochs,
            lr: cfg.finetune_lr,
            ..FinetuneSpec::new(bias)
        };
        let hf = ctx.timed("finetune.hf", seed, |c| {
            finetune(&t.tv, &spec(Bias::Hf), &c.train, &c.val, &template, None)
        })?;
        ctx.keep(seed, "hf", &hf)?;
        let lf = ctx.timed("finetune.lf", seed, |c| {
            finetune(&t.base, &spec(Bias::Lf), &c.train, &c.val, &template, None)
        })?;
        ctx.keep(seed, "lf", &lf)?;
        let same = ctx.timed("finetune.same", seed, |c| {
            train_model(
                same_bias_start(&t.base),
                &c.train,
                &c.val,
                &cfg.same_bias_config(seed),
                None,
            )
        })?;
        ctx.keep(seed, "same", &same)?;
        let (hf_out, hf_report) = ctx.evaluate(seed, "hf", &hf.model)?;
        let (lf_out, lf_report) = ctx.evaluate(seed, "lf", &lf.model)?;
        let (same_out, same_report) = ctx.evaluate(seed, "same", &same.model)?;
        t.runs.reports.insert("hf".into(), hf_report);
        t.runs.reports.insert("lf".into(), lf_report);
        t.runs.reports.insert("same".into(), same_report);
        expert_outputs.push((hf_out, lf_out, same_out));
    }

    // A single seed has no independent partner, so its second same-bias
    // member is another fine-tune of the same base under a derived seed.
    let lone_partner = if cfg.seeds.len() == 1 {
        let seed = cfg.seeds[0];
        let partner_seed = derive_seed(seed, &[SECOND_MEMBER_TAG]);
        let base = &trained[0].base;
        let m = ctx.timed("finetune.same_partner", seed, |c| {
            train_model(
                same_bias_start(base),
                &c.train,
                &c.val,
                &cfg.same_bias_config(partner_seed),
                None,
            )
        })?;
        ctx.keep(seed, "same_partner", &m)?;
        Some(ctx.evaluate(seed, "same_partner", &m.model)?)
    } else {
        None
    };

    let n = trained.len();
    for i in 0..n {
        let seed = trained[i].runs.seed;
        let (hf_out, lf_out, same_out) = &expert_outputs[i];
        let start = Instant::now();
        let rohl = mixture_report(
            &ctx.suite,
            &[hf_out, lf_out],
            &format!("rohl(seed={seed})"),
            &[trained[i].runs.report("hf"), trained[i].runs.report("lf")],
        )?;
        let (partner_out, partner_report) = match &lone_partner {
            Some((o, r)) => (o, r.clone()),
            None => {
                let j = (i + 1) % n;
                (&expert_outputs[j].2, trained[j].runs.report("same").clone())
            }
        };
        let same_bias = mixture_report(
            &ctx.suite,
            &[same_out, partner_out],
            &format!("same_bias(seed={seed})"),
            &[trained[i].runs.report("same"), &partner_report],
        )?;
        ctx.timings
            .entries
            .push(("mix".into(), seed, start.elapsed().as_secs_f64()));
        trained[i].runs.reports.insert("rohl".into(), rohl);
        trained[i].runs.reports.insert("same_bias".into(), same_bias);
    }

    if cfg.layer_ablation {
        let conv2 = arch
            .conv_index(1)
            .ok_or_else(|| Error::invalid("the layer ablation needs a second convolution"))?;
        for t in trained.iter_mut() {
            let seed = t.runs.seed;
            let m = ctx.timed("ablation.train", seed, |c| {
                train(&c.train, &c.val, &arch, &cfg.tv_config(seed, Some(conv2)), None)
            })?;
            ctx.keep(seed, "tv_conv2", &m)?;
            let outputs = ctx.timed("ablation.eval", seed, |c| c.suite.outputs(&m.model))?;
            let mut report = ctx.suite.report(&outputs, &format!("tv_conv2(seed={seed})"));
            annotate(&mut report, &m.model);
            t.runs.reports.insert("tv_conv2".into(), report);
        }
    }
    let runs: Vec<SeedRun> = trained.into_iter().map(|t| t.runs).collect();
    for run in &runs {
        let dir = ctx.seed_dir(run.seed)?;
        for (name, report) in &run.reports {
            let path = dir.join(format!("{name}.json"));
            std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
        }
    }
    let summary = summary_text(cfg, &runs);
    let json = summary_json(cfg, &runs);
    for (file, body) in [("summary.txt", &summary), ("summary.json", &json)] {
        let path = out_dir.join(file);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ReproOutcome {
        runs,
        timings: ctx.timings,
        summary,
    })
}

fn same_bias_start(base: &Model) -> Model {
    let mut m = base.clone();
    m.metadata.insert("finetune.bias".into(), "same".into());
    m
}

fn uce(r: &EvalReport, kind: &str) -> Option<f64> {
    r.per_kind.get(kind).map(|k| k.uce)
}

fn mean_uce(r: &EvalReport, kinds: &[&str]) -> Option<f64> {
    let vals: Option<Vec<f64>> = kinds.iter().map(|k| uce(r, k)).collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn rel_drop(base: f64, new: f64) -> f64 {
    100.0 * (base - new) / base
}

/// One line per comparison the grid was built for, per seed.
pub fn pattern_lines(runs: &[SeedRun]) -> Vec<String> {
    let mut lines = Vec::new();
    for run in runs {
        let s = run.seed;
        let (base, tv) = (run.report("base"), run.report("tv"));
        if let (Some(bn), Some(tn), Some(bb), Some(tb)) = (
            uce(base, "gaussian_noise"),
            uce(tv, "gaussian_noise"),
            uce(base, "gaussian_blur"),
            uce(tv, "gaussian_blur"),
        ) {
            lines.push(format!(
                "seed {s} tv vs base: noise uCE {bn:.2} -> {tn:.2} ({:+.1}% rel), blur uCE {bb:.2} -> {tb:.2} ({:+.1}% rel), clean {:.2} -> {:.2}",
                -rel_drop(bn, tn),
                -rel_drop(bb, tb),
                base.clean_error,
                tv.clean_error
            ));
        }
        let lf = run.report("lf");
        let low = ["contrast", "brightness", "fog"];
        if let (Some(a), Some(b)) = (mean_uce(base, &low), mean_uce(lf, &low)) {
            lines.push(format!(
                "seed {s} lf vs base: contrast/brightness/fog uCE {a:.2} -> {b:.2} ({:+.1}% rel), clean {:.2} -> {:.2}",
                -rel_drop(a, b),
                base.clean_error,
                lf.clean_error
            ));
        }
        let (rohl, same) = (run.report("rohl"), run.report("same_bias"));
        lines.push(format!(
            "seed {s} rohl vs same-bias ensemble: mCE {:.2} vs {:.2}, clean {:.2} vs {:.2}",
            rohl.mce, same.mce, rohl.clean_error, same.clean_error
        ));
        if let Some(c2) = run.reports.get("tv_conv2") {
            if let (Some(a), Some(b)) = (uce(tv, "gaussian_noise"), uce(c2, "gaussian_noise")) {
                lines.push(format!("seed {s} tap conv1 vs conv2: noise uCE {a:.2} vs {b:.2}"));
            }
        }
        lines.push(format!(
            "seed {s} feature distance (noise s{PROBE_SEVERITY}): base {:.4}, tv {:.4}",
            run.feature_distance["base"], run.feature_distance["tv"]
        ));
    }
    lines
}

fn summary_text(cfg: &ReproConfig, runs: &[SeedRun]) -> String {
    let mut s = String::from("# repro configuration\n");
    for (k, v) in cfg.to_map() {
        let _ = writeln!(s, "{k}={v}");
    }
    s.push('\n');
    let _ = writeln!(s, "{:<6}{:<12}{:>10}{:>10}", "seed", "model", "clean", "mCE");
    for run in runs {
        for (name, r) in &run.reports {
            let _ = writeln!(s, "{:<6}{name:<12}{:>10.2}{:>10.2}", run.seed, r.clean_error, r.mce);
        }
    }
    s.push('\n');
    for line in pattern_lines(runs) {
        s.push_str(&line);
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct SummaryJson {
    version: &'static str,
    config: BTreeMap<String, String>,
    runs: Vec<RunJson>,
}

#[derive(Serialize)]
struct RunJson {
    seed: u64,
    models: BTreeMap<String, ModelJson>,
    feature_distance: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ModelJson {
    clean_error: f64,
    mce: f64,
    uce: BTreeMap<String, f64>,
}

fn summary_json(cfg: &ReproConfig, runs: &[SeedRun]) -> String {
    let doc = SummaryJson {
        version: "repro_v1",
        config: cfg.to_map(),
        runs: runs
            .iter()
            .map(|r| RunJson {
                seed: r.seed,
                models: r
                    .reports
                    .iter()
                    .map(|(name, rep)| {
                        (
                            name.clone(),
                            ModelJson {
                                clean_error: rep.clean_error,
                                mce: rep.mce,
                                uce: rep.per_kind.iter().map(|(k, v)| (k.clone(), v.uce)).collect(),
                            },
                        )
                    })
                    .collect(),
                feature_distance: r.feature_distance.clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("summary serializes");
    s.push('\n');
    s
}
