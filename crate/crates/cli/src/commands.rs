use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fqln::config::parse_key_values;
use fqln::corruption::{apply_corruption, params_csv, CorruptionKind, CorruptionSpec};
use fqln::data::Dataset;
use fqln::eval::{clean_error, corrupt_dataset, eval_stream, mce, Ensemble, EvalReport, Predictor};
use fqln::fourier::{corruption_spectrum, order_corruptions, ordering_csv};
use fqln::nn::{load_checkpoint_for, save_checkpoint, ArchSpec, Model};
use fqln::train::{adapt_bn, finetune, train, FinetuneSpec, TrainConfig};
use fqln::Error;

use crate::args::{Cli, Command, EvalArgs, GlobalArgs, ReproArgs, TrainArgs};
use crate::manifest::{manifest_argv, write_manifest};
use crate::pnm::{image_bytes, pgm16_bytes};
use crate::repro::{annotate, run_repro, ReproConfig};
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

pub fn run(cli: &Cli, argv: &[String]) -> CmdResult {
    let g = &cli.global;
    if let Some(t) = g.threads {
        if t == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        fqln::par::set_threads(t);
    }
    match &cli.command {
        Command::Corrupt {
            kind,
            severity,
            n,
            print_params,
        } => corrupt(g, argv, *kind, *severity, *n, *print_params),
        Command::Spectrum { kind, severity, n, out } => spectrum(g, argv, *kind, *severity, *n, out),
        Command::Order { kinds, n, radius } => order(g, argv, kinds, *n, *radius),
        Command::Train(t) => cmd_train(g, argv, t),
        Command::Finetune {
            base,
            bias,
            epochs,
            lr,
            train,
        } => {
            let mut spec = FinetuneSpec::new(*bias);
            spec.epochs = epochs.unwrap_or(spec.epochs);
            spec.lr = lr.unwrap_or(spec.lr);
            cmd_finetune(g, argv, base, &spec, train)
        }
        Command::AdaptBn {
            checkpoint,
            kind,
            severity,
        } => cmd_adapt(g, argv, checkpoint, *kind, *severity),
        Command::Eval { checkpoint, eval } => {
            let (ds, arch) = eval_setup(g, eval)?;
            let model = load_checkpoint_for(checkpoint, &arch)?;
            let mut resolved = base_resolved(g, "eval");
            resolved.insert("checkpoint".into(), checkpoint.display().to_string());
            let name = model_name(checkpoint);
            eval_common(g, argv, resolved, eval, &ds, &model, &model, ("report", &name))
        }
        Command::Rohl { hf, lf, eval } => {
            let (ds, arch) = eval_setup(g, eval)?;
            let hf_model = load_checkpoint_for(hf, &arch)?;
            let lf_model = load_checkpoint_for(lf, &arch)?;
            let first = hf_model.clone();
            let ens = Ensemble::new(vec![hf_model, lf_model])?;
            let mut resolved = base_resolved(g, "rohl");
            resolved.insert("hf".into(), hf.display().to_string());
            resolved.insert("lf".into(), lf.display().to_string());
            let name = format!("rohl({},{})", model_name(hf), model_name(lf));
            eval_common(g, argv, resolved, eval, &ds, &ens, &first, ("rohl", &name))
        }
        Command::Compare { a, b, tol } => compare(g, argv, a, b, *tol),
        Command::Repro(r) => cmd_repro(g, argv, r),
        Command::Rerun { manifest } => {
            let mut recorded = manifest_argv(manifest)?;
            if recorded.first().map(String::as_str) == Some("rerun") {
                return Err(usage("a rerun manifest cannot be re-run"));
            }
            recorded.push("--out-dir".into());
            recorded.push(g.out_dir.display().to_string());
            crate::run_args(&recorded)
        }
    }
}

fn base_resolved(g: &GlobalArgs, command: &str) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("command".into(), command.into());
    m.insert("seed".into(), g.seed().to_string());
    m.insert("out_dir".into(), g.out_dir.display().to_string());
    m.insert("data".into(), g.data.to_string());
    m.insert("val_size".into(), g.val_size.to_string());
    m.insert("arch".into(), g.arch.clone());
    m.insert("threads".into(), fqln::par::threads().to_string());
    m
}

fn manifest(g: &GlobalArgs, argv: &[String], resolved: &BTreeMap<String, String>) -> CmdResult {
    write_manifest(&g.out_dir, argv, resolved)?;
    Ok(())
}

fn load_data(g: &GlobalArgs) -> Result<Dataset, CliError> {
    let ds = g.data.load()?;
    if ds.is_empty() {
        return Err(usage(format!("dataset {} is empty", g.data)));
    }
    Ok(ds)
}

fn arch_for(g: &GlobalArgs, ds: &Dataset) -> Result<ArchSpec, CliError> {
    if g.arch == "tinycnn" {
        let (c, h, w) = ds.image_shape().expect("non-empty dataset");
        return Ok(ArchSpec::tinycnn(c, h, w, ds.num_classes));
    }
    let path = PathBuf::from(&g.arch);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (arch, _) = ArchSpec::from_text(&text)?;
    arch.shapes(1)?;
    Ok(arch)
}

fn train_split(g: &GlobalArgs, ds: &Dataset) -> Result<(Dataset, Dataset), CliError> {
    if g.val_size == 0 || g.val_size >= ds.len() {
        return Err(usage(format!(
            "--val-size must lie in [1, {}) for training on {} images",
            ds.len(),
            ds.len()
        )));
    }
    Ok(ds.split_at(ds.len() - g.val_size))
}

fn eval_split(g: &GlobalArgs, ds: Dataset) -> Result<Dataset, CliError> {
    if g.val_size == 0 {
        return Ok(ds);
    }
    if g.val_size > ds.len() {
        return Err(usage(format!(
            "--val-size {} exceeds the {} available images",
            g.val_size,
            ds.len()
        )));
    }
    Ok(ds.split_at(ds.len() - g.val_size).1)
}

fn first_n(ds: &Dataset, n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(usage("--n must be >= 1"));
    }
    if n > ds.len() {
        return Err(usage(format!("--n {n} exceeds the {} available images", ds.len())));
    }
    Ok(())
}

fn corrupt(g: &GlobalArgs, argv: &[String], kind: CorruptionKind, severity: u8, n: usize, print: bool) -> CmdResult {
    let ds = load_data(g)?;
    first_n(&ds, n)?;
    let spec = CorruptionSpec::new(kind, severity)?;
    let mut resolved = base_resolved(g, "corrupt");
    resolved.insert("kind".into(), kind.to_string());
    resolved.insert("severity".into(), severity.to_string());
    resolved.insert("n".into(), n.to_string());
    manifest(g, argv, &resolved)?;
    if print {
        print!("{}", params_csv());
    }
    let (pname, pvalue) = spec.params().describe();
    let mut csv = String::from("index,file,kind,severity,parameter,value\n");
    for (i, img) in ds.images.iter().take(n).enumerate() {
        let out = apply_corruption(img, spec, &mut eval_stream(kind, severity, i, g.seed()));
        let (ext, bytes) = image_bytes(&out).map_err(CliError::Runtime)?;
        let file = format!("{i}_{kind}_s{severity}.{ext}");
        write_file(&g.out_dir.join(&file), bytes)?;
        csv.push_str(&format!("{i},{file},{kind},{severity},{pname},{pvalue}\n"));
    }
    write_file(&g.out_dir.join("params.csv"), csv)
}

fn spectrum(g: &GlobalArgs, argv: &[String], kind: CorruptionKind, severity: u8, n: usize, out: &str) -> CmdResult {
    if out.is_empty() || out.contains(['/', '\\']) {
        return Err(usage("--out must be a plain file stem"));
    }
    let ds = load_data(g)?;
    first_n(&ds, n)?;
    let spec = CorruptionSpec::new(kind, severity)?;
    let mut resolved = base_resolved(g, "spectrum");
    resolved.insert("kind".into(), kind.to_string());
    resolved.insert("severity".into(), severity.to_string());
    resolved.insert("n".into(), n.to_string());
    resolved.insert("out".into(), out.into());
    manifest(g, argv, &resolved)?;
    let s = corruption_spectrum(&ds, spec, n, g.seed())?;
    write_file(&g.out_dir.join(format!("{out}.csv")), s.to_csv())?;
    write_file(
        &g.out_dir.join(format!("{out}.pgm")),
        pgm16_bytes(&s.log_heatmap_u16(), s.height, s.width),
    )
}

fn order(g: &GlobalArgs, argv: &[String], kinds: &[CorruptionKind], n: usize, radius: Option<f64>) -> CmdResult {
    let ds = load_data(g)?;
    first_n(&ds, n)?;
    let kinds = if kinds.is_empty() {
        CorruptionKind::ALL.to_vec()
    } else {
        kinds.to_vec()
    };
    let (_, h, _) = ds.image_shape().expect("non-empty dataset");
    let radius = radius.unwrap_or(h as f64 / 4.0);
    if radius.is_nan() || radius < 0.0 {
        return Err(usage("--radius must be >= 0"));
    }
    let specs = kinds
        .iter()
        .map(|&k| CorruptionSpec::new(k, 1))
        .collect::<fqln::Result<Vec<_>>>()?;
    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    let mut resolved = base_resolved(g, "order");
    resolved.insert("kinds".into(), names.join(","));
    resolved.insert("n".into(), n.to_string());
    resolved.insert("radius".into(), radius.to_string());
    manifest(g, argv, &resolved)?;
    let rows = order_corruptions(&ds, &specs, n, radius, g.seed())?;
    let csv = ordering_csv(&rows);
    print!("{csv}");
    write_file(&g.out_dir.join("order.csv"), csv)
}

fn train_config(g: &GlobalArgs, t: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut kv = match &t.config {
        Some(p) => parse_key_values(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => BTreeMap::new(),
    };
    for item in &t.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got '{item}'")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(seed) = g.seed {
        kv.insert("seed".into(), seed.to_string());
    }
    let cfg = TrainConfig::from_map(kv)?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_resolved(g: &GlobalArgs, command: &str, cfg: &TrainConfig) -> BTreeMap<String, String> {
    let mut resolved = base_resolved(g, command);
    resolved.insert("seed".into(), cfg.seed.to_string());
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once('=') {
            resolved.insert(format!("train.{k}"), v.into());
        }
    }
    resolved
}

fn cmd_train(g: &GlobalArgs, argv: &[String], t: &TrainArgs) -> CmdResult {
    let cfg = train_config(g, t)?;
    let ds = load_data(g)?;
    let arch = arch_for(g, &ds)?;
    let (tr, va) = train_split(g, &ds)?;
    manifest(g, argv, &config_resolved(g, "train", &cfg))?;
    write_file(&g.out_dir.join("config.txt"), cfg.to_text())?;
    let out = train(&tr, &va, &arch, &cfg, Some(&g.out_dir))?;
    print_outcome(&out.log);
    Ok(())
}

fn print_outcome(log: &fqln::train::TrainLog) {
    if let Some(last) = log.rows.last() {
        println!(
            "epoch {}: train loss {:.4}, val error {:.2}%",
            last.epoch, last.train_loss, last.val_error
        );
    }
}

fn cmd_finetune(g: &GlobalArgs, argv: &[String], base: &Path, spec: &FinetuneSpec, t: &TrainArgs) -> CmdResult {
    let template = train_config(g, t)?;
    let ds = load_data(g)?;
    let arch = arch_for(g, &ds)?;
    let (tr, va) = train_split(g, &ds)?;
    let model = load_checkpoint_for(base, &arch)?;
    let mut resolved = config_resolved(g, "finetune", &template);
    resolved.insert("base".into(), base.display().to_string());
    resolved.insert("bias".into(), spec.bias.name().into());
    resolved.insert("finetune.epochs".into(), spec.epochs.to_string());
    resolved.insert("finetune.lr".into(), spec.lr.to_string());
    manifest(g, argv, &resolved)?;
    let out = finetune(&model, spec, &tr, &va, &template, Some(&g.out_dir))?;
    if spec.epochs == 0 {
        save_checkpoint(&out.model, g.out_dir.join("final.fqln"))?;
    }
    print_outcome(&out.log);
    Ok(())
}

fn cmd_adapt(
    g: &GlobalArgs,
    argv: &[String],
    checkpoint: &Path,
    kind: Option<CorruptionKind>,
    severity: u8,
) -> CmdResult {
    let ds = load_data(g)?;
    let arch = arch_for(g, &ds)?;
    let model = load_checkpoint_for(checkpoint, &arch)?;
    let clean = eval_split(g, ds)?;
    let target = match kind {
        Some(k) => corrupt_dataset(&clean, k, severity, k.params(severity)?, g.seed()),
        None => clean,
    };
    let mut resolved = base_resolved(g, "adapt-bn");
    resolved.insert("checkpoint".into(), checkpoint.display().to_string());
    resolved.insert("kind".into(), kind.map_or("none".into(), |k| k.to_string()));
    resolved.insert("severity".into(), severity.to_string());
    manifest(g, argv, &resolved)?;
    let adapted = adapt_bn(&model, &target)?;
    let before = clean_error(&model, &target)?;
    let after = clean_error(&adapted, &target)?;
    save_checkpoint(&adapted, g.out_dir.join("adapted.fqln"))?;
    let text = format!("set,error_before,error_after\n{},{before},{after}\n", target.name);
    print!("{text}");
    write_file(&g.out_dir.join("adapt.csv"), text)
}

fn eval_setup(g: &GlobalArgs, e: &EvalArgs) -> Result<(Dataset, ArchSpec), CliError> {
    if e.normalize && e.reference_report.is_none() {
        return Err(usage("--normalize requires --reference-report"));
    }
    let ds = load_data(g)?;
    let arch = arch_for(g, &ds)?;
    Ok((eval_split(g, ds)?, arch))
}

#[allow(clippy::too_many_arguments)]
fn eval_common(
    g: &GlobalArgs,
    argv: &[String],
    mut resolved: BTreeMap<String, String>,
    e: &EvalArgs,
    ds: &Dataset,
    pred: &dyn Predictor,
    meta_source: &Model,
    (stem, name): (&str, &str),
) -> CmdResult {
    let kinds = if e.kinds.is_empty() {
        CorruptionKind::ALL.to_vec()
    } else {
        e.kinds.clone()
    };
    let reference = match (&e.reference_report, e.normalize) {
        (Some(p), true) => {
            let text = std::fs::read_to_string(p).map_err(|err| Error::io(p, err))?;
            Some(EvalReport::from_json(&text)?)
        }
        _ => None,
    };
    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    resolved.insert("kinds".into(), names.join(","));
    resolved.insert("normalize".into(), e.normalize.to_string());
    manifest(g, argv, &resolved)?;
    let mut report = mce(pred, ds, &kinds, g.seed(), reference.as_ref(), name)?;
    annotate(&mut report, meta_source);
    if stem == "rohl" {
        report
            .metadata
            .insert("members".into(), format!("{},{}", resolved["hf"], resolved["lf"]));
    }
    let table = report.to_table();
    print!("{table}");
    write_file(&g.out_dir.join(format!("{stem}.json")), report.to_json())?;
    write_file(&g.out_dir.join(format!("{stem}.txt")), table)
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn compare(g: &GlobalArgs, argv: &[String], a: &Path, b: &Path, tol: f64) -> CmdResult {
    if tol.is_nan() || tol < 0.0 {
        return Err(usage("--tol must be >= 0"));
    }
    let load = |p: &Path| -> Result<EvalReport, CliError> {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(EvalReport::from_json(&text)?)
    };
    let (ra, rb) = (load(a)?, load(b)?);
    let mut resolved = base_resolved(g, "compare");
    resolved.insert("a".into(), a.display().to_string());
    resolved.insert("b".into(), b.display().to_string());
    resolved.insert("tol".into(), tol.to_string());
    manifest(g, argv, &resolved)?;
    let diffs = fqln::eval::compare_reports(&ra, &rb, tol);
    for d in &diffs {
        println!("{d}");
    }
    if diffs.is_empty() {
        println!("reports agree within {tol}");
        Ok(())
    } else {
        Err(CliError::Runtime(format!("reports differ in {} entries", diffs.len())))
    }
}

fn cmd_repro(g: &GlobalArgs, argv: &[String], r: &ReproArgs) -> CmdResult {
    let defaults = ReproConfig::default();
    let arch = if g.arch == "tinycnn" {
        None
    } else {
        Some(arch_for(g, &load_data(g)?)?)
    };
    let cfg = ReproConfig {
        seeds: r.seeds.clone(),
        data: g.data.clone(),
        val_size: g.val_size,
        arch,
        train: TrainConfig {
            epochs: r.epochs,
            batch_size: r.batch_size,
            lr: r.lr,
            ..defaults.train.clone()
        },
        tv_lambda: r.tv_lambda,
        finetune_epochs: r.finetune_epochs,
        finetune_lr: r.finetune_lr,
        eval_seed: g.seed(),
        layer_ablation: r.layer_ablation,
        ..defaults
    };
    cfg.train.validate()?;
    let mut resolved = base_resolved(g, "repro");
    for (k, v) in cfg.to_map() {
        resolved.insert(format!("repro.{k}"), v);
    }
    manifest(g, argv, &resolved)?;
    let outcome = run_repro(&cfg, &g.out_dir, &mut |line| eprintln!("{line}"))?;
    print!("{}", outcome.summary);
    println!("total time {:.1}s", outcome.timings.all());
    Ok(())
}
