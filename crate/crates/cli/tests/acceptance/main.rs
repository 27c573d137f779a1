//! End-to-end acceptance run: one line per criterion, then a single verdict.
//!
//! Criteria run sequentially inside one test so the runtime budgets are
//! measured without other tests competing for the CPU.

mod oracle;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use fqln::corruption::{CorruptionKind, CorruptionSpec};
use fqln::data::Image;
use fqln::eval::{clean_error, corrupt_dataset, EvalReport};
use fqln::fourier::{dft2, f_hf, fftshift, ifftshift, order_corruptions, HighPassMask};
use fqln::nn::load_checkpoint;
use fqln::rng::RngStream;
use fqln::train::adapt_bn;
use fqln::tv::tv_norm;
use fqln_cli::data_spec::DataSpec;
use fqln_cli::repro::{run_repro, ReproConfig, ReproOutcome, PROBE_SEVERITY};

const TRIALS: usize = 20;

struct Verdicts {
    lines: Vec<(usize, bool, String)>,
}

impl Verdicts {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        let line = format!("criterion {id:>2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((id, pass, line));
    }
}

fn uce(r: &EvalReport, kind: &str) -> f64 {
    r.per_kind[kind].uce
}

fn rel_drop(base: f64, new: f64) -> f64 {
    (base - new) / base
}

fn seeds_passing(flags: &[bool]) -> usize {
    flags.iter().filter(|&&f| f).count()
}

fn criterion_1(v: &mut Verdicts) {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for (i, (name, trial)) in oracle::CHECKS.iter().enumerate() {
        let mut rng = RngStream::derived(0x4752_4144, &[i as u64]);
        let err = (0..TRIALS).map(|_| trial(&mut rng)).fold(0.0f64, f64::max);
        worst.push((name, err));
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0f64, f64::max);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect();
    v.record(
        1,
        max < 1e-3 && secs < 60.0,
        format!(
            "max rel err {max:.2e} over {TRIALS} trials each ({}), {secs:.1}s",
            detail.join(" ")
        ),
    );
}

fn criterion_2(v: &mut Verdicts) {
    let exact = tv_norm(&[0.0, 1.0, 2.0, 3.0], 2, 2);
    let mut rng = RngStream::new(0x5456);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (h, w) = (1 + rng.index(12), 1 + rng.index(12));
        let map: Vec<f32> = (0..h * w).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
        let base = tv_norm(&map, h, w);
        let alpha = rng.uniform_range(-4.0, 4.0) as f32;
        let shift = rng.uniform_range(-2.0, 2.0) as f32;
        let scaled = tv_norm(&map.iter().map(|x| alpha * x).collect::<Vec<_>>(), h, w);
        let shifted = tv_norm(&map.iter().map(|x| x + shift).collect::<Vec<_>>(), h, w);
        let denom = base.max(1.0);
        worst = worst
            .max((scaled - f64::from(alpha.abs()) * base).abs() / denom.max(f64::from(alpha.abs()) * base))
            .max((shifted - base).abs() / denom);
    }
    v.record(
        2,
        exact == 6.0 && worst <= 1e-6,
        format!("tv([[0,1],[2,3]])={exact}, worst homogeneity/shift rel err {worst:.2e} on 100 maps"),
    );
}

fn criterion_3(v: &mut Verdicts) {
    let mut rng = RngStream::new(0x4654);
    let mut parseval: f64 = 0.0;
    for _ in 0..50 {
        let x: Vec<f64> = (0..1024).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let spatial: f64 = x.iter().map(|a| a * a).sum();
        let spectral: f64 = dft2(&x, 32, 32).data.iter().map(|c| c.norm_sqr()).sum::<f64>() / 1024.0;
        parseval = parseval.max((spatial - spectral).abs() / spatial);
    }
    let mut impulse = vec![0.0; 1024];
    impulse[0] = 1.0;
    let flat = dft2(&impulse, 32, 32)
        .data
        .iter()
        .map(|c| (c.abs() - 1.0).abs())
        .fold(0.0f64, f64::max);
    let grid: Vec<u32> = (0..1024).collect();
    let involution = fftshift(&fftshift(&grid, 32, 32), 32, 32) == grid;
    let odd: Vec<u32> = (0..35).collect();
    let odd_inverse = ifftshift(&fftshift(&odd, 5, 7), 5, 7) == odd;
    v.record(
        3,
        parseval <= 1e-5 && flat <= 1e-6 && involution && odd_inverse,
        format!(
            "Parseval rel err {parseval:.1e}, impulse flatness err {flat:.1e}, fftshift involution {involution}, odd-size inverse {odd_inverse}"
        ),
    );
}

fn criterion_4(v: &mut Verdicts) {
    let mask = HighPassMask::new(32, 32, 8.0);
    let expected = mask.passed_bins() as f64 / 1024.0;
    let mut rng = RngStream::new(0x4648);
    let clean = Image::filled(1, 32, 32, 0.5);
    let mut total = 0.0;
    for _ in 0..200 {
        let data = rng
            .gaussian_vec(1024, 0.5, 0.05)
            .unwrap()
            .into_iter()
            .map(|x| x as f32)
            .collect();
        total += f_hf(&clean, &Image::new(1, 32, 32, data).unwrap(), &mask).unwrap();
    }
    let mean = total / 200.0;
    let base: Vec<f32> = (0..1024).map(|i| (i % 32) as f32 / 64.0).collect();
    let lifted: Vec<f32> = base.iter().map(|x| x + 0.25).collect();
    let constant = f_hf(
        &Image::new(1, 32, 32, base).unwrap(),
        &Image::new(1, 32, 32, lifted).unwrap(),
        &mask,
    )
    .unwrap();
    v.record(
        4,
        (mean - expected).abs() <= 0.02 && constant == 0.0,
        format!("white noise mean F_hf {mean:.4} vs passed fraction {expected:.4}; constant difference {constant}"),
    );
}

fn criterion_5(v: &mut Verdicts, data: &DataSpec) {
    let start = Instant::now();
    let ds = data.load().unwrap();
    let specs: Vec<CorruptionSpec> = CorruptionKind::ALL
        .iter()
        .map(|&k| CorruptionSpec::new(k, 1).unwrap())
        .collect();
    let rows = order_corruptions(&ds, &specs, 500, 8.0, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let score: BTreeMap<&str, f64> = rows.iter().map(|r| (r.spec.kind.name(), r.mean_f_hf)).collect();
    let low = ["contrast", "brightness", "fog"].map(|k| score[k]);
    let high = ["gaussian_blur", "gaussian_noise", "impulse_noise"].map(|k| score[k]);
    let max_low = low.iter().copied().fold(f64::MIN, f64::max);
    let min_high = high.iter().copied().fold(f64::MAX, f64::min);
    let order: Vec<String> = rows
        .iter()
        .map(|r| format!("{}={:.3}", r.spec.kind, r.mean_f_hf))
        .collect();
    v.record(
        5,
        max_low < min_high && secs < 120.0,
        format!(
            "max low-group {max_low:.3} < min high-group {min_high:.3}; {} ; {secs:.1}s",
            order.join(" ")
        ),
    );
}

fn criterion_6(v: &mut Verdicts, out: &ReproOutcome) {
    let t = &out.timings;
    let secs = t.total(&["train.base", "train.tv", "eval.base", "eval.tv"]);
    let mut flags = Vec::new();
    let mut detail = Vec::new();
    for run in &out.runs {
        let (b, tv) = (run.report("base"), run.report("tv"));
        let noise = rel_drop(uce(b, "gaussian_noise"), uce(tv, "gaussian_noise"));
        let blur = rel_drop(uce(b, "gaussian_blur"), uce(tv, "gaussian_blur"));
        let clean = tv.clean_error - b.clean_error;
        flags.push(noise >= 0.15 && blur >= 0.15 && clean <= 3.0);
        detail.push(format!(
            "seed {}: noise {:+.1}% blur {:+.1}% clean {:+.2}",
            run.seed,
            -100.0 * noise,
            -100.0 * blur,
            clean
        ));
    }
    let n = seeds_passing(&flags);
    v.record(
        6,
        n >= 2 && secs < 900.0,
        format!("{n}/{} seeds; {}; {secs:.0}s", flags.len(), detail.join("; ")),
    );
}

fn criterion_7(v: &mut Verdicts, out: &ReproOutcome) {
    let lf_kinds = ["contrast", "brightness", "fog"];
    let mean = |r: &EvalReport| lf_kinds.iter().map(|k| uce(r, k)).sum::<f64>() / 3.0;
    let mut flags = Vec::new();
    let mut detail = Vec::new();
    for run in &out.runs {
        let (b, lf) = (run.report("base"), run.report("lf"));
        let drop = rel_drop(mean(b), mean(lf));
        let clean = lf.clean_error - b.clean_error;
        flags.push(drop >= 0.10 && clean.abs() <= 1.0);
        detail.push(format!(
            "seed {}: LF-group uCE {:+.1}% clean {:+.2}",
            run.seed,
            -100.0 * drop,
            clean
        ));
    }
    let n = seeds_passing(&flags);
    v.record(7, n >= 2, format!("{n}/{} seeds; {}", flags.len(), detail.join("; ")));
}

fn criterion_8(v: &mut Verdicts, out: &ReproOutcome, pipeline_secs: f64) {
    let mut flags = Vec::new();
    let mut detail = Vec::new();
    for run in &out.runs {
        let (rohl, same) = (run.report("rohl"), run.report("same_bias"));
        let clean = rohl.clean_error - same.clean_error;
        flags.push(rohl.mce < same.mce && clean <= 1.5);
        detail.push(format!(
            "seed {}: mCE {:.2} vs {:.2} clean {:+.2}",
            run.seed, rohl.mce, same.mce, clean
        ));
    }
    let n = seeds_passing(&flags);
    v.record(
        8,
        n >= 2 && pipeline_secs < 1800.0,
        format!(
            "{n}/{} seeds; {}; pipeline {pipeline_secs:.0}s",
            flags.len(),
            detail.join("; ")
        ),
    );
}

fn criterion_9(v: &mut Verdicts, out: &ReproOutcome) {
    let mut flags = Vec::new();
    let mut detail = Vec::new();
    for run in &out.runs {
        let (c1, c2) = (
            uce(run.report("tv"), "gaussian_noise"),
            uce(run.report("tv_conv2"), "gaussian_noise"),
        );
        flags.push(c1 <= c2);
        detail.push(format!("seed {}: conv1 {c1:.2} vs conv2 {c2:.2}", run.seed));
    }
    let n = seeds_passing(&flags);
    v.record(9, n >= 2, format!("{n}/{} seeds; {}", flags.len(), detail.join("; ")));
}

fn criterion_10(v: &mut Verdicts, cfg: &ReproConfig, dir: &Path) {
    let ds = cfg.data.load().unwrap();
    let (_, val) = ds.split_at(ds.len() - cfg.val_size);
    let base = load_checkpoint(dir.join(format!("seed_{}/base.fqln", cfg.seeds[0]))).unwrap();
    let mut improved = 0;
    let mut detail = Vec::new();
    for kind in CorruptionKind::ALL {
        let set = corrupt_dataset(&val, kind, 3, kind.params(3).unwrap(), cfg.eval_seed);
        let before = clean_error(&base, &set).unwrap();
        let after = clean_error(&adapt_bn(&base, &set).unwrap(), &set).unwrap();
        if after < before {
            improved += 1;
        }
        detail.push(format!("{kind} {before:.2}->{after:.2}"));
    }
    v.record(
        10,
        improved >= 6,
        format!("{improved}/8 kinds improved at severity 3; {}", detail.join(" ")),
    );
}

fn criterion_11(v: &mut Verdicts, out: &ReproOutcome) {
    let mut all = true;
    let mut detail = Vec::new();
    for run in &out.runs {
        let (b, tv) = (run.feature_distance["base"], run.feature_distance["tv"]);
        all &= tv < b;
        detail.push(format!("seed {}: tv {tv:.3} vs base {b:.3}", run.seed));
    }
    v.record(
        11,
        all,
        format!(
            "gaussian_noise s{PROBE_SEVERITY} feature distance, every seed; {}",
            detail.join("; ")
        ),
    );
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// Two runs of a reduced grid (two seeds, ablation on) compared file by file.
fn criterion_12(v: &mut Verdicts, tmp: &Path) {
    let cfg = ReproConfig {
        seeds: vec![0, 1],
        data: DataSpec::Synth {
            n: 1400,
            size: 32,
            classes: 10,
            seed: 0,
        },
        val_size: 400,
        layer_ablation: true,
        ..ReproConfig::default()
    };
    let cfg = ReproConfig {
        train: fqln::train::TrainConfig {
            epochs: 1,
            ..cfg.train.clone()
        },
        ..cfg
    };
    let (a, b) = (tmp.join("det_a"), tmp.join("det_b"));
    run_repro(&cfg, &a, &mut |_| {}).unwrap();
    run_repro(&cfg, &b, &mut |_| {}).unwrap();
    let (fa, fb) = (tree_bytes(&a), tree_bytes(&b));
    let checkpoints = fa.keys().filter(|k| k.ends_with(".fqln")).count();
    let reports = fa.keys().filter(|k| k.ends_with(".json")).count();
    let differing: Vec<&String> = fa
        .keys()
        .filter(|k| fb.get(*k) != fa.get(*k))
        .chain(fb.keys().filter(|k| !fa.contains_key(*k)))
        .collect();
    v.record(
        12,
        differing.is_empty() && checkpoints > 0 && reports > 0,
        format!(
            "{} files ({checkpoints} checkpoints, {reports} json) compared, {} differ {:?}",
            fa.len(),
            differing.len(),
            differing
        ),
    );
}

#[test]
fn acceptance_criteria() {
    fqln_cli::alloc::retain_freed_memory();
    let tmp = tempfile::tempdir().unwrap();
    let mut v = Verdicts { lines: Vec::new() };
    let cfg = ReproConfig {
        layer_ablation: true,
        ..ReproConfig::default()
    };

    criterion_1(&mut v);
    criterion_2(&mut v);
    criterion_3(&mut v);
    criterion_4(&mut v);
    criterion_5(&mut v, &cfg.data);

    let dir = tmp.path().join("repro");
    let start = Instant::now();
    let outcome = run_repro(&cfg, &dir, &mut |line| eprintln!("{line}")).unwrap();
    let pipeline = start.elapsed().as_secs_f64() - outcome.timings.total(&["ablation."]);
    criterion_6(&mut v, &outcome);
    criterion_7(&mut v, &outcome);
    criterion_8(&mut v, &outcome, pipeline);
    criterion_9(&mut v, &outcome);
    criterion_10(&mut v, &cfg, &dir);
    criterion_11(&mut v, &outcome);
    criterion_12(&mut v, tmp.path());

    println!("\nacceptance summary");
    for (_, _, line) in &v.lines {
        println!("{line}");
    }
    let failed: Vec<usize> = v.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
