//! Clean and corruption error, mCE, softmax ensembles and reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corruption::{apply_params, CorruptionKind, CorruptionParams};
use crate::data::{Dataset, Image};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax, Model};
use crate::par::map_indexed;
use crate::rng::{label_hash, RngStream};
use crate::tensor::Tensor;

pub const REPORT_VERSION: &str = "report_v1";
pub const SEVERITIES: [u8; 5] = [1, 2, 3, 4, 5];
const EVAL_BATCH: usize = 250;

/// Anything that maps a batch to per-sample class probabilities.
pub trait Predictor {
    fn num_classes(&self) -> usize;
    fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>>;
}

impl Predictor for Model {
    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        Ok(softmax(&self.infer(x)?))
    }
}

/// Models whose softmax outputs are averaged.
#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<Model>,
}

impl Ensemble {
    pub fn new(members: Vec<Model>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
        let k = first.num_classes();
        if let Some((i, m)) = members.iter().enumerate().find(|(_, m)| m.num_classes() != k) {
            return Err(Error::Config(format!(
                "member {i} has {} classes, member 0 has {k}",
                m.num_classes()
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }
}

/// Arithmetic mean of the members' softmax rows, written as
/// `p₀ + Σᵢ (pᵢ − p₀)/n` so identical members reproduce `p₀` exactly.
pub fn ensemble_predict(ens: &Ensemble, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
    let outputs = ens
        .members
        .iter()
        .map(|m| m.predict_proba(batch))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_rows(outputs.iter().map(Vec::as_slice).collect()))
}

fn mean_rows(outputs: Vec<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let n = outputs.len() as f64;
    let mut mean = outputs[0].to_vec();
    for (row, base) in mean.iter_mut().enumerate() {
        let first = base.clone();
        for (c, v) in base.iter_mut().enumerate() {
            let delta: f64 = outputs[1..].iter().map(|o| (o[row][c] - first[c]) / n).sum();
            *v += delta;
        }
    }
    mean
}

impl Predictor for Ensemble {
    fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        ensemble_predict(self, x)
    }
}

/// Argmax class for every image (ties to the lowest index).
pub fn predictions(pred: &dyn Predictor, images: &[Image]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let x = crate::data::stack_images(chunk);
        out.extend(pred.predict_proba(&x)?.iter().map(|r| argmax(r)));
    }
    Ok(out)
}

fn error_percent(pred: &dyn Predictor, images: &[Image], labels: &[usize]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("error rate of an empty set is undefined"));
    }
    let wrong = predictions(pred, images)?
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    Ok(100.0 * wrong as f64 / images.len() as f64)
}

/// Percent of misclassified samples under eval-mode inference.
pub fn clean_error(pred: &dyn Predictor, ds: &Dataset) -> Result<f64> {
    error_percent(pred, &ds.images, &ds.labels)
}

/// Corruption stream for image `index`: a function of kind, severity, index and seed only.
pub fn eval_stream(kind: CorruptionKind, severity: u8, index: usize, seed: u64) -> RngStream {
    RngStream::derived(seed, &[label_hash(kind.name()), severity as u64, index as u64])
}

/// `ds` with every image corrupted by `params`, streams from [`eval_stream`].
pub fn corrupt_dataset(
    ds: &Dataset,
    kind: CorruptionKind,
    severity: u8,
    params: CorruptionParams,
    seed: u64,
) -> Dataset {
    let images = map_indexed(ds.len(), |i| {
        apply_params(&ds.images[i], params, &mut eval_stream(kind, severity, i, seed))
    });
    Dataset {
        name: format!("{}+{}-s{severity}", ds.name, kind.name()),
        images,
        labels: ds.labels.clone(),
        num_classes: ds.num_classes,
    }
}

/// Errors at each severity and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindResult {
    pub severity_errors: [f64; 5],
    pub uce: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normalized_uce: Option<f64>,
}

impl KindResult {
    pub fn from_errors(severity_errors: [f64; 5]) -> Self {
        Self {
            severity_errors,
            uce: severity_errors.iter().sum::<f64>() / 5.0,
            normalized_uce: None,
        }
    }
}

/// Corruption error of one kind using its severity table.
pub fn corruption_error(pred: &dyn Predictor, ds: &Dataset, kind: CorruptionKind, seed: u64) -> Result<KindResult> {
    corruption_error_with(pred, ds, kind, seed, &|s| {
        kind.params(s).expect("severities 1..=5 exist")
    })
}

/// Corruption error with caller-chosen parameters per severity.
pub fn corruption_error_with(
    pred: &dyn Predictor,
    ds: &Dataset,
    kind: CorruptionKind,
    seed: u64,
    params: &dyn Fn(u8) -> CorruptionParams,
) -> Result<KindResult> {
    let mut errors = [0.0; 5];
    for (e, s) in errors.iter_mut().zip(SEVERITIES) {
        let corrupted = corrupt_dataset(ds, kind, s, params(s), seed);
        *e = clean_error(pred, &corrupted)?;
    }
    Ok(KindResult::from_errors(errors))
}

/// Pre-corrupted copies of a dataset for every (kind, severity), so several
/// models can be scored on identical inputs without re-corrupting.
#[derive(Clone, Debug)]
pub struct CorruptionSuite {
    pub clean: Dataset,
    pub seed: u64,
    pub sets: Vec<(CorruptionKind, Vec<Dataset>)>,
}

impl CorruptionSuite {
    pub fn build(ds: &Dataset, kinds: &[CorruptionKind], seed: u64) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::invalid("corruption suite needs at least one kind"));
        }
        if ds.is_empty() {
            return Err(Error::invalid("corruption suite needs a non-empty dataset"));
        }
        let sets = kinds
            .iter()
            .map(|&k| {
                let per = SEVERITIES
                    .iter()
                    .map(|&s| corrupt_dataset(ds, k, s, k.params(s).expect("valid severity"), seed))
                    .collect();
                (k, per)
            })
            .collect();
        Ok(Self {
            clean: ds.clone(),
            seed,
            sets,
        })
    }

    pub fn kinds(&self) -> Vec<CorruptionKind> {
        self.sets.iter().map(|(k, _)| *k).collect()
    }

    pub fn set(&self, kind: CorruptionKind, severity: u8) -> Option<&Dataset> {
        self.sets
            .iter()
            .find(|(k, _)| *k == kind)
            .and_then(|(_, v)| v.get(severity as usize - 1))
    }

    /// Unnormalized report for `pred`.
    pub fn evaluate(&self, pred: &dyn Predictor, name: &str) -> Result<EvalReport> {
        Ok(self.report(&self.outputs(pred)?, name))
    }

    /// Softmax outputs of `pred` on the clean set and every corrupted set.
    pub fn outputs(&self, pred: &dyn Predictor) -> Result<SuiteOutputs> {
        let run = |ds: &Dataset| -> Result<Vec<Vec<f64>>> {
            let mut out = Vec::with_capacity(ds.len());
            for chunk in ds.images.chunks(EVAL_BATCH) {
                out.extend(pred.predict_proba(&crate::data::stack_images(chunk))?);
            }
            Ok(out)
        };
        let clean = run(&self.clean)?;
        let sets = self
            .sets
            .iter()
            .map(|(_, per)| per.iter().map(run).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(SuiteOutputs { clean, sets })
    }

    /// Unnormalized report from previously computed outputs.
    pub fn report(&self, outputs: &SuiteOutputs, name: &str) -> EvalReport {
        let error = |probs: &[Vec<f64>]| {
            let wrong = probs
                .iter()
                .zip(&self.clean.labels)
                .filter(|(p, &l)| argmax(p) != l)
                .count();
            100.0 * wrong as f64 / probs.len() as f64
        };
        let mut per_kind = BTreeMap::new();
        for ((kind, _), per) in self.sets.iter().zip(&outputs.sets) {
            let mut errors = [0.0; 5];
            for (e, probs) in errors.iter_mut().zip(per) {
                *e = error(probs);
            }
            per_kind.insert(kind.name().to_string(), KindResult::from_errors(errors));
        }
        let mut report = EvalReport::new(name, error(&outputs.clean), per_kind);
        report.metadata.insert("eval_seed".into(), self.seed.to_string());
        report.metadata.insert("dataset".into(), self.clean.name.clone());
        report
    }
}

/// Per-sample class probabilities of one predictor over a [`CorruptionSuite`],
/// indexed `[kind][severity][sample]` for the corrupted sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutputs {
    pub clean: Vec<Vec<f64>>,
    pub sets: Vec<Vec<Vec<Vec<f64>>>>,
}

impl SuiteOutputs {
    /// Ensemble outputs, bitwise equal to scoring an [`Ensemble`] of the
    /// same members in the same order.
    pub fn mean(members: &[&SuiteOutputs]) -> Result<SuiteOutputs> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
        let same_layout = members.iter().all(|m| {
            m.clean.len() == first.clean.len()
                && m.sets.len() == first.sets.len()
                && m.sets.iter().zip(&first.sets).all(|(a, b)| a.len() == b.len())
        });
        if !same_layout {
            return Err(Error::Config("suite outputs come from different suites".into()));
        }
        let clean = mean_rows(members.iter().map(|m| m.clean.as_slice()).collect());
        let sets = (0..first.sets.len())
            .map(|k| {
                (0..first.sets[k].len())
                    .map(|s| mean_rows(members.iter().map(|m| m.sets[k][s].as_slice()).collect()))
                    .collect()
            })
            .collect();
        Ok(SuiteOutputs { clean, sets })
    }
}

/// Structured evaluation result; serializes to JSON with sorted kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub model: String,
    pub clean_error: f64,
    pub per_kind: BTreeMap<String, KindResult>,
    pub mce: f64,
    /// `off` or the reference model name.
    pub normalization: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normalized_mce: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new(model: &str, clean_error: f64, per_kind: BTreeMap<String, KindResult>) -> Self {
        let mce = per_kind.values().map(|k| k.uce).sum::<f64>() / per_kind.len().max(1) as f64;
        Self {
            version: REPORT_VERSION.into(),
            model: model.into(),
            clean_error,
            per_kind,
            mce,
            normalization: "off".into(),
            normalized_mce: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Adds `100·uCE/uCE_ref` per kind and their mean.
    pub fn normalize(&mut self, reference: &EvalReport) -> Result<()> {
        let mut total = 0.0;
        for (kind, res) in self.per_kind.iter_mut() {
            let r = reference
                .per_kind
                .get(kind)
                .ok_or_else(|| Error::Config(format!("reference report lacks kind {kind}")))?;
            if r.uce == 0.0 {
                return Err(Error::NormalizationUndefined(kind.clone()));
            }
            let v = 100.0 * res.uce / r.uce;
            res.normalized_uce = Some(v);
            total += v;
        }
        self.normalized_mce = Some(total / self.per_kind.len().max(1) as f64);
        self.normalization = reference.model.clone();
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "report".into(),
            offset: 0,
            msg: e.to_string(),
        })?;
        if r.version != REPORT_VERSION {
            return Err(Error::Format {
                what: "report".into(),
                offset: 0,
                msg: format!("unsupported report version '{}'", r.version),
            });
        }
        Ok(r)
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model);
        let _ = writeln!(s, "clean error: {:.2}%", self.clean_error);
        let _ = writeln!(
            s,
            "{:<16}{:>8}{:>8}{:>8}{:>8}{:>8}{:>9}{:>9}",
            "kind", "s1", "s2", "s3", "s4", "s5", "uCE", "norm"
        );
        for (kind, r) in &self.per_kind {
            let _ = write!(s, "{kind:<16}");
            for e in r.severity_errors {
                let _ = write!(s, "{e:>8.2}");
            }
            let norm = r.normalized_uce.map_or("-".to_string(), |v| format!("{v:.1}"));
            let _ = writeln!(s, "{:>9.2}{norm:>9}", r.uce);
        }
        let _ = write!(s, "mCE: {:.2}%", self.mce);
        match self.normalized_mce {
            Some(v) => {
                let _ = writeln!(s, "  normalized mCE: {v:.1} (reference {})", self.normalization);
            }
            None => s.push('\n'),
        }
        s
    }
}

/// Differences between two reports larger than `tol` (percentage points).
/// Empty when the reports agree.
pub fn compare_reports(a: &EvalReport, b: &EvalReport, tol: f64) -> Vec<String> {
    let mut diffs = Vec::new();
    let check = |diffs: &mut Vec<String>, what: String, x: f64, y: f64| {
        if (x - y).abs() > tol || x.is_nan() != y.is_nan() {
            diffs.push(format!("{what}: {x} vs {y}"));
        }
    };
    check(&mut diffs, "clean_error".into(), a.clean_error, b.clean_error);
    check(&mut diffs, "mce".into(), a.mce, b.mce);
    for (kind, ra) in &a.per_kind {
        match b.per_kind.get(kind) {
            Some(rb) => {
                for (i, (x, y)) in ra.severity_errors.iter().zip(&rb.severity_errors).enumerate() {
                    check(&mut diffs, format!("{kind} s{}", i + 1), *x, *y);
                }
                check(&mut diffs, format!("{kind} uCE"), ra.uce, rb.uce);
            }
            None => diffs.push(format!("{kind}: missing from second report")),
        }
    }
    for kind in b.per_kind.keys().filter(|k| !a.per_kind.contains_key(*k)) {
        diffs.push(format!("{kind}: missing from first report"));
    }
    diffs
}

/// Unnormalized report over `kinds`, optionally normalized by `reference`.
pub fn mce(
    pred: &dyn Predictor,
    ds: &Dataset,
    kinds: &[CorruptionKind],
    seed: u64,
    reference: Option<&EvalReport>,
    name: &str,
) -> Result<EvalReport> {
    let suite = CorruptionSuite::build(ds, kinds, seed)?;
    let mut report = suite.evaluate(pred, name)?;
    if let Some(r) = reference {
        report.normalize(r)?;
    }
    Ok(report)
}

/// Mean over samples of `‖tap(X) − tap(C(X))‖₂` (Frobenius norm per sample).
pub fn feature_distance(model: &Model, clean: &Dataset, corrupted: &Dataset) -> Result<f64> {
    if clean.len() != corrupted.len() || clean.is_empty() {
        return Err(Error::invalid(
            "feature distance needs two equally sized non-empty sets",
        ));
    }
    let mut total = 0.0f64;
    let indices: Vec<usize> = (0..clean.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (_, a) = model.infer_with_tap(&clean.batch(chunk))?;
        let (_, b) = model.infer_with_tap(&corrupted.batch(chunk))?;
        for n in 0..chunk.len() {
            let sq: f64 = a
                .sample(n)
                .iter()
                .zip(b.sample(n))
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum();
            total += sq.sqrt();
        }
    }
    Ok(total / clean.len() as f64)
}
