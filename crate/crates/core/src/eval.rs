//! Confusion accounting, metrics and the two experiments: a balanced
//! comparison and a class-imbalance sweep. Anomalous is the positive class.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomalyzer::AnomalyzerModel;
use crate::dataset::{Label, LabeledImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, actual_anomalous: bool, predicted_anomalous: bool) {
        match (actual_anomalous, predicted_anomalous) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn metrics(&self) -> MetricSet {
        MetricSet::from_counts(self)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Derived rates. `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

impl MetricSet {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let specificity = ratio(c.tn, c.tn + c.fp);
        Self {
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            sensitivity,
            specificity,
            fpr: ratio(c.fp, c.fp + c.tn),
            fnr: ratio(c.fn_, c.fn_ + c.tp),
            balanced_accuracy: sensitivity.zip(specificity).map(|(a, b)| 0.5 * (a + b)),
        }
    }
}

pub fn compute_metrics(counts: &ConfusionCounts) -> MetricSet {
    MetricSet::from_counts(counts)
}

/// Formats an optional metric for reports; undefined values print as
/// `undefined`. Defined values use the shortest exact representation.
pub fn fmt_metric(m: Option<f64>) -> String {
    m.map_or_else(|| "undefined".to_string(), |v| format!("{v}"))
}

/// Outcome of running a detector on one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub anomalous: bool,
    /// Number of flagged cells, for detectors that localize.
    pub flagged_count: Option<usize>,
}

/// Anything that labels an image as anomalous or not.
pub trait Detector: Sync {
    fn name(&self) -> String;
    fn detect(&self, image: &LabeledImage) -> Result<Detection>;
}

impl Detector for AnomalyzerModel {
    fn name(&self) -> String {
        "anomalyzer".into()
    }

    fn detect(&self, image: &LabeledImage) -> Result<Detection> {
        let map = self.score(&image.pixels)?;
        Ok(Detection {
            anomalous: map.verdict.is_anomalous(),
            flagged_count: Some(map.flagged_count),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: String,
    pub label: Label,
    pub verdict: Label,
    pub flagged_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    pub verdicts: Vec<VerdictRecord>,
}

/// Tallies verdicts into counts.
pub fn aggregate(verdicts: &[VerdictRecord]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for v in verdicts {
        c.record(v.label.is_anomalous(), v.verdict.is_anomalous());
    }
    c
}

/// Runs `detector` over `test` in parallel; the verdict log follows input order.
pub fn evaluate(detector: &dyn Detector, test: &[LabeledImage]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let verdicts = test
        .par_iter()
        .map(|img| {
            detector.detect(img).map(|d| VerdictRecord {
                id: img.id.clone(),
                label: img.label,
                verdict: if d.anomalous {
                    Label::Anomalous
                } else {
                    Label::NonAnomalous
                },
                flagged_count: d.flagged_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        counts: aggregate(&verdicts),
        verdicts,
    })
}

/// One row of an imbalance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub detector: String,
    pub ratio: usize,
    pub counts: ConfusionCounts,
    pub metrics: MetricSet,
}

/// Evaluates each detector at corrupt-to-normal ratios `1:r`.
///
/// Every anomaly in `base_test` is kept at every ratio; normals are drawn
/// in order from `base_test`'s normals followed by `extra_normals`, so the
/// test set for each ratio contains the previous one.
pub fn imbalance_sweep(
    detectors: &[&dyn Detector],
    base_test: &[LabeledImage],
    extra_normals: &[LabeledImage],
    ratios: &[usize],
) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() || ratios.contains(&0) {
        return Err(Error::invalid("ratios must be positive"));
    }
    if extra_normals.iter().any(|i| i.label.is_anomalous()) {
        return Err(Error::invalid("extra normal pool contains anomalous images"));
    }
    let anomalies: Vec<&LabeledImage> = base_test.iter().filter(|i| i.label.is_anomalous()).collect();
    if anomalies.is_empty() {
        return Err(Error::invalid("base test set has no anomalies"));
    }
    let normals: Vec<&LabeledImage> = base_test
        .iter()
        .filter(|i| !i.label.is_anomalous())
        .chain(extra_normals)
        .collect();
    let max_ratio = *ratios.iter().max().expect("non-empty");
    let needed = max_ratio * anomalies.len();
    if normals.len() < needed {
        return Err(Error::InsufficientNormals {
            needed,
            available: normals.len(),
        });
    }

    let mut rows = Vec::new();
    for det in detectors {
        let anomaly_hits = detect_all(*det, &anomalies)?;
        let normal_hits = detect_all(*det, &normals[..needed])?;
        let mut tp_fn = ConfusionCounts::default();
        for &hit in &anomaly_hits {
            tp_fn.record(true, hit);
        }
        for &r in ratios {
            let mut counts = tp_fn;
            for &hit in &normal_hits[..r * anomalies.len()] {
                counts.record(false, hit);
            }
            rows.push(SweepRow {
                detector: det.name(),
                ratio: r,
                counts,
                metrics: counts.metrics(),
            });
        }
    }
    Ok(rows)
}

fn detect_all(det: &dyn Detector, images: &[&LabeledImage]) -> Result<Vec<bool>> {
    images
        .par_iter()
        .map(|img| det.detect(img).map(|d| d.anomalous))
        .collect()
}

/// Metrics table: `detector,ratio,tp,tn,fp,fn,f1,balanced_accuracy`.
pub fn write_metrics_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(["detector", "ratio", "tp", "tn", "fp", "fn", "f1", "balanced_accuracy"])?;
    for r in rows {
        out.write_record([
            r.detector.clone(),
            r.ratio.to_string(),
            r.counts.tp.to_string(),
            r.counts.tn.to_string(),
            r.counts.fp.to_string(),
            r.counts.fn_.to_string(),
            fmt_metric(r.metrics.f1),
            fmt_metric(r.metrics.balanced_accuracy),
        ])?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Single-detector report:
/// `detector,tp,tn,fp,fn,f1,sensitivity,specificity,fpr,fnr,balanced_accuracy`.
pub fn write_evaluation_csv(path: &Path, detector: &str, c: &ConfusionCounts) -> Result<()> {
    let m = c.metrics();
    let mut out = csv_writer(path)?;
    out.write_record([
        "detector",
        "tp",
        "tn",
        "fp",
        "fn",
        "f1",
        "sensitivity",
        "specificity",
        "fpr",
        "fnr",
        "balanced_accuracy",
    ])?;
    out.write_record([
        detector.to_string(),
        c.tp.to_string(),
        c.tn.to_string(),
        c.fp.to_string(),
        c.fn_.to_string(),
        fmt_metric(m.f1),
        fmt_metric(m.sensitivity),
        fmt_metric(m.specificity),
        fmt_metric(m.fpr),
        fmt_metric(m.fnr),
        fmt_metric(m.balanced_accuracy),
    ])?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Verdict log: `image_id,label,verdict,flagged_count`.
pub fn write_verdicts_csv(path: &Path, verdicts: &[VerdictRecord]) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(["image_id", "label", "verdict", "flagged_count"])?;
    for v in verdicts {
        out.write_record([
            v.id.clone(),
            v.label.to_string(),
            v.verdict.to_string(),
            v.flagged_count.map_or_else(String::new, |c| c.to_string()),
        ])?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Convenience for a single summary line.
pub fn write_summary(mut w: impl Write, name: &str, c: &ConfusionCounts) -> std::io::Result<()> {
    let m = c.metrics();
    writeln!(
        w,
        "{name}: tp={} tn={} fp={} fn={} f1={} balanced_accuracy={} fpr={} fnr={}",
        c.tp,
        c.tn,
        c.fp,
        c.fn_,
        fmt_metric(m.f1),
        fmt_metric(m.balanced_accuracy),
        fmt_metric(m.fpr),
        fmt_metric(m.fnr),
    )
}
