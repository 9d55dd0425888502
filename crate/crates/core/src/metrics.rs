//! Confusion-matrix metrics and one-vs-rest ROC curves with their reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    /// Fraction of samples on the diagonal.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 { 0.0 } else { self.trace() as f64 / total as f64 }
    }

    /// One-vs-rest `(tp, fn, fp, tn)` for `class`.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let row: u64 = self.counts[class].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        let (fn_, fp) = (row - tp, col - tp);
        (tp, fn_, fp, self.total() - tp - fn_ - fp)
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Metrics whose formula hit 0/0 and were set to 0.
    pub undefined: Vec<String>,
}

impl BinaryMetrics {
    pub fn from_counts(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        let mut undefined = Vec::new();
        let mut ratio = |name: &str, num: f64, den: f64| {
            if den == 0.0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num / den
            }
        };
        let (tp, fn_, fp, tn) = (tp as f64, fn_ as f64, fp as f64, tn as f64);
        let accuracy = ratio("accuracy", tp + tn, tp + tn + fp + fn_);
        let sensitivity = ratio("sensitivity", tp, tp + fn_);
        let specificity = ratio("specificity", tn, tn + fp);
        let f1 = ratio("f1", 2.0 * tp, 2.0 * tp + fp + fn_);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        let mcc = ratio("mcc", tn * tp - fn_ * fp, den);
        BinaryMetrics { accuracy, sensitivity, specificity, f1, mcc, undefined }
    }
}

pub fn binary_metrics(cm: &ConfusionMatrix, positive: usize) -> Result<BinaryMetrics> {
    if positive >= cm.n_classes {
        return Err(Error::LabelOutOfRange { label: positive, n_classes: cm.n_classes });
    }
    let (tp, fn_, fp, tn) = cm.one_vs_rest(positive);
    Ok(BinaryMetrics::from_counts(tp, fn_, fp, tn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring `>= threshold` are called positive; the first point
    /// uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over distinct scores (descending), equal scores forming
/// one step, with trapezoidal area. `None` when either side is empty.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<Option<RocCurve>> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: positive.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64, threshold: s };
        let prev = points.last().unwrap();
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(Some(RocCurve { points, auc }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvrRoc {
    /// One entry per class; `None` for classes lacking positives or negatives.
    pub curves: Vec<Option<RocCurve>>,
    /// Mean AUC over classes with a defined curve.
    pub macro_auc: Option<f64>,
    pub degenerate: Vec<usize>,
}

pub fn roc_auc_ovr(scores: &[Vec<f64>], y_true: &[usize], n_classes: usize) -> Result<OvrRoc> {
    if scores.len() != y_true.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: y_true.len() });
    }
    if let Some(r) = scores.iter().find(|r| r.len() != n_classes) {
        return Err(Error::DimensionMismatch(format!("score row of length {} for {n_classes} classes", r.len())));
    }
    if let Some(&label) = y_true.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange { label, n_classes });
    }
    let mut curves = Vec::with_capacity(n_classes);
    let mut degenerate = Vec::new();
    for c in 0..n_classes {
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = y_true.iter().map(|&l| l == c).collect();
        let curve = roc_curve(&col, &pos)?;
        if curve.is_none() {
            degenerate.push(c);
        }
        curves.push(curve);
    }
    let aucs: Vec<f64> = curves.iter().flatten().map(|c| c.auc).collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok(OvrRoc { curves, macro_auc, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub confusion: ConfusionMatrix,
    pub overall_accuracy: f64,
    pub averaging: Averaging,
    /// Aggregate under `averaging`.
    pub summary: Summary,
    pub macro_avg: Summary,
    pub micro_avg: Option<Summary>,
    pub per_class: Vec<ClassMetrics>,
    pub degenerate_classes: Vec<String>,
    #[serde(skip)]
    pub roc: Vec<Option<RocCurve>>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { s / n as f64 }
}

/// Full report for one set of predictions; `scores` are the per-class vote
/// fractions used for ROC.
pub fn evaluate(
    y_true: &[usize],
    y_pred: &[usize],
    scores: &[Vec<f64>],
    class_names: &[&str],
    averaging: Averaging,
) -> Result<MetricsReport> {
    let n_classes = class_names.len();
    let cm = confusion(y_true, y_pred, n_classes)?;
    let roc = roc_auc_ovr(scores, y_true, n_classes)?;
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let b = binary_metrics(&cm, c).expect("class index in range");
            ClassMetrics {
                class: class_names[c].to_string(),
                accuracy: b.accuracy,
                sensitivity: b.sensitivity,
                specificity: b.specificity,
                f1: b.f1,
                mcc: b.mcc,
                auc: roc.curves[c].as_ref().map(|r| r.auc),
                undefined: b.undefined,
            }
        })
        .collect();
    let macro_avg = Summary {
        accuracy: mean(per_class.iter().map(|m| m.accuracy)),
        sensitivity: mean(per_class.iter().map(|m| m.sensitivity)),
        specificity: mean(per_class.iter().map(|m| m.specificity)),
        f1: mean(per_class.iter().map(|m| m.f1)),
        mcc: mean(per_class.iter().map(|m| m.mcc)),
        auc: roc.macro_auc,
    };
    let micro_avg = (averaging == Averaging::Micro).then(|| micro_summary(&cm, scores, y_true)).transpose()?;
    let summary = micro_avg.unwrap_or(macro_avg);
    Ok(MetricsReport {
        n_samples: y_true.len(),
        overall_accuracy: cm.overall_accuracy(),
        confusion: cm,
        averaging,
        summary,
        macro_avg,
        micro_avg,
        per_class,
        degenerate_classes: roc.degenerate.iter().map(|&c| class_names[c].to_string()).collect(),
        roc: roc.curves,
    })
}

/// Pools one-vs-rest counts (and flattened scores for AUC) over all classes.
fn micro_summary(cm: &ConfusionMatrix, scores: &[Vec<f64>], y_true: &[usize]) -> Result<Summary> {
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for c in 0..cm.n_classes {
        let (a, b, d, e) = cm.one_vs_rest(c);
        tp += a;
        fn_ += b;
        fp += d;
        tn += e;
    }
    let b = BinaryMetrics::from_counts(tp, fn_, fp, tn);
    let flat: Vec<f64> = scores.iter().flatten().copied().collect();
    let pos: Vec<bool> = y_true.iter().flat_map(|&l| (0..cm.n_classes).map(move |c| c == l)).collect();
    let auc = roc_curve(&flat, &pos)?.map(|r| r.auc);
    Ok(Summary { accuracy: b.accuracy, sensitivity: b.sensitivity, specificity: b.specificity, f1: b.f1, mcc: b.mcc, auc })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// CSV with header `fpr,tpr,threshold,class`.
pub fn roc_csv(curve: &RocCurve, class: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io { path: "<roc csv>".into(), source: std::io::Error::other(e) };
    w.write_record(["fpr", "tpr", "threshold", "class"]).map_err(csv_err)?;
    for p in &curve.points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string(), class.to_string()])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io { path: "<roc csv>".into(), source: std::io::Error::other(e.to_string()) })
}

pub fn write_roc_csv(curve: &RocCurve, class: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, roc_csv(curve, class)?).map_err(|e| Error::io(path, e))
}
