//! Stratified splitting and the k-fold cross-validation harness.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::metrics::{evaluate, Averaging, MetricsReport, Summary};
use crate::util::stream_rng;

const FOLD_STREAM: u64 = 0x464f_4c44;
const SPLIT_STREAM: u64 = 0x5350_4c54;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    /// Indices outside fold `i`, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.folds.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, f)| f.iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

fn by_class(y: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in y.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Each class is shuffled with its own stream and dealt round-robin into the
/// folds; the dealing position carries over between classes so fold totals
/// stay balanced as well.
pub fn stratified_kfold(y: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for (class, mut members) in by_class(y).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::ClassTooSmall { class, count: members.len(), k });
        }
        members.shuffle(&mut stream_rng(seed, FOLD_STREAM + class as u64));
        let len = members.len();
        for (j, idx) in members.into_iter().enumerate() {
            folds[(offset + j) % k].push(idx);
        }
        offset += len;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit { folds })
}

/// Stratified hold-out: `round(fraction * class size)` members of every
/// class go to the test side. Returns `(train, test)`, both ascending.
pub fn stratified_split(y: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Range { what: "test_fraction", value: test_fraction, min: 0.0, max: 1.0 });
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class(y).into_iter().enumerate() {
        members.shuffle(&mut stream_rng(seed, SPLIT_STREAM + class as u64));
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<MetricsReport>,
    /// Mean of the per-fold aggregate metrics.
    pub mean: Summary,
    /// Sample standard deviation across folds.
    pub std: Summary,
    pub mean_overall_accuracy: f64,
    /// Report over the concatenated out-of-fold predictions.
    pub pooled: MetricsReport,
}

fn aggregate(reports: &[MetricsReport]) -> (Summary, Summary) {
    let k = reports.len() as f64;
    let field = |f: &dyn Fn(&Summary) -> f64| {
        let vals: Vec<f64> = reports.iter().map(|r| f(&r.summary)).collect();
        let m = vals.iter().sum::<f64>() / k;
        let var = if reports.len() > 1 { vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
        (m, var.sqrt())
    };
    let (acc, acc_s) = field(&|s| s.accuracy);
    let (sens, sens_s) = field(&|s| s.sensitivity);
    let (spec, spec_s) = field(&|s| s.specificity);
    let (f1, f1_s) = field(&|s| s.f1);
    let (mcc, mcc_s) = field(&|s| s.mcc);
    let auc = if reports.iter().all(|r| r.summary.auc.is_some()) {
        let (m, s) = field(&|s| s.auc.unwrap());
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    (
        Summary { accuracy: acc, sensitivity: sens, specificity: spec, f1, mcc, auc: auc.0 },
        Summary { accuracy: acc_s, sensitivity: sens_s, specificity: spec_s, f1: f1_s, mcc: mcc_s, auc: auc.1 },
    )
}

/// Fits a forest on `k - 1` folds and scores the held-out fold, for every fold in order.
pub fn cross_validate(
    features: &[Vec<f64>],
    labels: &[usize],
    class_names: &[&str],
    config: &ForestConfig,
    k: usize,
    seed: u64,
    averaging: Averaging,
) -> Result<CvResult> {
    cross_validate_with(features, labels, class_names, config, k, seed, averaging, |_| Ok((Vec::new(), Vec::new())))
}

/// As [`cross_validate`], with `extra(train_indices)` supplying additional
/// training rows for each fold (e.g. augmented copies of the training
/// samples). Held-out folds only ever contain the original rows.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_with<F>(
    features: &[Vec<f64>],
    labels: &[usize],
    class_names: &[&str],
    config: &ForestConfig,
    k: usize,
    seed: u64,
    averaging: Averaging,
    mut extra: F,
) -> Result<CvResult>
where
    F: FnMut(&[usize]) -> Result<(Vec<Vec<f64>>, Vec<usize>)>,
{
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
    }
    let split = stratified_kfold(labels, k, seed)?;
    let n_classes = class_names.len();
    let mut reports = Vec::with_capacity(k);
    let mut pooled_true = Vec::new();
    let mut pooled_pred = Vec::new();
    let mut pooled_scores = Vec::new();
    for (i, fold) in split.folds.iter().enumerate() {
        let train = split.train_indices(i);
        let mut x: Vec<Vec<f64>> = train.iter().map(|&j| features[j].clone()).collect();
        let mut y: Vec<usize> = train.iter().map(|&j| labels[j]).collect();
        let (ex, ey) = extra(&train)?;
        x.extend(ex);
        y.extend(ey);
        let forest = Forest::fit(&x, &y, n_classes, config)?;
        let probe: Vec<Vec<f64>> = fold.iter().map(|&j| features[j].clone()).collect();
        let truth: Vec<usize> = fold.iter().map(|&j| labels[j]).collect();
        let scores = forest.predict_proba_batch(&probe)?;
        let pred = forest.predict_batch(&probe)?;
        reports.push(evaluate(&truth, &pred, &scores, class_names, averaging)?);
        pooled_true.extend(truth);
        pooled_pred.extend(pred);
        pooled_scores.extend(scores);
    }
    let (mean, std) = aggregate(&reports);
    let mean_overall_accuracy = reports.iter().map(|r| r.overall_accuracy).sum::<f64>() / k as f64;
    let pooled = evaluate(&pooled_true, &pooled_pred, &pooled_scores, class_names, averaging)?;
    Ok(CvResult { folds: reports, mean, std, mean_overall_accuracy, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_folds_of_two() {
        let s = stratified_kfold(&[0; 10], 5, 1).unwrap();
        assert!(s.folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn large_balanced_folds() {
        let y: Vec<usize> = (0..1500).map(|i| i / 500).collect();
        let s = stratified_kfold(&y, 5, 7).unwrap();
        for f in &s.folds {
            for c in 0..3 {
                assert_eq!(f.iter().filter(|&&i| y[i] == c).count(), 100);
            }
        }
        assert_eq!(s, stratified_kfold(&y, 5, 7).unwrap());
        assert_ne!(s, stratified_kfold(&y, 5, 8).unwrap());
    }

    #[test]
    fn too_small_class() {
        assert!(matches!(stratified_kfold(&[0, 0, 0, 1, 1], 3, 0), Err(Error::ClassTooSmall { class: 1, count: 2, k: 3 })));
    }

    #[test]
    fn hold_out_split() {
        let y: Vec<usize> = (0..180).map(|i| i / 60).collect();
        let (train, test) = stratified_split(&y, 0.2, 3).unwrap();
        assert_eq!(test.len(), 36);
        assert_eq!(train.len(), 144);
        for c in 0..3 {
            assert_eq!(test.iter().filter(|&&i| y[i] == c).count(), 12);
        }
        assert!(stratified_split(&y, 1.0, 3).is_err());
        assert_eq!(stratified_split(&y, 0.0, 3).unwrap().1.len(), 0);
    }

    #[test]
    fn leave_one_out_runs() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![(i / 3) as f64 * 10.0 + (i % 3) as f64]).collect();
        let y: Vec<usize> = (0..9).map(|i| i / 3).collect();
        let cfg = ForestConfig { n_trees: 10, mtry: 1, ..Default::default() };
        let r = cross_validate(&x, &y, &["a", "b", "c"], &cfg, 3, 0, Averaging::Macro).unwrap();
        assert_eq!(r.folds.len(), 3);
        assert_eq!(r.pooled.n_samples, 9);
        // k = n: one sample per fold.
        let r = cross_validate(&x, &[0; 9], &["a", "b", "c"], &cfg, 9, 0, Averaging::Macro).unwrap();
        assert_eq!(r.folds.len(), 9);
        assert!(r.folds.iter().all(|f| f.n_samples == 1));
        assert_eq!(r.mean_overall_accuracy, 1.0);
    }
}
