//! Runs a set of named configurations under one split and tabulates them.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::{AblationSpec, RunConfig};
use super::run::{run_pipeline, Extractor};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::metrics::Summary;

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub label: String,
    pub paths: String,
    pub sigmas: String,
    pub single_modality: bool,
    pub feature_dim: usize,
    /// Cross-validation mean.
    pub cv: Summary,
    pub cv_overall_accuracy: f64,
    pub test: Option<Summary>,
}

/// Runs every named configuration derived from `base`. When `out_dir` is
/// given each run's artifacts go to `out_dir/<name>/`.
pub fn run_ablation(
    manifest: &Manifest,
    base: &RunConfig,
    names: &[&str],
    extractor: &Extractor,
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if names.is_empty() {
        return Err(Error::Config("ablation needs at least one configuration".into()));
    }
    let specs = names.iter().map(|n| AblationSpec::find(n)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let config = spec.apply(base);
        let out = run_pipeline(manifest, &config, extractor)?;
        if let Some(dir) = out_dir {
            out.write(&dir.join(spec.name))?;
        }
        rows.push(AblationRow {
            name: spec.name.to_string(),
            label: spec.label.to_string(),
            paths: spec.paths.iter().map(|p| p.as_str()).collect::<Vec<_>>().join("+"),
            sigmas: spec.sigmas.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+"),
            single_modality: spec.single_modality(),
            feature_dim: out.metrics.feature_dim,
            cv: out.metrics.cv.mean,
            cv_overall_accuracy: out.metrics.cv.mean_overall_accuracy,
            test: out.metrics.test.as_ref().map(|t| t.summary),
        });
    }
    Ok(rows)
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io { path: "ablation.csv".into(), source: std::io::Error::other(e) };
    w.write_record([
        "name", "label", "paths", "sigmas", "feature_dim", "auc", "accuracy", "sensitivity", "specificity", "f1", "mcc",
        "overall_accuracy",
    ])
    .map_err(err)?;
    for r in rows {
        let s = &r.cv;
        w.write_record([
            r.name.clone(),
            r.label.clone(),
            r.paths.clone(),
            r.sigmas.clone(),
            r.feature_dim.to_string(),
            fmt_auc(s.auc),
            format!("{:.4}", s.accuracy),
            format!("{:.4}", s.sensitivity),
            format!("{:.4}", s.specificity),
            format!("{:.4}", s.f1),
            format!("{:.4}", s.mcc),
            format!("{:.4}", r.cv_overall_accuracy),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Io { path: "ablation.csv".into(), source: std::io::Error::other(e.to_string()) })
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut md = String::from("| Method | AUC | Accuracy | Sensitivity | Specificity | F1 | MCC |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for r in rows {
        let s = &r.cv;
        let _ = writeln!(
            md,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            r.label,
            fmt_auc(s.auc),
            s.accuracy,
            s.sensitivity,
            s.specificity,
            s.f1,
            s.mcc
        );
    }
    md
}

/// Writes `ablation.csv` and `ablation.md`.
pub fn write_ablation(rows: &[AblationRow], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("ablation.csv");
    std::fs::write(&csv_path, ablation_csv(rows)?).map_err(|e| Error::io(&csv_path, e))?;
    let md_path = out_dir.join("ablation.md");
    std::fs::write(&md_path, ablation_markdown(rows)).map_err(|e| Error::io(&md_path, e))
}
