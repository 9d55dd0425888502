//! Run configuration (TOML) and the named ablation configurations.
//!
//! ```toml
//! name = "proposed"
//! seed = 0
//! weights = "weights/tinycnn.mcgw"
//! tap = "gap"
//! test_fraction = 0.2
//! folds = 5
//! averaging = "macro"
//!
//! [paths.hsv_fundus]
//! sigmas = [1.0, 4.0]
//! attention = true
//!
//! [forest]
//! n_trees = 1000
//! mtry = 10
//!
//! [augment]
//! mode = "train_only"
//! per_class = 100
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::PathId;
use crate::backbone::TapPoint;
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::metrics::Averaging;
use crate::scale_space::{validate_sigmas, DEFAULT_SIGMAS};
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "yes")]
    pub attention: bool,
    /// `MCGW` file with `wq`/`wk`/`wv`; identity projections when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_weights: Option<PathBuf>,
}

fn default_sigmas() -> Vec<f64> {
    DEFAULT_SIGMAS.to_vec()
}

fn yes() -> bool {
    true
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { sigmas: default_sigmas(), attention: true, attention_weights: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Use the manifest as given.
    None,
    /// Grow only the training side of every split, from its own sources.
    #[default]
    TrainOnly,
    /// Grow the whole manifest first, then split.
    BeforeSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    /// Target pairs per class on the side being augmented; 0 turns
    /// augmentation off.
    pub per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Seed for splitting and augmentation.
    pub seed: u64,
    pub weights: Option<PathBuf>,
    pub tap: TapPoint,
    pub paths: BTreeMap<PathId, PathConfig>,
    pub forest: ForestConfig,
    pub test_fraction: f64,
    pub folds: usize,
    pub averaging: Averaging,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "proposed".into(),
            seed: 0,
            weights: None,
            tap: TapPoint::Gap,
            paths: PathId::CANONICAL.into_iter().map(|p| (p, PathConfig::default())).collect(),
            forest: ForestConfig::default(),
            test_fraction: 0.2,
            folds: 5,
            averaging: Averaging::Macro,
            augment: AugmentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative file paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(w) = cfg.weights.as_mut() {
            resolve(w);
        }
        for pc in cfg.paths.values_mut() {
            if let Some(w) = pc.attention_weights.as_mut() {
                resolve(w);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::EmptyPathList);
        }
        for pc in self.paths.values() {
            validate_sigmas(&pc.sigmas)?;
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Range { what: "test_fraction", value: self.test_fraction, min: 0.0, max: 1.0 });
        }
        self.forest.validate()
    }

    /// Enabled paths in canonical fusion order.
    pub fn enabled_paths(&self) -> Vec<PathId> {
        self.paths.keys().copied().collect()
    }

    /// Length of the fused vector for backbone dimension `d`.
    pub fn fused_dim(&self, d: usize) -> usize {
        self.paths.values().map(|pc| (1 + usize::from(pc.attention)) * pc.sigmas.len() * d).sum()
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// One row of the single- vs multi-modality comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationSpec {
    pub name: &'static str,
    pub label: &'static str,
    pub paths: &'static [PathId],
    pub sigmas: &'static [f64],
}

use PathId::{GrayOct as O, HsvFundus as H, YCbCrFundus as Y};

const MULTI: &[f64] = &DEFAULT_SIGMAS;

pub const ABLATIONS: [AblationSpec; 16] = [
    AblationSpec { name: "hsv_s1", label: "HSV fundus (σ=1)", paths: &[H], sigmas: &[1.0] },
    AblationSpec { name: "ycbcr_s1", label: "YCbCr fundus (σ=1)", paths: &[Y], sigmas: &[1.0] },
    AblationSpec { name: "hsv_multiscale", label: "HSV fundus multiscale", paths: &[H], sigmas: MULTI },
    AblationSpec { name: "ycbcr_multiscale", label: "YCbCr fundus multiscale", paths: &[Y], sigmas: MULTI },
    AblationSpec { name: "oct_s1", label: "OCT (σ=1)", paths: &[O], sigmas: &[1.0] },
    AblationSpec { name: "oct_s4", label: "OCT (σ=4)", paths: &[O], sigmas: &[4.0] },
    AblationSpec { name: "oct_multiscale", label: "OCT multiscale", paths: &[O], sigmas: MULTI },
    AblationSpec { name: "ycbcr_hsv_s1", label: "YCbCr+HSV fundus (σ=1)", paths: &[Y, H], sigmas: &[1.0] },
    AblationSpec { name: "ycbcr_hsv_s4", label: "YCbCr+HSV fundus (σ=4)", paths: &[Y, H], sigmas: &[4.0] },
    AblationSpec { name: "ycbcr_oct_s1", label: "YCbCr fundus+OCT (σ=1)", paths: &[Y, O], sigmas: &[1.0] },
    AblationSpec { name: "ycbcr_oct_s4", label: "YCbCr fundus+OCT (σ=4)", paths: &[Y, O], sigmas: &[4.0] },
    AblationSpec { name: "hsv_oct_s1", label: "HSV fundus+OCT (σ=1)", paths: &[H, O], sigmas: &[1.0] },
    AblationSpec { name: "hsv_oct_s4", label: "HSV fundus+OCT (σ=4)", paths: &[H, O], sigmas: &[4.0] },
    AblationSpec { name: "hsv_ycbcr_oct_s1", label: "HSV+YCbCr fundus+OCT (σ=1)", paths: &[H, Y, O], sigmas: &[1.0] },
    AblationSpec { name: "hsv_ycbcr_oct_s4", label: "HSV+YCbCr fundus+OCT (σ=4)", paths: &[H, Y, O], sigmas: &[4.0] },
    AblationSpec { name: "proposed", label: "Proposed (all paths, multiscale, attention)", paths: &[H, Y, O], sigmas: MULTI },
];

impl AblationSpec {
    pub fn find(name: &str) -> Result<&'static AblationSpec> {
        ABLATIONS
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Config(format!("unknown ablation config {name:?}")))
    }

    /// `true` when every path belongs to one modality.
    pub fn single_modality(&self) -> bool {
        self.paths.iter().all(|&p| p == O) || self.paths.iter().all(|&p| p != O)
    }

    /// `base` with its path set replaced; per-path attention weights carry over.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let paths = self
            .paths
            .iter()
            .map(|&p| {
                let attention_weights = base.paths.get(&p).and_then(|pc| pc.attention_weights.clone());
                (p, PathConfig { sigmas: self.sigmas.to_vec(), attention: true, attention_weights })
            })
            .collect();
        RunConfig { name: self.name.to_string(), paths, ..base.clone() }
    }
}
