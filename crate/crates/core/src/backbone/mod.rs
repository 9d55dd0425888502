//! Frozen CNN feature extraction.
//!
//! Two topologies are supported: VGG16 (13 conv layers in five blocks) and
//! TinyCNN (two conv layers with one pool in between), a small stand-in that
//! keeps the full test suite fast. Features are tapped after the last conv
//! block by global average pooling, or optionally after `fc7` for VGG16.

pub mod cache;
pub mod ops;
pub mod weights;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{PathId, TokenMatrix};
use crate::error::{Error, Result};
use crate::imageio::{replicate_gray, Image};
use crate::scale_space::ScaleStack;
use crate::util::stream_rng;
use ops::{conv2d, global_avg_pool, linear, maxpool2, relu_inplace, Tensor3};
pub use weights::{LayerKind, WeightFile, WeightTensor};

/// Spatial size every backbone input must have.
pub const INPUT_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    #[serde(rename = "VGG16")]
    Vgg16,
    #[serde(rename = "TinyCNN")]
    TinyCnn,
}

impl Topology {
    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Vgg16 => "VGG16",
            Topology::TinyCnn => "TinyCNN",
        }
    }

    /// Conv layers as `(name, c_out)`, with `None` marking a 2x2 max pool.
    fn plan(self) -> &'static [Option<(&'static str, usize)>] {
        const VGG16: &[Option<(&str, usize)>] = &[
            Some(("conv1_1", 64)),
            Some(("conv1_2", 64)),
            None,
            Some(("conv2_1", 128)),
            Some(("conv2_2", 128)),
            None,
            Some(("conv3_1", 256)),
            Some(("conv3_2", 256)),
            Some(("conv3_3", 256)),
            None,
            Some(("conv4_1", 512)),
            Some(("conv4_2", 512)),
            Some(("conv4_3", 512)),
            None,
            Some(("conv5_1", 512)),
            Some(("conv5_2", 512)),
            Some(("conv5_3", 512)),
            None,
        ];
        const TINY: &[Option<(&str, usize)>] = &[Some(("conv1", 8)), None, Some(("conv2", 32))];
        match self {
            Topology::Vgg16 => VGG16,
            Topology::TinyCnn => TINY,
        }
    }

    /// Classifier layers that may follow the conv stack, as `(name, n_out, n_in)`.
    fn classifier(self) -> &'static [(&'static str, usize, usize)] {
        match self {
            Topology::Vgg16 => &[("fc6", 4096, 512 * 7 * 7), ("fc7", 4096, 4096), ("fc8", 1000, 4096)],
            Topology::TinyCnn => &[],
        }
    }

    pub fn gap_dim(self) -> usize {
        self.plan().iter().rev().find_map(|s| s.map(|(_, c)| c)).unwrap()
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "VGG16" => Ok(Topology::Vgg16),
            "TinyCNN" => Ok(Topology::TinyCnn),
            other => Err(Error::ShapeMismatch(format!("unknown topology {other:?}"))),
        }
    }
}

/// Layer whose activations become the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    /// Global average pool over the last conv block.
    #[default]
    Gap,
    /// Output of `fc7` after ReLU (VGG16 files that carry `fc6`/`fc7`).
    Fc7,
}

#[derive(Debug, Clone)]
enum Stage {
    Conv { name: String, weights: Vec<f32>, bias: Vec<f32> },
    Pool,
}

#[derive(Debug, Clone)]
struct Dense {
    weights: Vec<f32>,
    bias: Vec<f32>,
}

/// A loaded, immutable backbone.
#[derive(Debug, Clone)]
pub struct CnnModel {
    topology: Topology,
    stages: Vec<Stage>,
    classifier: Vec<Dense>,
    norm_mean: [f32; 3],
    norm_std: [f32; 3],
}

impl fmt::Display for CnnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} conv layers)", self.topology.as_str(), self.conv_count())
    }
}

impl CnnModel {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::read(path)?)
    }

    /// Validates a weight container against its declared topology.
    pub fn from_weight_file(wf: &WeightFile) -> Result<Self> {
        let topology: Topology = wf.topology.parse()?;
        let norm = |v: &[f32], what: &str| -> Result<[f32; 3]> {
            v.try_into().map_err(|_| Error::ShapeMismatch(format!("{what} must have 3 channels, has {}", v.len())))
        };
        let norm_mean = norm(&wf.norm_mean, "normalization mean")?;
        let norm_std = norm(&wf.norm_std, "normalization std")?;
        if norm_mean.iter().chain(&norm_std).any(|v| !v.is_finite()) || norm_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::NonFiniteWeight("input normalization".into()));
        }

        let mut layers = wf.layers.iter();
        let mut stages = Vec::new();
        let mut c_in = 3;
        for step in topology.plan() {
            let Some((name, c_out)) = *step else {
                stages.push(Stage::Pool);
                continue;
            };
            let t = layers
                .next()
                .ok_or_else(|| Error::ShapeMismatch(format!("{} file ends before {name}", topology.as_str())))?;
            if t.name != name || t.kind != LayerKind::Conv {
                return Err(Error::ShapeMismatch(format!("expected conv layer {name}, found {:?} {}", t.kind, t.name)));
            }
            if t.shape != [c_out, c_in, 3, 3] || t.bias_shape != [c_out] {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: shape {:?} bias {:?}, expected [{c_out}, {c_in}, 3, 3] bias [{c_out}]",
                    t.shape, t.bias_shape
                )));
            }
            check_finite(t)?;
            stages.push(Stage::Conv { name: name.to_string(), weights: t.values.clone(), bias: t.bias.clone() });
            c_in = c_out;
        }

        let mut classifier = Vec::new();
        let mut expected = topology.classifier().iter();
        for t in layers {
            let Some(&(name, n_out, n_in)) = expected.next() else {
                return Err(Error::ShapeMismatch(format!("unexpected layer {} after the {} stack", t.name, topology.as_str())));
            };
            if t.name != name || t.kind != LayerKind::Linear || t.shape != [n_out, n_in] || t.bias_shape != [n_out] {
                return Err(Error::ShapeMismatch(format!(
                    "expected linear {name} [{n_out}, {n_in}], found {} {:?}",
                    t.name, t.shape
                )));
            }
            check_finite(t)?;
            classifier.push(Dense { weights: t.values.clone(), bias: t.bias.clone() });
        }
        Ok(CnnModel { topology, stages, classifier, norm_mean, norm_std })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn conv_count(&self) -> usize {
        self.stages.iter().filter(|s| matches!(s, Stage::Conv { .. })).count()
    }

    pub fn norm_mean(&self) -> [f32; 3] {
        self.norm_mean
    }

    pub fn norm_std(&self) -> [f32; 3] {
        self.norm_std
    }

    pub fn feature_dim(&self, tap: TapPoint) -> usize {
        match tap {
            TapPoint::Gap => self.topology.gap_dim(),
            TapPoint::Fc7 => 4096,
        }
    }

    /// Normalized CHW input tensor for an image (gray is replicated to 3 channels).
    pub fn input_tensor(&self, img: &Image) -> Result<Tensor3> {
        if img.width() != INPUT_SIZE || img.height() != INPUT_SIZE {
            return Err(Error::WrongInputSize { expected: INPUT_SIZE, width: img.width(), height: img.height() });
        }
        let img = replicate_gray(img);
        let n = INPUT_SIZE * INPUT_SIZE;
        let mut data = vec![0.0f32; 3 * n];
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = (px[c] as f32 - self.norm_mean[c]) / self.norm_std[c];
            }
        }
        Tensor3::from_vec(3, INPUT_SIZE, INPUT_SIZE, data)
    }

    /// Runs the conv stack on a prepared tensor. `hook` sees every
    /// intermediate activation with the name of the stage that produced it.
    pub fn forward(&self, input: Tensor3, tap: TapPoint, hook: &mut dyn FnMut(&str, &Tensor3)) -> Result<Vec<f32>> {
        let mut x = input;
        let mut pools = 0;
        for stage in &self.stages {
            match stage {
                Stage::Conv { name, weights, bias } => {
                    x = conv2d(&x, weights, bias)?;
                    relu_inplace(&mut x);
                    hook(name, &x);
                }
                Stage::Pool => {
                    let before = x.height;
                    x = maxpool2(&x);
                    pools += 1;
                    if self.topology == Topology::Vgg16 && (x.height != before / 2 || x.height != INPUT_SIZE >> pools) {
                        return Err(Error::ShapeMismatch(format!(
                            "pool {pools} produced {}x{}, expected {}",
                            x.height,
                            x.width,
                            INPUT_SIZE >> pools
                        )));
                    }
                    hook("pool", &x);
                }
            }
        }
        match tap {
            TapPoint::Gap => Ok(global_avg_pool(&x)),
            TapPoint::Fc7 => {
                if self.classifier.len() < 2 {
                    return Err(Error::ShapeMismatch("fc7 tap needs fc6 and fc7 weights".into()));
                }
                let mut v = x.data;
                for dense in &self.classifier[..2] {
                    v = linear(&v, &dense.weights, &dense.bias)?;
                    for a in &mut v {
                        *a = a.max(0.0);
                    }
                }
                Ok(v)
            }
        }
    }
}

fn check_finite(t: &WeightTensor) -> Result<()> {
    if t.values.iter().chain(&t.bias).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteWeight(t.name.clone()))
    }
}

/// Backbone embedding of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub provenance: Option<(PathId, f64)>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn extract_features(model: &CnnModel, img: &Image) -> Result<FeatureVector> {
    extract_features_at(model, img, TapPoint::Gap)
}

pub fn extract_features_at(model: &CnnModel, img: &Image, tap: TapPoint) -> Result<FeatureVector> {
    let input = model.input_tensor(img)?;
    let values = model.forward(input, tap, &mut |_, _| {})?;
    Ok(FeatureVector { values, provenance: None })
}

/// One token per scale, in sigma order.
pub fn extract_path_features(stack: &ScaleStack, model: &CnnModel) -> Result<TokenMatrix> {
    let rows = stack
        .images()
        .iter()
        .map(|img| extract_features(model, img).map(|f| f.values.iter().map(|&v| f64::from(v)).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    TokenMatrix::from_rows(rows)
}

/// He-initialized weights for `topology`, deterministic in `seed`. Intended
/// for tests and smoke runs; no classifier layers.
pub fn random_weights(topology: Topology, seed: u64) -> WeightFile {
    let mut layers = Vec::new();
    let mut c_in = 3;
    for (i, (name, c_out)) in topology.plan().iter().flatten().enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let scale = (2.0 / (c_in * 9) as f64).sqrt();
        let values = (0..c_out * c_in * 9).map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32).collect();
        let bias = (0..*c_out).map(|_| (rng.sample::<f64, _>(StandardNormal) * 0.01) as f32).collect();
        layers.push(WeightTensor::conv(name, *c_out, c_in, values, bias));
        c_in = *c_out;
    }
    WeightFile {
        topology: topology.as_str().to_string(),
        norm_mean: vec![0.5; 3],
        norm_std: vec![0.25; 3],
        layers,
    }
}
