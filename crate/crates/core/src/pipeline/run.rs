//! End-to-end orchestration: image loading, per-path encoding, fusion,
//! split/cross-validation and artifact emission.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{AugmentMode, RunConfig};
use crate::attention::{global_fuse, path_fuse, self_attention, AttentionParams, FusedVector, PathEmbedding, PathId, TokenMatrix};
use crate::augment::{apply, augmented_id, pair_params, plan_augmentation};
use crate::backbone::cache::FeatureCache;
use crate::backbone::{extract_features_at, CnnModel, TapPoint, WeightFile, INPUT_SIZE};
use crate::cv::{cross_validate_with, stratified_split, CvResult};
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::imageio::{load_image, replicate_gray, resize_bilinear, rgb_to_gray, rgb_to_hsv, rgb_to_ycbcr, ColorSpace, Image};
use crate::manifest::{AmdClass, AugmentParams, Manifest, Record};
use crate::metrics::{evaluate, write_roc_csv, MetricsReport};
use crate::scale_space::gaussian_blur;
use crate::util::sha256_hex;

/// Environment variable that overrides the feature-cache directory.
pub const CACHE_ENV: &str = "MCGAEC_CACHE_DIR";

/// Steps applied to every image before the backbone, in order.
pub const PREPROCESSING: [&str; 3] = ["resize_bilinear_224", "color_convert", "gaussian_blur"];

const PREPROCESSING_VERSION: &str = "1";

pub fn class_names() -> Vec<&'static str> {
    AmdClass::ALL.iter().map(|c| c.as_str()).collect()
}

#[derive(Debug, Clone)]
pub enum ImageSource {
    File(PathBuf),
    Augmented { path: PathBuf, params: AugmentParams },
}

impl ImageSource {
    fn file(&self) -> &Path {
        match self {
            ImageSource::File(p) | ImageSource::Augmented { path: p, .. } => p,
        }
    }

    fn load(&self) -> Result<Image> {
        match self {
            ImageSource::File(p) => load_image(p),
            ImageSource::Augmented { path, params } => apply(&load_image(path)?, params),
        }
    }

    /// `<sample id>@<digest of the source file>`, so edited or regenerated
    /// files never hit stale cache entries.
    fn cache_id(&self, sample_id: &str) -> Result<String> {
        let path = self.file();
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Ok(format!("{sample_id}@{}", &sha256_hex(&bytes)[..16]))
    }
}

/// One fundus/OCT pair as seen by the extractor.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub fundus: ImageSource,
    pub oct: ImageSource,
}

impl Sample {
    pub fn from_record(r: &Record) -> Self {
        Sample {
            id: r.sample_id.clone(),
            label: r.label.index(),
            fundus: ImageSource::File(r.fundus_path.clone()),
            oct: ImageSource::File(r.oct_path.clone()),
        }
    }

    /// Augmented copy of `source`. The id is `<source>_aug<copy>#s<seed>`.
    pub fn augmented(source: &Record, copy: usize, seed: u64) -> Self {
        let (fp, op) = pair_params(seed, &source.sample_id, copy);
        Sample {
            id: format!("{}#s{seed}", augmented_id(&source.sample_id, copy)),
            label: source.label.index(),
            fundus: ImageSource::Augmented { path: source.fundus_path.clone(), params: fp },
            oct: ImageSource::Augmented { path: source.oct_path.clone(), params: op },
        }
    }
}

/// Backbone outputs of one sample, keyed by `(path, sigma bits)`.
pub type SampleFeatures = HashMap<(PathId, u64), Vec<f32>>;

/// Path image at backbone resolution, before blurring.
pub fn encode_path(path: PathId, img: &Image) -> Result<Image> {
    let resized = resize_bilinear(img, INPUT_SIZE, INPUT_SIZE)?;
    match path {
        PathId::GrayOct => rgb_to_gray(&resized),
        fundus => {
            let rgb = if resized.space() == ColorSpace::Gray { replicate_gray(&resized) } else { resized };
            match fundus {
                PathId::HsvFundus => rgb_to_hsv(&rgb),
                _ => rgb_to_ycbcr(&rgb),
            }
        }
    }
}

/// Frozen backbone plus the persistent feature cache.
pub struct Extractor {
    model: CnnModel,
    tap: TapPoint,
    weights_sha256: String,
    cache: FeatureCache,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Extractor {
    pub fn open(weights: &Path, tap: TapPoint, cache_dir: &Path) -> Result<Self> {
        let bytes = std::fs::read(weights).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(weights.to_path_buf())
            } else {
                Error::io(weights, e)
            }
        })?;
        let model = CnnModel::from_weight_file(&WeightFile::from_bytes(&bytes)?)?;
        let weights_sha256 = sha256_hex(&bytes);
        let key = sha256_hex(format!("{weights_sha256}|{tap:?}|{PREPROCESSING_VERSION}").as_bytes());
        let cache = FeatureCache::open(cache_dir.join(format!("features-{}.mcgc", &key[..16])), &key)?;
        Ok(Extractor { model, tap, weights_sha256, cache, hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) })
    }

    pub fn model(&self) -> &CnnModel {
        &self.model
    }

    pub fn feature_dim(&self) -> usize {
        self.model.feature_dim(self.tap)
    }

    pub fn weights_sha256(&self) -> &str {
        &self.weights_sha256
    }

    pub fn cache_path(&self) -> &Path {
        self.cache.path()
    }

    /// `(hits, misses)` since this extractor was opened.
    pub fn cache_stats(&self) -> (usize, usize) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    /// Features of `sample` for every `(path, sigma)` in `needs`, computing
    /// and caching whatever is missing.
    pub fn features(&self, sample: &Sample, needs: &[(PathId, Vec<f64>)]) -> Result<SampleFeatures> {
        self.features_inner(sample, needs).map_err(|e| e.in_sample(&sample.id))
    }

    fn features_inner(&self, sample: &Sample, needs: &[(PathId, Vec<f64>)]) -> Result<SampleFeatures> {
        let mut out = SampleFeatures::new();
        let mut fundus: Option<Image> = None;
        let mut oct: Option<Image> = None;
        let (mut fundus_id, mut oct_id) = (None, None);
        for (path, sigmas) in needs {
            let is_oct = *path == PathId::GrayOct;
            let (id_slot, source) = if is_oct { (&mut oct_id, &sample.oct) } else { (&mut fundus_id, &sample.fundus) };
            if id_slot.is_none() {
                *id_slot = Some(source.cache_id(&sample.id)?);
            }
            let cache_id = id_slot.clone().unwrap();
            let mut encoded: Option<Image> = None;
            for &sigma in sigmas {
                let key = (*path, sigma.to_bits());
                if out.contains_key(&key) {
                    continue;
                }
                if let Some(v) = self.cache.get(&cache_id, *path, sigma) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    out.insert(key, v);
                    continue;
                }
                self.misses.fetch_add(1, Ordering::Relaxed);
                if encoded.is_none() {
                    let src = if is_oct { &mut oct } else { &mut fundus };
                    if src.is_none() {
                        *src = Some(source.load()?);
                    }
                    encoded = Some(encode_path(*path, src.as_ref().unwrap())?);
                }
                let blurred = gaussian_blur(encoded.as_ref().unwrap(), sigma)?;
                let values = extract_features_at(&self.model, &blurred, self.tap)?.values;
                self.cache.insert(&cache_id, *path, sigma, &values)?;
                out.insert(key, values);
            }
        }
        Ok(out)
    }

    pub fn flush(&self) -> Result<()> {
        self.cache.flush()
    }
}

/// Per-path attention parameters resolved for a config.
pub struct Encoder {
    config: RunConfig,
    attention: HashMap<PathId, AttentionParams>,
}

impl Encoder {
    pub fn new(config: &RunConfig, d: usize) -> Result<Self> {
        let mut attention = HashMap::new();
        for (&p, pc) in &config.paths {
            if pc.attention {
                let params = match &pc.attention_weights {
                    Some(w) => AttentionParams::load(w)?,
                    None => AttentionParams::identity(d),
                };
                if params.dim() != d {
                    return Err(Error::DimensionMismatch(format!("{p} attention is {}-dim, backbone is {d}-dim", params.dim())));
                }
                attention.insert(p, params);
            }
        }
        Ok(Encoder { config: config.clone(), attention })
    }

    pub fn needs(&self) -> Vec<(PathId, Vec<f64>)> {
        self.config.paths.iter().map(|(&p, pc)| (p, pc.sigmas.clone())).collect()
    }

    /// Tokens per path, self-attention, path fusion, then global fusion.
    pub fn fuse(&self, features: &SampleFeatures) -> Result<FusedVector> {
        let mut paths = Vec::with_capacity(self.config.paths.len());
        for (&p, pc) in &self.config.paths {
            let rows = pc
                .sigmas
                .iter()
                .map(|s| {
                    features
                        .get(&(p, s.to_bits()))
                        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
                        .ok_or_else(|| Error::DimensionMismatch(format!("missing {p} features at sigma {s}")))
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let tokens = TokenMatrix::from_rows(rows)?;
            let embedding = match self.attention.get(&p) {
                Some(params) => path_fuse(p, &tokens, &self_attention(&tokens, params)?)?,
                None => PathEmbedding { path: p, values: tokens.data().to_vec() },
            };
            paths.push(embedding);
        }
        global_fuse(paths)
    }
}

/// Extracts and fuses `samples` in parallel; rows come back in input order.
pub fn encode_samples(extractor: &Extractor, encoder: &Encoder, samples: &[Sample]) -> Result<Vec<FusedVector>> {
    let needs = encoder.needs();
    samples
        .par_iter()
        .map(|s| encoder.fuse(&extractor.features(s, &needs)?).map_err(|e| e.in_sample(&s.id)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockMeta {
    pub path: PathId,
    pub offset: usize,
    pub len: usize,
    pub sigmas: Vec<f64>,
    pub attention: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub config_name: String,
    pub config_hash: String,
    pub seed: u64,
    pub forest_seed: u64,
    pub canonical_path_order: Vec<PathId>,
    pub enabled_paths: Vec<PathId>,
    pub preprocessing: Vec<&'static str>,
    pub topology: String,
    pub tap: TapPoint,
    pub weights_sha256: String,
    pub backbone_dim: usize,
    pub feature_dim: usize,
    pub feature_layout: Vec<BlockMeta>,
    pub augment_mode: AugmentMode,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub config_name: String,
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub cv: CvResult,
    pub test: Option<MetricsReport>,
}

impl RunMetrics {
    /// Mean of the per-fold summaries.
    pub fn headline(&self) -> crate::metrics::Summary {
        self.cv.mean
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub meta: RunMeta,
    pub forest: Forest,
}

/// Cache directory: explicit value, then `MCGAEC_CACHE_DIR`, then `<out>/cache`.
pub fn resolve_cache_dir(explicit: Option<&Path>, out_dir: &Path) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| out_dir.join("cache"))
}

pub fn open_extractor(config: &RunConfig, cache_dir: &Path) -> Result<Extractor> {
    let weights = config.weights.as_deref().ok_or_else(|| Error::Config("no weight file configured".into()))?;
    Extractor::open(weights, config.tap, cache_dir)
}

/// Augmented training samples that raise every class of `subset` to the
/// configured target (or to the largest class, whichever is more).
fn augmented_for(records: &[Record], subset: &[usize], config: &RunConfig) -> Result<Vec<Sample>> {
    if config.augment.per_class == 0 || config.augment.mode == AugmentMode::None {
        return Ok(Vec::new());
    }
    let largest = AmdClass::ALL
        .iter()
        .map(|&c| subset.iter().filter(|&&i| records[i].label == c).count())
        .max()
        .unwrap_or(0);
    let target = config.augment.per_class.max(largest);
    let plan = plan_augmentation(records, subset, target)?;
    Ok(plan.iter().map(|p| Sample::augmented(&records[p.source], p.copy, config.seed)).collect())
}

fn rows(vs: Vec<FusedVector>) -> Vec<Vec<f64>> {
    vs.into_iter().map(|v| v.values).collect()
}

/// Runs one configuration end to end.
pub fn run_pipeline(manifest: &Manifest, config: &RunConfig, extractor: &Extractor) -> Result<RunOutput> {
    config.validate()?;
    manifest.validate()?;
    let d = extractor.feature_dim();
    let encoder = Encoder::new(config, d)?;
    let names = class_names();

    let records = &manifest.records;
    let mut samples: Vec<Sample> = records.iter().map(Sample::from_record).collect();
    if config.augment.mode == AugmentMode::BeforeSplit {
        let all: Vec<usize> = (0..records.len()).collect();
        samples.extend(augmented_for(records, &all, config)?);
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (train, test) = stratified_split(&labels, config.test_fraction, config.seed)?;

    let fused = encode_samples(extractor, &encoder, &samples)?;
    let feature_layout = fused.first().map_or_else(Vec::new, |f| {
        f.blocks
            .iter()
            .map(|&(path, offset, len)| BlockMeta {
                path,
                offset,
                len,
                sigmas: config.paths[&path].sigmas.clone(),
                attention: config.paths[&path].attention,
            })
            .collect()
    });
    let x = rows(fused);
    let feature_dim = x.first().map_or(0, Vec::len);

    let x_train: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let train_only = config.augment.mode == AugmentMode::TrainOnly;
    let extra_rows = |subset: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        if !train_only {
            return Ok((Vec::new(), Vec::new()));
        }
        let record_idx: Vec<usize> = subset.iter().map(|&j| train[j]).collect();
        let extra = augmented_for(records, &record_idx, config)?;
        let y = extra.iter().map(|s| s.label).collect();
        Ok((rows(encode_samples(extractor, &encoder, &extra)?), y))
    };
    let cv = cross_validate_with(&x_train, &y_train, &names, &config.forest, config.folds, config.seed, config.averaging, extra_rows)?;

    let (mut fx, mut fy) = (x_train, y_train);
    let (ex, ey) = extra_rows(&(0..train.len()).collect::<Vec<_>>())?;
    fx.extend(ex);
    fy.extend(ey);
    let forest = Forest::fit(&fx, &fy, names.len(), &config.forest)?;
    let test_report = if test.is_empty() {
        None
    } else {
        let probe: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let scores = forest.predict_proba_batch(&probe)?;
        let pred = forest.predict_batch(&probe)?;
        Some(evaluate(&truth, &pred, &scores, &names, config.averaging)?)
    };
    extractor.flush()?;

    let meta = RunMeta {
        config_name: config.name.clone(),
        config_hash: config.hash(),
        seed: config.seed,
        forest_seed: config.forest.seed,
        canonical_path_order: PathId::CANONICAL.to_vec(),
        enabled_paths: config.enabled_paths(),
        preprocessing: PREPROCESSING.to_vec(),
        topology: extractor.model().topology().as_str().to_string(),
        tap: config.tap,
        weights_sha256: extractor.weights_sha256().to_string(),
        backbone_dim: d,
        feature_dim,
        feature_layout,
        augment_mode: config.augment.mode,
        n_samples: samples.len(),
        n_train: train.len(),
        n_test: test.len(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let metrics = RunMetrics {
        config_name: config.name.clone(),
        feature_dim,
        n_train: train.len(),
        n_test: test.len(),
        cv,
        test: test_report,
    };
    Ok(RunOutput { metrics, meta, forest })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One ROC CSV per class (`roc_<class>.csv`) with a defined curve.
pub fn write_roc_files(report: &MetricsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (class, curve) in AmdClass::ALL.iter().zip(&report.roc) {
        if let Some(curve) = curve {
            let path = out_dir.join(format!("roc_{}.csv", class.slug()));
            write_roc_csv(curve, class.as_str(), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

impl RunOutput {
    /// Writes `metrics.json`, `run_meta.json`, `forest.bin` and the ROC CSVs.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        write_json(&out_dir.join("metrics.json"), &self.metrics)?;
        write_json(&out_dir.join("run_meta.json"), &self.meta)?;
        self.forest.save(out_dir.join("forest.bin"))?;
        let roc_source = self.metrics.test.as_ref().unwrap_or(&self.metrics.cv.pooled);
        write_roc_files(roc_source, out_dir)?;
        Ok(())
    }
}

/// Populates the feature cache for every sample of `manifest`.
pub fn extract_manifest(manifest: &Manifest, config: &RunConfig, extractor: &Extractor) -> Result<usize> {
    let encoder = Encoder::new(config, extractor.feature_dim())?;
    let samples: Vec<Sample> = manifest.records.iter().map(Sample::from_record).collect();
    let needs = encoder.needs();
    samples.par_iter().try_for_each(|s| extractor.features(s, &needs).map(|_| ()))?;
    extractor.flush()?;
    Ok(samples.len())
}

/// Scores `manifest` with a trained forest.
pub fn evaluate_manifest(manifest: &Manifest, config: &RunConfig, extractor: &Extractor, forest: &Forest) -> Result<MetricsReport> {
    let encoder = Encoder::new(config, extractor.feature_dim())?;
    let samples: Vec<Sample> = manifest.records.iter().map(Sample::from_record).collect();
    let x = rows(encode_samples(extractor, &encoder, &samples)?);
    extractor.flush()?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let scores = forest.predict_proba_batch(&x)?;
    let pred = forest.predict_batch(&x)?;
    evaluate(&truth, &pred, &scores, &class_names(), config.averaging)
}

pub fn write_report(report: &MetricsReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&out_dir.join("metrics.json"), report)?;
    write_roc_files(report, out_dir)?;
    Ok(())
}
