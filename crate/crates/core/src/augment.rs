//! Geometric and contrast augmentation, plus the dataset expander that
//! balances every class to a fixed number of pairs.
//!
//! Geometric transforms sample bilinearly with zero fill outside the source.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{load_image, save_png, Image};
use crate::manifest::{AmdClass, AugmentParams, Manifest, Provenance, Record};
use crate::util::{key_hash, stream_rng};

/// Bilinear sample with zero contribution from neighbors outside the image.
fn sample_zero(img: &Image, sx: f64, sy: f64, ch: usize) -> f64 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let (fx, fy) = (sx - x0, sy - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            img.get(x as usize, y as usize, ch)
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

fn warp(img: &Image, map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    Image::from_fn(img.width(), img.height(), img.space(), |x, y, ch| {
        let (sx, sy) = map(x as f64, y as f64);
        sample_zero(img, sx, sy, ch)
    })
}

/// Rotates counterclockwise (as displayed, y pointing down) about the pixel
/// center `((w-1)/2, (h-1)/2)`.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    warp(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
    })
}

/// Shifts content right by `dx_frac * width` and down by `dy_frac * height`.
pub fn translate(img: &Image, dx_frac: f64, dy_frac: f64) -> Result<Image> {
    for (what, v) in [("translate_x_frac", dx_frac), ("translate_y_frac", dy_frac)] {
        if !(v.abs() <= AugmentParams::TRANSLATE_RANGE) {
            return Err(Error::Range {
                what,
                value: v,
                min: -AugmentParams::TRANSLATE_RANGE,
                max: AugmentParams::TRANSLATE_RANGE,
            });
        }
    }
    if dx_frac == 0.0 && dy_frac == 0.0 {
        return Ok(img.clone());
    }
    let tx = dx_frac * img.width() as f64;
    let ty = dy_frac * img.height() as f64;
    Ok(warp(img, |x, y| (x - tx, y - ty)))
}

/// Mean-anchored contrast scaling: `mean + (1 + delta) * (v - mean)` per channel.
pub fn adjust_contrast(img: &Image, delta: f64) -> Result<Image> {
    if !(delta.abs() <= AugmentParams::CONTRAST_RANGE) {
        return Err(Error::Range {
            what: "contrast_delta",
            value: delta,
            min: -AugmentParams::CONTRAST_RANGE,
            max: AugmentParams::CONTRAST_RANGE,
        });
    }
    if delta == 0.0 {
        return Ok(img.clone());
    }
    let c = img.channels();
    let n = (img.width() * img.height()) as f64;
    let means: Vec<f64> = (0..c).map(|ch| img.plane(ch).iter().sum::<f64>() / n).collect();
    let gain = 1.0 + delta;
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = means[i % c];
            m + gain * (v - m)
        })
        .collect();
    Image::new(img.width(), img.height(), img.space(), data)
}

/// Applies rotation, then translation, then contrast.
pub fn apply(img: &Image, params: &AugmentParams) -> Result<Image> {
    params.validate()?;
    let rotated = rotate(img, params.rotation_deg);
    let shifted = translate(&rotated, params.translate_x_frac, params.translate_y_frac)?;
    adjust_contrast(&shifted, params.contrast_delta)
}

/// Uniform draw over the closed parameter ranges.
pub fn sample_params<R: Rng>(rng: &mut R, seed: u64) -> AugmentParams {
    AugmentParams {
        rotation_deg: rng.random_range(-AugmentParams::ROTATION_RANGE..=AugmentParams::ROTATION_RANGE),
        translate_x_frac: rng.random_range(-AugmentParams::TRANSLATE_RANGE..=AugmentParams::TRANSLATE_RANGE),
        translate_y_frac: rng.random_range(-AugmentParams::TRANSLATE_RANGE..=AugmentParams::TRANSLATE_RANGE),
        contrast_delta: rng.random_range(-AugmentParams::CONTRAST_RANGE..=AugmentParams::CONTRAST_RANGE),
        seed,
    }
}

/// Id of the `copy`-th augmented pair derived from `source_id`.
pub fn augmented_id(source_id: &str, copy: usize) -> String {
    format!("{source_id}_aug{copy}")
}

/// Parameters for one augmented pair. The stream depends only on
/// `(seed, source id, copy)`, never on generation order.
pub fn pair_params(seed: u64, source_id: &str, copy: usize) -> (AugmentParams, AugmentParams) {
    let mut rng = stream_rng(seed, key_hash(&augmented_id(source_id, copy)));
    let fundus = sample_params(&mut rng, seed);
    let oct = sample_params(&mut rng, seed);
    (fundus, oct)
}

/// One planned augmented pair: which source it copies and its copy index.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPair {
    pub source: usize,
    pub copy: usize,
    pub label: AmdClass,
}

/// Assigns extra pairs round-robin over each class's sources (in record
/// order) until every class holds `per_class` pairs. `indices` selects which
/// records of `records` take part.
pub fn plan_augmentation(records: &[Record], indices: &[usize], per_class: usize) -> Result<Vec<PlannedPair>> {
    let mut plan = Vec::new();
    for class in AmdClass::ALL {
        let sources: Vec<usize> = indices.iter().copied().filter(|&i| records[i].label == class).collect();
        if sources.is_empty() {
            return Err(Error::EmptyClass(class.to_string()));
        }
        if per_class < sources.len() {
            return Err(Error::Range {
                what: "per_class",
                value: per_class as f64,
                min: sources.len() as f64,
                max: f64::INFINITY,
            });
        }
        for j in 0..per_class - sources.len() {
            plan.push(PlannedPair { source: sources[j % sources.len()], copy: j / sources.len(), label: class });
        }
    }
    Ok(plan)
}

/// Renders one planned pair in memory.
pub fn render_pair(source: &Record, copy: usize, seed: u64) -> Result<(Record, Image, Image)> {
    let (fp, op) = pair_params(seed, &source.sample_id, copy);
    let fundus = apply(&load_image(&source.fundus_path)?, &fp)?;
    let oct = apply(&load_image(&source.oct_path)?, &op)?;
    let record = Record {
        sample_id: augmented_id(&source.sample_id, copy),
        fundus_path: PathBuf::new(),
        oct_path: PathBuf::new(),
        label: source.label,
        provenance: Provenance::Augmented { source_id: source.sample_id.clone(), fundus: fp, oct: op },
    };
    Ok((record, fundus, oct))
}

/// Expands every class of `manifest` to `per_class` pairs. Originals are kept
/// unmodified; augmented PNGs go under `out_dir/augmented/`.
pub fn augment_dataset(manifest: &Manifest, per_class: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    let all: Vec<usize> = (0..manifest.len()).collect();
    let plan = plan_augmentation(&manifest.records, &all, per_class)?;
    let img_dir = out_dir.join("augmented");
    if !plan.is_empty() {
        std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    }
    let generated: Vec<Record> = plan
        .par_iter()
        .map(|p| {
            let source = &manifest.records[p.source];
            let (mut record, fundus, oct) =
                render_pair(source, p.copy, seed).map_err(|e| e.in_sample(&source.sample_id))?;
            record.fundus_path = img_dir.join(format!("{}_fundus.png", record.sample_id));
            record.oct_path = img_dir.join(format!("{}_oct.png", record.sample_id));
            save_png(&fundus, &record.fundus_path)?;
            save_png(&oct, &record.oct_path)?;
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let mut records = manifest.records.clone();
    records.extend(generated);
    Manifest::new(records)
}
