//! Hermetic synthetic dataset of fundus/OCT pairs.
//!
//! Fundus images are a textured colored disk on black: the hue band and the
//! texture frequency tell normal eyes apart from diseased ones, but look the
//! same for both disease stages. OCT images are horizontal layer stripes whose
//! thickness marks the neovascular stage only. Each modality alone therefore
//! resolves two of the three classes; the pair resolves all three.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{save_png, ColorSpace, Image};
use crate::manifest::{AmdClass, Manifest, Provenance, Record};
use crate::util::{key_hash, stream_rng};

pub const FUNDUS_SIZE: (usize, usize) = (256, 240);
pub const OCT_SIZE: (usize, usize) = (256, 160);

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Renders the pair for sample `index` of `class`.
pub fn synth_pair(class: AmdClass, index: usize, seed: u64) -> (Image, Image) {
    let mut rng = stream_rng(seed, key_hash(&format!("synth/{}/{index}", class.slug())));
    let diseased = class != AmdClass::Normal;

    let (w, h) = FUNDUS_SIZE;
    let hue = if diseased { rng.random_range(0.11..0.15) } else { rng.random_range(0.00..0.04) };
    let freq = if diseased { rng.random_range(0.18..0.24) } else { rng.random_range(0.05..0.08) };
    let angle = rng.random_range(0.0..PI);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (cx, cy) = (w as f64 / 2.0 + rng.random_range(-8.0..8.0), h as f64 / 2.0 + rng.random_range(-8.0..8.0));
    let radius = rng.random_range(0.40..0.46) * h as f64;
    let sat = rng.random_range(0.65..0.85);
    let noise: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.04..0.04)).collect();
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut fundus = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let r = (dx * dx + dy * dy).sqrt() / radius;
            if r > 1.0 {
                continue;
            }
            let t = (freq * (ca * dx + sa * dy) + phase).sin();
            let v = (0.55 + 0.25 * t) * (1.0 - 0.35 * r * r) + noise[y * w + x];
            let px = hsv_to_rgb(hue, sat, v.clamp(0.0, 1.0));
            fundus[(y * w + x) * 3..][..3].copy_from_slice(&px);
        }
    }

    let (w, h) = OCT_SIZE;
    let period = if class == AmdClass::Neovascular { rng.random_range(20.0..26.0) } else { rng.random_range(7.0..9.0) };
    let phase = rng.random_range(0.0..2.0 * PI);
    let tilt = rng.random_range(-0.05..0.05);
    let base = rng.random_range(0.35..0.5);
    let mut oct = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let yy = y as f64 + tilt * x as f64;
            let band = (2.0 * PI * yy / period + phase).sin();
            oct[y * w + x] = base + 0.3 * band + rng.random_range(-0.05..0.05);
        }
    }

    (
        Image::new(FUNDUS_SIZE.0, FUNDUS_SIZE.1, ColorSpace::Rgb, fundus).expect("fundus buffer size"),
        Image::new(OCT_SIZE.0, OCT_SIZE.1, ColorSpace::Gray, oct).expect("oct buffer size"),
    )
}

/// Writes `per_class` pairs per class under `out_dir/images/` and returns the
/// manifest (also saved as `out_dir/manifest.csv`).
pub fn generate_dataset(out_dir: &Path, per_class: usize, seed: u64) -> Result<Manifest> {
    if per_class == 0 {
        return Err(Error::Range { what: "per_class", value: 0.0, min: 1.0, max: f64::INFINITY });
    }
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let jobs: Vec<(AmdClass, usize)> =
        AmdClass::ALL.into_iter().flat_map(|c| (0..per_class).map(move |i| (c, i))).collect();
    let records = jobs
        .par_iter()
        .map(|&(class, i)| {
            let id = format!("{}_{i:03}", class.slug());
            let (fundus, oct) = synth_pair(class, i, seed);
            let fundus_path: PathBuf = img_dir.join(format!("{id}_fundus.png"));
            let oct_path: PathBuf = img_dir.join(format!("{id}_oct.png"));
            save_png(&fundus, &fundus_path)?;
            save_png(&oct, &oct_path)?;
            Ok(Record { sample_id: id, fundus_path, oct_path, label: class, provenance: Provenance::Original })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(records)?;
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
