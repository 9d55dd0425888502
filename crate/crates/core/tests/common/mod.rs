//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use mcgaec::forest::Node;
use mcgaec::imageio::{ColorSpace, Image};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize, space: ColorSpace) -> Image {
    let data = (0..w * h * space.channels()).map(|_| rng.random::<f64>()).collect();
    Image::new(w, h, space, data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Dense 2-D Gaussian filter evaluated directly from `exp(-(x²+y²)/(2σ²))`
/// over a `(2r+1)²` window with `r = ceil(3σ)`, edge-replicated.
pub fn blur_2d_oracle(img: &Image, sigma: f64) -> Image {
    let r = (3.0 * sigma).ceil() as i64;
    let mut w2 = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            w2.push((dx, dy, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
        }
    }
    let z: f64 = w2.iter().map(|t| t.2).sum();
    let (w, h) = (img.width() as i64, img.height() as i64);
    Image::from_fn(img.width(), img.height(), img.space(), |x, y, c| {
        let mut acc = 0.0;
        for &(dx, dy, wt) in &w2 {
            let sx = (x as i64 + dx).clamp(0, w - 1) as usize;
            let sy = (y as i64 + dy).clamp(0, h - 1) as usize;
            acc += wt * img.get(sx, sy, c);
        }
        acc / z
    })
}

/// Six nested loops, f64 accumulation, zero padding 1.
pub fn conv_oracle(input: &[f32], c_in: usize, h: usize, w: usize, weights: &[f32], bias: &[f32]) -> Vec<f64> {
    let c_out = bias.len();
    let mut out = vec![0.0; c_out * h * w];
    for co in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = f64::from(bias[co]);
                for ci in 0..c_in {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as i64 + ky as i64 - 1, x as i64 + kx as i64 - 1);
                            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                continue;
                            }
                            let v = input[(ci * h + sy as usize) * w + sx as usize];
                            let k = weights[((co * c_in + ci) * 3 + ky) * 3 + kx];
                            acc += f64::from(v) * f64::from(k);
                        }
                    }
                }
                out[(co * h + y) * w + x] = acc;
            }
        }
    }
    out
}

pub fn maxpool_oracle(input: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    m = m.max(input[(ch * h + 2 * y + dy) * w + 2 * x + dx]);
                }
                out.push(m);
            }
        }
    }
    out
}

/// `softmax(Q Kᵀ / sqrt(d_head)) V` with explicit loops; `w` are `(W_q, W_k, W_v)`
/// as row-major `d x d` matrices.
pub fn attention_oracle(x: &[Vec<f64>], w: Option<(&[f64], &[f64], &[f64])>, d_head: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = x[0].len();
    let project = |m: Option<&[f64]>| -> Vec<Vec<f64>> {
        match m {
            None => x.to_vec(),
            Some(m) => x.iter().map(|row| (0..d).map(|j| (0..d).map(|k| row[k] * m[k * d + j]).sum()).collect()).collect(),
        }
    };
    let (q, k, v) = match w {
        None => (project(None), project(None), project(None)),
        Some((a, b, c)) => (project(Some(a)), project(Some(b)), project(Some(c))),
    };
    let n = x.len();
    let mut weights = vec![vec![0.0; n]; n];
    for i in 0..n {
        let s: Vec<f64> = (0..n).map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d_head as f64).sqrt()).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..n {
            weights[i][j] = e[j] / z;
        }
    }
    let out = (0..n).map(|i| (0..d).map(|c| (0..n).map(|j| weights[i][j] * v[j][c]).sum()).collect()).collect();
    (weights, out)
}

/// Fraction of (positive, negative) pairs ranked correctly; ties count 1/2.
pub fn mann_whitney_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

pub fn confusion_oracle(y_true: &[usize], y_pred: &[usize]) -> HashMap<(usize, usize), u64> {
    let mut m = HashMap::new();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        *m.entry((t, p)).or_insert(0) += 1;
    }
    m
}

/// Isotropic Gaussian blobs, `per_class` points around each center.
pub fn blobs(rng: &mut impl Rng, per_class: usize, centers: &[Vec<f64>], sigma: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            x.push(center.iter().map(|m| m + normal.sample(rng)).collect());
            y.push(c);
        }
    }
    (x, y)
}

fn gini_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    1.0 - counts.iter().map(|&c| (c as f64 / n as f64).powi(2)).sum::<f64>()
}

/// Tree grown by trying every `(feature, midpoint)` split at every node and
/// counting both children directly. Same stopping rules and tie order
/// (strictly larger decrease wins, scanning features then thresholds upward).
pub fn exhaustive_tree(x: &[Vec<f64>], y: &[usize], n_classes: usize, min_leaf: usize) -> Vec<Node> {
    fn grow(x: &[Vec<f64>], y: &[usize], idx: &[usize], k: usize, min_leaf: usize, out: &mut Vec<Node>) {
        let mut counts = vec![0usize; k];
        for &i in idx {
            counts[y[i]] += 1;
        }
        let leaf = Node::Leaf { counts: counts.iter().map(|&c| c as u32).collect() };
        if counts.iter().filter(|&&c| c > 0).count() <= 1 || idx.len() < 2 * min_leaf {
            out.push(leaf);
            return;
        }
        let parent = gini_counts(&counts);
        let n = idx.len() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = idx.iter().map(|&i| x[i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for pair in vals.windows(2) {
                let t = pair[0] + (pair[1] - pair[0]) / 2.0;
                let (mut l, mut r) = (vec![0usize; k], vec![0usize; k]);
                for &i in idx {
                    if x[i][f] <= t { l[y[i]] += 1 } else { r[y[i]] += 1 }
                }
                let (nl, nr) = (l.iter().sum::<usize>(), r.iter().sum::<usize>());
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let dec = parent - (nl as f64 * gini_counts(&l) + nr as f64 * gini_counts(&r)) / n;
                if dec <= 1e-12 {
                    continue;
                }
                if best.is_none_or(|(_, _, b)| dec > b + 1e-12) {
                    best = Some((f, t, dec));
                }
            }
        }
        let Some((f, t, _)) = best else {
            out.push(leaf);
            return;
        };
        let left: Vec<usize> = idx.iter().copied().filter(|&i| x[i][f] <= t).collect();
        let right: Vec<usize> = idx.iter().copied().filter(|&i| x[i][f] > t).collect();
        let me = out.len();
        out.push(Node::Internal { feature: f, threshold: t, right: 0 });
        grow(x, y, &left, k, min_leaf, out);
        let r_at = out.len();
        if let Node::Internal { right, .. } = &mut out[me] {
            *right = r_at;
        }
        grow(x, y, &right, k, min_leaf, out);
    }
    let mut out = Vec::new();
    let idx: Vec<usize> = (0..x.len()).collect();
    grow(x, y, &idx, n_classes, min_leaf, &mut out);
    out
}

/// Walks the stored nodes of one tree and returns the leaf's majority class.
pub fn walk_vote(nodes: &[Node], x: &[f64]) -> usize {
    let mut i = 0;
    loop {
        match &nodes[i] {
            Node::Internal { feature, threshold, right } => i = if x[*feature] <= *threshold { i + 1 } else { *right },
            Node::Leaf { counts } => {
                let max = *counts.iter().max().unwrap();
                return counts.iter().position(|&c| c == max).unwrap();
            }
        }
    }
}

/// Loads the committed TinyCNN input tensor (3x224x224 CHW) as an RGB image.
pub fn tinycnn_input_image() -> Image {
    let bytes = std::fs::read(fixture("tinycnn_input.bin")).unwrap();
    let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(v.len(), 3 * 224 * 224);
    Image::from_fn(224, 224, ColorSpace::Rgb, |x, y, c| f64::from(v[(c * 224 + y) * 224 + x]))
}

pub fn tinycnn_expected() -> Vec<f64> {
    let text = std::fs::read_to_string(fixture("tinycnn_expected.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["dim"], 32);
    v["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}
