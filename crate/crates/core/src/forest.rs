//! Random-forest classifier: bootstrap resampling, a fresh random feature
//! subset at every node, exhaustive Gini splits, majority vote.
//!
//! Every tree draws from its own RNG stream keyed by `(seed, tree index)`, so a
//! fitted forest does not depend on how trees are scheduled across threads.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::stream_rng;

/// Minimum impurity decrease that counts as an improvement; also the
/// tolerance under which two candidate splits are considered tied.
pub const SPLIT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features drawn at each split.
    pub mtry: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 1000, mtry: 10, max_depth: None, min_samples_leaf: 1, seed: 0 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.mtry == 0 {
            return Err(Error::Config("mtry must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// `1 - sum (c_i / total)^2`.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::DegenerateInput("gini of an empty node".into()));
    }
    Ok(gini_unchecked(counts, total))
}

fn gini_unchecked(counts: &[usize], total: usize) -> f64 {
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Exhaustive scan over `candidates` and all midpoints between consecutive
/// distinct values of the samples in `idx`. Ties go to the lower feature
/// index, then the lower threshold. Both children must keep at least
/// `min_leaf` samples.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[usize],
    idx: &[usize],
    candidates: &[usize],
    n_classes: usize,
    min_leaf: usize,
) -> Option<Split> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let mut parent = vec![0usize; n_classes];
    for &i in idx {
        parent[y[i]] += 1;
    }
    let parent_gini = gini_unchecked(&parent, n);
    let mut features = candidates.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<Split> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left = vec![0usize; n_classes];
    let mut right = vec![0usize; n_classes];
    for &f in &features {
        order.clear();
        order.extend(idx.iter().map(|&i| (x[i][f], y[i])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(&parent);
        for k in 0..n - 1 {
            let (v, label) = order[k];
            left[label] += 1;
            right[label] -= 1;
            let next = order[k + 1].0;
            if next <= v {
                continue;
            }
            let (nl, nr) = (k + 1, n - k - 1);
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let child = (nl as f64 * gini_unchecked(&left, nl) + nr as f64 * gini_unchecked(&right, nr)) / n as f64;
            let decrease = parent_gini - child;
            if decrease <= SPLIT_EPS {
                continue;
            }
            if best.is_none_or(|b| decrease > b.decrease + SPLIT_EPS) {
                best = Some(Split { feature: f, threshold: midpoint(v, next), decrease });
            }
        }
    }
    best
}

/// Midpoint that is guaranteed to satisfy `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || m < lo { lo } else { m }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` goes to the left child (next node in
    /// preorder), otherwise to `right`.
    Internal { feature: usize, threshold: f64, right: usize },
    Leaf { counts: Vec<u32> },
}

/// One tree stored as a preorder node arena.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn majority(counts: &[u32]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Internal { feature, threshold, right } => {
                    i = if x[*feature] <= *threshold { i + 1 } else { *right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Class with the most training samples in the reached leaf (ties to the lowest class).
    pub fn vote(&self, x: &[f64]) -> usize {
        majority(self.leaf(x))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { right, .. } => 1 + walk(nodes, i + 1).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Grower<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    d: usize,
    mtry: usize,
    config: &'a ForestConfig,
    rng: R,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, idx: &[usize], depth: usize) {
        let mut counts = vec![0u32; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.config.max_depth.is_some_and(|m| depth >= m);
        let too_small = idx.len() < 2 * self.config.min_samples_leaf;
        if pure || depth_capped || too_small {
            self.nodes.push(Node::Leaf { counts });
            return;
        }
        let candidates = sample(&mut self.rng, self.d, self.mtry).into_vec();
        let Some(split) = best_split(self.x, self.y, idx, &candidates, self.n_classes, self.config.min_samples_leaf)
        else {
            self.nodes.push(Node::Leaf { counts });
            return;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Internal { feature: split.feature, threshold: split.threshold, right: 0 });
        self.grow(&left, depth + 1);
        let right_at = self.nodes.len();
        if let Node::Internal { right, .. } = &mut self.nodes[me] {
            *right = right_at;
        }
        self.grow(&right, depth + 1);
    }
}

/// Bootstrap sample (n draws with replacement) for tree `tree`.
pub fn bootstrap_indices(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, tree as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Fits one tree on `idx` with its own RNG stream. A forest tree uses the
/// bootstrap sample; the stream continues from the bootstrap draws.
fn fit_tree(x: &[Vec<f64>], y: &[usize], n_classes: usize, config: &ForestConfig, tree: usize, bootstrap: bool) -> Tree {
    let n = x.len();
    let d = x[0].len();
    let mut rng = stream_rng(config.seed, tree as u64);
    let idx: Vec<usize> = if bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
    let mut g = Grower { x, y, n_classes, d, mtry: config.mtry.min(d), config, rng, nodes: Vec::new() };
    g.grow(&idx, 0);
    Tree { nodes: g.nodes }
}

fn validate_training(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 samples, got {}", x.len())));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::DegenerateInput("feature dimension is 0".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(format!("row of length {} in a {d}-feature matrix", r.len())));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange { label, n_classes });
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub config: ForestConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub fractions: Vec<f64>,
}

impl Forest {
    /// Trains on the calling rayon pool. Results are identical for any pool size.
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, config: &ForestConfig) -> Result<Forest> {
        config.validate()?;
        let d = validate_training(x, y, n_classes)?;
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| fit_tree(x, y, n_classes, config, t, true))
            .collect();
        Ok(Forest { trees, n_classes, feature_dim: d, config: *config })
    }

    /// A single tree grown on all samples without bootstrap.
    pub fn fit_single_tree(x: &[Vec<f64>], y: &[usize], n_classes: usize, config: &ForestConfig) -> Result<Tree> {
        config.validate()?;
        validate_training(x, y, n_classes)?;
        Ok(fit_tree(x, y, n_classes, config, 0, false))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch(format!("probe has {} features, forest expects {}", x.len(), self.feature_dim)));
        }
        Ok(())
    }

    pub fn votes(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.check_dim(x)?;
        let mut votes = vec![0; self.n_classes];
        for t in &self.trees {
            votes[t.vote(x)] += 1;
        }
        Ok(votes)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let votes = self.votes(x)?;
        let n = self.trees.len() as f64;
        let mut class = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[class] {
                class = c;
            }
        }
        Ok(Prediction { class, fractions: votes.iter().map(|&v| v as f64 / n).collect() })
    }

    pub fn predict_proba_batch(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        x.par_iter().map(|row| self.predict(row).map(|p| p.fractions)).collect()
    }

    pub fn predict_batch(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        x.par_iter().map(|row| self.predict(row).map(|p| p.class)).collect()
    }

    /// Out-of-bag accuracy: every sample is scored only by trees whose
    /// bootstrap excluded it. Samples in every bootstrap are skipped.
    pub fn oob_accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        validate_training(x, y, self.n_classes)?;
        let n = x.len();
        let mut votes = vec![vec![0usize; self.n_classes]; n];
        for (t, tree) in self.trees.iter().enumerate() {
            let mut inbag = vec![false; n];
            for i in bootstrap_indices(self.config.seed, t, n) {
                inbag[i] = true;
            }
            for i in (0..n).filter(|&i| !inbag[i]) {
                votes[i][tree.vote(&x[i])] += 1;
            }
        }
        let (mut correct, mut scored) = (0, 0);
        for (v, &label) in votes.iter().zip(y) {
            if v.iter().sum::<usize>() == 0 {
                continue;
            }
            scored += 1;
            if majority(&v.iter().map(|&c| c as u32).collect::<Vec<_>>()) == label {
                correct += 1;
            }
        }
        Ok(if scored == 0 { 0.0 } else { correct as f64 / scored as f64 })
    }
}

const FOREST_MAGIC: [u8; 4] = *b"MCGR";
const FOREST_VERSION: u32 = 1;

impl Forest {
    /// Versioned binary encoding (little-endian):
    /// magic `MCGR`, version u32, config (`n_trees` u32, `mtry` u32,
    /// `max_depth` u32 with `u32::MAX` = unbounded, `min_samples_leaf` u32,
    /// `seed` u64), `n_classes` u32, `feature_dim` u32, then per tree a node
    /// count u32 and its preorder nodes: tag 0 = internal (`feature` u32,
    /// `threshold` f64) or tag 1 = leaf (`n_classes` x u32 counts).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend((v as u32).to_le_bytes());
        out.extend(FOREST_MAGIC);
        out.extend(FOREST_VERSION.to_le_bytes());
        u32le(&mut out, self.config.n_trees);
        u32le(&mut out, self.config.mtry);
        out.extend(self.config.max_depth.map_or(u32::MAX, |d| d as u32).to_le_bytes());
        u32le(&mut out, self.config.min_samples_leaf);
        out.extend(self.config.seed.to_le_bytes());
        u32le(&mut out, self.n_classes);
        u32le(&mut out, self.feature_dim);
        for tree in &self.trees {
            u32le(&mut out, tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Internal { feature, threshold, .. } => {
                        out.push(0);
                        u32le(&mut out, *feature);
                        out.extend(threshold.to_le_bytes());
                    }
                    Node::Leaf { counts } => {
                        out.push(1);
                        for c in counts {
                            out.extend(c.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Forest> {
        let mut r = ByteReader { buf, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != FOREST_MAGIC {
            return Err(Error::BadMagic { expected: FOREST_MAGIC, found: magic });
        }
        let version = r.u32()?;
        if version != FOREST_VERSION {
            return Err(Error::VersionMismatch { expected: FOREST_VERSION, found: version });
        }
        let n_trees = r.u32()? as usize;
        let mtry = r.u32()? as usize;
        let max_depth = match r.u32()? {
            u32::MAX => None,
            d => Some(d as usize),
        };
        let min_samples_leaf = r.u32()? as usize;
        let seed = r.u64()?;
        let n_classes = r.u32()? as usize;
        let feature_dim = r.u32()? as usize;
        let config = ForestConfig { n_trees, mtry, max_depth, min_samples_leaf, seed };
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let count = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                match r.u8()? {
                    0 => {
                        let feature = r.u32()? as usize;
                        let threshold = r.f64()?;
                        if feature >= feature_dim {
                            return Err(Error::ShapeMismatch(format!("feature index {feature} >= {feature_dim}")));
                        }
                        nodes.push(Node::Internal { feature, threshold, right: 0 });
                    }
                    1 => {
                        let counts = (0..n_classes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                        nodes.push(Node::Leaf { counts });
                    }
                    t => return Err(Error::ShapeMismatch(format!("unknown node tag {t}"))),
                }
            }
            link_preorder(&mut nodes)?;
            trees.push(Tree { nodes });
        }
        if r.pos != buf.len() {
            return Err(Error::ShapeMismatch("trailing bytes after last tree".into()));
        }
        Ok(Forest { trees, n_classes, feature_dim, config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::ShapeMismatch(format!("forest file truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Recomputes `right` links of a preorder arena; fails if it is not one tree.
fn link_preorder(nodes: &mut [Node]) -> Result<()> {
    fn walk(nodes: &mut [Node], i: usize) -> Result<usize> {
        match nodes.get(i) {
            None => Err(Error::ShapeMismatch("tree ends inside a subtree".into())),
            Some(Node::Leaf { .. }) => Ok(i + 1),
            Some(Node::Internal { .. }) => {
                let right_at = walk(nodes, i + 1)?;
                if let Node::Internal { right, .. } = &mut nodes[i] {
                    *right = right_at;
                }
                walk(nodes, right_at)
            }
        }
    }
    if nodes.is_empty() || walk(nodes, 0)? != nodes.len() {
        return Err(Error::ShapeMismatch("malformed tree node sequence".into()));
    }
    Ok(())
}
