//! Scaled dot-product self-attention over the per-scale tokens of one encoder
//! path, and the concatenative fusion of paths.
//!
//! Tokens are the backbone feature vectors of a path, one per sigma, so the
//! sequence length is the number of scales.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::weights::{LayerKind, WeightFile};
use crate::error::{Error, Result};

/// Encoder path. The declaration order is the canonical fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathId {
    #[serde(rename = "hsv_fundus")]
    HsvFundus,
    #[serde(rename = "ycbcr_fundus")]
    YCbCrFundus,
    #[serde(rename = "gray_oct")]
    GrayOct,
}

impl PathId {
    pub const CANONICAL: [PathId; 3] = [PathId::HsvFundus, PathId::YCbCrFundus, PathId::GrayOct];

    pub fn as_str(self) -> &'static str {
        match self {
            PathId::HsvFundus => "hsv_fundus",
            PathId::YCbCrFundus => "ycbcr_fundus",
            PathId::GrayOct => "gray_oct",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::CANONICAL.get(c as usize).copied()
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::CANONICAL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown path {s:?}")))
    }
}

/// Dense row-major matrix of tokens (rows) by feature dimension (cols).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!("{rows}x{cols} matrix from {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(TokenMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("ragged token rows".into()));
        }
        Self::new(n, d, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        TokenMatrix { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn matmul(&self, other: &TokenMatrix) -> Result<TokenMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let dst = &mut out[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(TokenMatrix { rows: self.rows, cols: other.cols, data: out })
    }

    /// `self * other^T`.
    pub fn matmul_transposed(&self, other: &TokenMatrix) -> Result<TokenMatrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!("{} vs {} columns", self.cols, other.cols)));
        }
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.push(self.row(i).iter().zip(other.row(j)).map(|(a, b)| a * b).sum());
            }
        }
        Ok(TokenMatrix { rows: self.rows, cols: other.rows, data: out })
    }

    fn is_identity(&self) -> bool {
        self.rows == self.cols
            && self.data.iter().enumerate().all(|(i, &v)| v == if i / self.cols == i % self.cols { 1.0 } else { 0.0 })
    }
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(m: &TokenMatrix) -> Result<TokenMatrix> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut data = Vec::with_capacity(m.data.len());
    for i in 0..m.rows {
        let row = m.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| e / total));
    }
    Ok(TokenMatrix { rows: m.rows, cols: m.cols, data })
}

/// Query/key/value projections. `d_head` is the size used in the `sqrt` scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: TokenMatrix,
    pub w_k: TokenMatrix,
    pub w_v: TokenMatrix,
    pub d_head: usize,
}

impl AttentionParams {
    /// Parameter-free attention: all projections are the identity and `d_head = d`.
    pub fn identity(d: usize) -> Self {
        AttentionParams { w_q: TokenMatrix::identity(d), w_k: TokenMatrix::identity(d), w_v: TokenMatrix::identity(d), d_head: d }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w_q.rows;
        for (name, w) in [("wq", &self.w_q), ("wk", &self.w_k), ("wv", &self.w_v)] {
            if w.rows != d || w.cols != d {
                return Err(Error::DimensionMismatch(format!("{name} is {}x{}, expected {d}x{d}", w.rows, w.cols)));
            }
        }
        if self.d_head == 0 {
            return Err(Error::DimensionMismatch("d_head must be positive".into()));
        }
        Ok(())
    }

    /// Reads `wq`/`wk`/`wv` linear entries from an `MCGW` container.
    pub fn from_weight_file(wf: &WeightFile) -> Result<Self> {
        let get = |name: &str| -> Result<TokenMatrix> {
            let t = wf
                .layer(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("attention file lacks {name}")))?;
            if t.kind != LayerKind::Linear || t.shape.len() != 2 {
                return Err(Error::ShapeMismatch(format!("{name} must be a 2-D linear entry")));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteWeight(name.to_string()));
            }
            TokenMatrix::new(t.shape[0], t.shape[1], t.values.iter().map(|&v| f64::from(v)).collect())
        };
        let params = AttentionParams { w_q: get("wq")?, w_k: get("wk")?, w_v: get("wv")?, d_head: 0 };
        let params = AttentionParams { d_head: params.w_q.rows, ..params };
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::read(path)?)
    }
}

fn project(x: &TokenMatrix, w: &TokenMatrix) -> Result<TokenMatrix> {
    if w.is_identity() && x.cols == w.rows {
        Ok(x.clone())
    } else {
        x.matmul(w)
    }
}

/// Attention weights `softmax(Q K^T / sqrt(d_head))` and values `V`.
pub fn attention_weights(x: &TokenMatrix, params: &AttentionParams) -> Result<(TokenMatrix, TokenMatrix)> {
    params.validate()?;
    if x.cols != params.dim() {
        return Err(Error::DimensionMismatch(format!("tokens have {} features, projections expect {}", x.cols, params.dim())));
    }
    if x.rows == 0 {
        return Err(Error::DimensionMismatch("no tokens".into()));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let q = project(x, &params.w_q)?;
    let k = project(x, &params.w_k)?;
    let v = project(x, &params.w_v)?;
    let scale = 1.0 / (params.d_head as f64).sqrt();
    let mut scores = q.matmul_transposed(&k)?;
    for s in &mut scores.data {
        *s *= scale;
    }
    Ok((softmax_rows(&scores)?, v))
}

pub fn self_attention(x: &TokenMatrix, params: &AttentionParams) -> Result<TokenMatrix> {
    let (weights, v) = attention_weights(x, params)?;
    weights.matmul(&v)
}

/// Fused representation of one encoder path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEmbedding {
    pub path: PathId,
    pub values: Vec<f64>,
}

/// Backbone rows (sigma order) followed by attended rows (sigma order).
pub fn path_fuse(path: PathId, backbone: &TokenMatrix, attended: &TokenMatrix) -> Result<PathEmbedding> {
    if backbone.rows != attended.rows || backbone.cols != attended.cols {
        return Err(Error::DimensionMismatch(format!(
            "backbone {}x{} vs attended {}x{}",
            backbone.rows, backbone.cols, attended.rows, attended.cols
        )));
    }
    let mut values = backbone.data.clone();
    values.extend_from_slice(&attended.data);
    Ok(PathEmbedding { path, values })
}

/// Concatenation of path embeddings in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    pub values: Vec<f64>,
    /// Present paths with their `(offset, len)` block in `values`.
    pub blocks: Vec<(PathId, usize, usize)>,
}

pub fn global_fuse(mut paths: Vec<PathEmbedding>) -> Result<FusedVector> {
    if paths.is_empty() {
        return Err(Error::EmptyPathList);
    }
    paths.sort_by_key(|p| p.path);
    for pair in paths.windows(2) {
        if pair[0].path == pair[1].path {
            return Err(Error::DuplicatePath(pair[0].path.to_string()));
        }
    }
    let mut values = Vec::new();
    let mut blocks = Vec::new();
    for p in paths {
        blocks.push((p.path, values.len(), p.values.len()));
        values.extend(p.values);
    }
    Ok(FusedVector { values, blocks })
}
