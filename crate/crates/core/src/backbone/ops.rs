//! CHW tensor kernels used by the frozen backbone.
//!
//! Every output element is accumulated in a fixed order (bias, then input
//! channel, kernel row, kernel column); parallelism only splits work across
//! output channels, so results are bit-identical at any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{height}x{width} tensor needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Tensor3 { channels, height, width, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// 3x3 cross-correlation, stride 1, zero padding 1. `weights` is
/// `c_out x c_in x 3 x 3` row-major.
pub fn conv2d(input: &Tensor3, weights: &[f32], bias: &[f32]) -> Result<Tensor3> {
    let c_out = bias.len();
    let c_in = input.channels;
    if weights.len() != c_out * c_in * 9 {
        return Err(Error::ShapeMismatch(format!(
            "conv weights hold {} values, expected {c_out}x{c_in}x3x3 for a {c_in}-channel input",
            weights.len()
        )));
    }
    let (h, w) = (input.height, input.width);
    let mut out = Tensor3::zeros(c_out, h, w);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(h * w).enumerate().for_each(|(co, plane)| {
        let kern = &weights[co * c_in * 9..(co + 1) * c_in * 9];
        for (y, row) in plane.chunks_exact_mut(w).enumerate() {
            row.fill(bias[co]);
            for ci in 0..c_in {
                let src = input.plane(ci);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                    let k = &kern[ci * 9 + ky * 3..ci * 9 + ky * 3 + 3];
                    // kx = 0 reads column x-1, kx = 2 reads x+1.
                    accumulate(&mut row[1..], &src_row[..w - 1], k[0]);
                    accumulate(row, src_row, k[1]);
                    accumulate(&mut row[..w - 1], &src_row[1..], k[2]);
                }
            }
        }
    });
    Ok(out)
}

#[inline]
fn accumulate(dst: &mut [f32], src: &[f32], weight: f32) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += weight * s;
    }
}

pub fn relu_inplace(t: &mut Tensor3) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// 2x2 max pool, stride 2; an odd trailing row or column is dropped.
pub fn maxpool2(input: &Tensor3) -> Tensor3 {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor3::zeros(c, oh, ow);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = &mut out.data[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..];
            let r1 = &src[(2 * y + 1) * w..];
            for x in 0..ow {
                dst[y * ow + x] = r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1]);
            }
        }
    }
    out
}

/// Per-channel spatial mean, accumulated in f64 and rounded once to f32.
pub fn global_avg_pool(input: &Tensor3) -> Vec<f32> {
    let n = (input.height * input.width) as f64;
    (0..input.channels)
        .map(|c| (input.plane(c).iter().map(|&v| f64::from(v)).sum::<f64>() / n) as f32)
        .collect()
}

/// `y = W x + b` with `W` stored `out x in` row-major.
pub fn linear(input: &[f32], weights: &[f32], bias: &[f32]) -> Result<Vec<f32>> {
    let n_out = bias.len();
    if weights.len() != n_out * input.len() {
        return Err(Error::ShapeMismatch(format!(
            "linear weights hold {} values, expected {n_out}x{}",
            weights.len(),
            input.len()
        )));
    }
    Ok(weights
        .par_chunks(input.len().max(1))
        .zip(bias.par_iter())
        .map(|(row, b)| row.iter().zip(input).fold(*b, |acc, (w, x)| acc + w * x))
        .collect())
}
