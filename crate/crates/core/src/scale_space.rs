//! Gaussian scale space: every level keeps the source resolution, only the
//! smoothing changes.
//!
//! Blur runs per channel in whatever space the image is already in. Hue is
//! blurred linearly, so values near the 0/1 wraparound are not treated as
//! circular.

use crate::error::{Error, Result};
use crate::imageio::Image;

/// Default regularization levels of the encoder paths.
pub const DEFAULT_SIGMAS: [f64; 2] = [1.0, 4.0];

/// Normalized 1-D Gaussian truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= total;
    }
    Ok(kernel)
}

fn convolve_rows(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let last = width as isize - 1;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for (x, o) in out[y * width..(y + 1) * width].iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - radius).clamp(0, last) as usize;
                acc += w * row[sx];
            }
            *o = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let last = height as isize - 1;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        let dst = &mut out[y * width..(y + 1) * width];
        for (k, w) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - radius).clamp(0, last) as usize;
            let row = &src[sy * width..(sy + 1) * width];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += w * s;
            }
        }
    }
    out
}

/// Separable Gaussian blur (horizontal pass, then vertical) with edge
/// replication. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma)?;
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .map(|ch| {
            let horiz = convolve_rows(&img.plane(ch), w, h, &kernel);
            convolve_cols(&horiz, w, h, &kernel)
        })
        .collect();
    Ok(Image::from_planes(w, h, img.space(), &planes))
}

/// One image rendered at several regularization levels.
#[derive(Debug, Clone)]
pub struct ScaleStack {
    sigmas: Vec<f64>,
    images: Vec<Image>,
}

impl ScaleStack {
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Image)> {
        self.sigmas.iter().copied().zip(&self.images)
    }
}

/// Checks that `sigmas` is a valid stack schedule: nonempty, finite, `>= 0`
/// and strictly increasing.
pub fn validate_sigmas(sigmas: &[f64]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::EmptySigmaList);
    }
    for (i, &s) in sigmas.iter().enumerate() {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidSigma(s));
        }
        if i > 0 && s <= sigmas[i - 1] {
            return Err(Error::InvalidSigma(s));
        }
    }
    Ok(())
}

pub fn build_scale_stack(img: &Image, sigmas: &[f64]) -> Result<ScaleStack> {
    validate_sigmas(sigmas)?;
    let images = sigmas.iter().map(|&s| gaussian_blur(img, s)).collect::<Result<_>>()?;
    Ok(ScaleStack { sigmas: sigmas.to_vec(), images })
}
