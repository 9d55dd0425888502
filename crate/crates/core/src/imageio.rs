//! Raster images with PNG/JPEG decoding, plus the resizing and color-space
//! transforms that define the encoder paths.
//!
//! Pixel data is stored interleaved (row-major, channels innermost) as `f64`
//! normalized to `[0, 1]`.

use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
    Hsv,
    Gray,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    space: ColorSpace,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved data. Values are clamped to `[0, 1]`.
    pub fn new(width: usize, height: usize, space: ColorSpace, mut data: Vec<f64>) -> Result<Self> {
        let expected = width * height * space.channels();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{} image needs {expected} values, got {}",
                space.channels(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image { width, height, space, data })
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, value: f64) -> Self {
        let value = value.clamp(0.0, 1.0);
        Image { width, height, space, data: vec![value; width * height * space.channels()] }
    }

    /// Builds an image by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let c = space.channels();
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..c {
                    data.push(f(x, y, ch).clamp(0.0, 1.0));
                }
            }
        }
        Image { width, height, space, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.space.channels()
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels() + ch]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    /// One channel as a dense row-major plane.
    pub fn plane(&self, ch: usize) -> Vec<f64> {
        self.data.iter().skip(ch).step_by(self.channels()).copied().collect()
    }

    /// Inverse of [`Image::plane`]: reassemble planes into an image of `space`.
    pub(crate) fn from_planes(width: usize, height: usize, space: ColorSpace, planes: &[Vec<f64>]) -> Self {
        let c = space.channels();
        debug_assert_eq!(planes.len(), c);
        let mut data = vec![0.0; width * height * c];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * c + ch] = v.clamp(0.0, 1.0);
            }
        }
        Image { width, height, space, data }
    }

    /// Relabels the color space without touching the data (channel count must match).
    pub fn with_space(mut self, space: ColorSpace) -> Result<Self> {
        if space.channels() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "cannot relabel {:?} as {space:?}",
                self.space
            )));
        }
        self.space = space;
        Ok(self)
    }

    fn map_pixels(&self, space: ColorSpace, f: impl Fn(&[f64]) -> [f64; 3]) -> Image {
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for px in self.data.chunks_exact(self.channels()) {
            data.extend(f(px).iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Image { width: self.width, height: self.height, space, data }
    }
}

/// Decodes a PNG or JPEG file. Grayscale sources come back as `Gray`, all
/// others as `Rgb`; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let decode_err = |reason: String| Error::Decode { path: path.to_path_buf(), reason };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        other => return Err(decode_err(format!("unsupported format {other:?}"))),
    }
    let img = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> Image {
    let gray = matches!(
        img.color(),
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
    );
    if gray {
        let buf = img.to_luma8();
        let data = buf.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Image { width: buf.width() as usize, height: buf.height() as usize, space: ColorSpace::Gray, data }
    } else {
        let buf = img.to_rgb8();
        let data = buf.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Image { width: buf.width() as usize, height: buf.height() as usize, space: ColorSpace::Rgb, data }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG. Gray images are written single-channel; every other
/// space is written as its three raw channels.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width as u32, img.height as u32);
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let res = if img.space == ColorSpace::Gray {
        GrayImage::from_raw(w, h, bytes).map(|b| b.save(path))
    } else {
        RgbImage::from_raw(w, h, bytes).map(|b| b.save(path))
    };
    match res {
        Some(Ok(())) => Ok(()),
        Some(Err(image::ImageError::IoError(e))) => Err(Error::io(path, e)),
        Some(Err(e)) => Err(Error::io(path, std::io::Error::other(e.to_string()))),
        None => unreachable!("buffer length matches dimensions"),
    }
}

/// Bilinear resize with half-pixel-centered sampling and clamped source coordinates.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ShapeMismatch(format!("cannot resize to {out_w}x{out_h}")));
    }
    if img.width == out_w && img.height == out_h {
        return Ok(img.clone());
    }
    let c = img.channels();
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(out_w * out_h * c);
    for y in 0..out_h {
        let (y0, y1, fy) = taps(y, sy, img.height);
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = img.get(x0, y0, ch) * (1.0 - fx) + img.get(x1, y0, ch) * fx;
                let bot = img.get(x0, y1, ch) * (1.0 - fx) + img.get(x1, y1, ch) * fx;
                data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image { width: out_w, height: out_h, space: img.space, data })
}

fn expect_rgb(img: &Image) -> Result<()> {
    if img.space != ColorSpace::Rgb {
        return Err(Error::WrongColorSpace { expected: "RGB", actual: img.space });
    }
    Ok(())
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

const YCBCR: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
];

/// Full-range BT.601 (JPEG) YCbCr with chroma offset 0.5.
pub fn rgb_to_ycbcr(img: &Image) -> Result<Image> {
    expect_rgb(img)?;
    Ok(img.map_pixels(ColorSpace::YCbCr, |p| {
        let mut out = [0.0, 0.5, 0.5];
        for (o, row) in out.iter_mut().zip(&YCBCR) {
            *o += row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
        }
        out
    }))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

/// Exact inverse of [`rgb_to_ycbcr`] for in-gamut pixels.
pub fn ycbcr_to_rgb(img: &Image) -> Result<Image> {
    if img.space != ColorSpace::YCbCr {
        return Err(Error::WrongColorSpace { expected: "YCbCr", actual: img.space });
    }
    let inv = invert3(&YCBCR);
    Ok(img.map_pixels(ColorSpace::Rgb, |p| {
        let v = [p[0], p[1] - 0.5, p[2] - 0.5];
        let mut out = [0.0; 3];
        for (o, row) in out.iter_mut().zip(&inv) {
            *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        }
        out
    }))
}

/// Hexcone HSV with hue stored as `degrees / 360`. Hue is 0 for achromatic pixels.
pub fn rgb_to_hsv(img: &Image) -> Result<Image> {
    expect_rgb(img)?;
    Ok(img.map_pixels(ColorSpace::Hsv, |p| {
        let (r, g, b) = (p[0], p[1], p[2]);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let chroma = max - min;
        let s = if max > 0.0 { chroma / max } else { 0.0 };
        let h = if chroma <= 0.0 {
            0.0
        } else if max == r {
            ((g - b) / chroma).rem_euclid(6.0)
        } else if max == g {
            (b - r) / chroma + 2.0
        } else {
            (r - g) / chroma + 4.0
        };
        [h / 6.0, s, max]
    }))
}

/// BT.601 luminance. Gray input is returned unchanged.
pub fn rgb_to_gray(img: &Image) -> Result<Image> {
    match img.space {
        ColorSpace::Gray => Ok(img.clone()),
        ColorSpace::Rgb => {
            let data = img.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2]).clamp(0.0, 1.0)).collect();
            Ok(Image { width: img.width, height: img.height, space: ColorSpace::Gray, data })
        }
        other => Err(Error::WrongColorSpace { expected: "RGB or Gray", actual: other }),
    }
}

/// Expands a Gray image to three identical channels; three-channel images pass through.
pub fn replicate_gray(img: &Image) -> Image {
    if img.space != ColorSpace::Gray {
        return img.clone();
    }
    let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
    Image { width: img.width, height: img.height, space: ColorSpace::Rgb, data }
}
