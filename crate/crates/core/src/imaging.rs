//! Grayscale images: binary PGM I/O, bilinear resizing, [0, 1] normalization
//! and Sobel edge magnitude.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

/// Side length every network input is resized to.
pub const TARGET_SIDE: usize = 100;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported PGM variant {0:?}, only binary P5 is read")]
    UnsupportedVariant(String),
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("pixel {index} is not finite")]
    NonFinite { index: usize },
    #[error("pixel {index} = {value} outside [0, 255]")]
    OutOfRange { index: usize, value: f64 },
    #[error("image {width}×{height} is too small: {detail}")]
    TooSmall { width: usize, height: usize, detail: String },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Dimensions(format!("{width}×{height}")));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Dimensions(format!(
                "{width}×{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut pixels = vec![0.0; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                pixels[x * self.height + y] = self.get(x, y);
            }
        }
        Self {
            width: self.height,
            height: self.width,
            pixels,
        }
    }

    /// Single-channel 1×H×W tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.pixels.clone()).expect("image dims are positive")
    }

    /// Inverse of [`GrayImage::to_tensor`]; accepts H×W or 1×H×W.
    pub fn from_tensor(tensor: &Tensor) -> Result<Self, ImageError> {
        match *tensor.dims() {
            [h, w] | [1, h, w] => Self::new(w, h, tensor.data().to_vec()),
            ref dims => Err(ImageError::Dimensions(format!("not a single-channel image: {dims:?}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, ImageError> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::BadHeader(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::BadHeader(format!("{what} out of range")))
}

/// Parses a binary (P5) PGM. Intensities are the raw sample values.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.len() < 2 {
        return Err(ImageError::BadHeader("missing magic number".into()));
    }
    if &bytes[..2] != b"P5" {
        return Err(ImageError::UnsupportedVariant(String::from_utf8_lossy(&bytes[..2]).into_owned()));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval > 255 {
        return Err(ImageError::MaxvalTooLarge(maxval));
    }
    if maxval == 0 || width == 0 || height == 0 {
        return Err(ImageError::BadHeader(format!("{width}×{height}, maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::BadHeader("no whitespace after maxval".into()));
    }
    pos += 1;
    let expected = width * height;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let pixels = payload[..expected].iter().map(|&b| f64::from(b)).collect();
    GrayImage::new(width, height, pixels)
}

/// Serializes as canonical `P5\n<w> <h>\n255\n` plus one byte per pixel.
/// Pixels are rounded and must land in [0, 255].
pub fn write_pgm(image: &GrayImage) -> Result<Vec<u8>, ImageError> {
    let header = format!("P5\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    for (index, &p) in image.pixels.iter().enumerate() {
        if !p.is_finite() {
            return Err(ImageError::NonFinite { index });
        }
        let r = p.round();
        if !(0.0..=255.0).contains(&r) {
            return Err(ImageError::OutOfRange { index, value: p });
        }
        out.push(r as u8);
    }
    Ok(out)
}

/// Writes a [0, 1] image, scaling by 255 first.
pub fn write_pgm_unit(image: &GrayImage) -> Result<Vec<u8>, ImageError> {
    write_pgm(&image.map(|p| p * 255.0))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    read_pgm(&fs::read(path)?)
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    fs::write(path, write_pgm(image)?)?;
    Ok(())
}

fn sample_coord(dst: usize, dst_len: usize, src_len: usize) -> f64 {
    if dst_len == 1 {
        (src_len - 1) as f64 / 2.0
    } else {
        dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Bilinear resampling with corner-aligned grids: output corners sample the
/// input corners exactly.
pub fn resize_bilinear(image: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::Dimensions(format!("target {out_w}×{out_h}")));
    }
    if out_w == image.width && out_h == image.height {
        return Ok(image.clone());
    }
    let axis = |dst_len: usize, src_len: usize| -> Vec<(usize, usize, f64)> {
        (0..dst_len)
            .map(|d| {
                let s = sample_coord(d, dst_len, src_len);
                let lo = (s.floor() as usize).min(src_len - 1);
                let hi = (lo + 1).min(src_len - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let xs = axis(out_w, image.width);
    let ys = axis(out_h, image.height);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = image.get(x0, y0) * (1.0 - fx) + image.get(x1, y0) * fx;
            let bottom = image.get(x0, y1) * (1.0 - fx) + image.get(x1, y1) * fx;
            pixels.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}

/// Maps 0..255 intensities onto [0, 1] by dividing by 255.
pub fn normalize_unit(image: &GrayImage) -> Result<GrayImage, ImageError> {
    if let Some((index, &value)) = image
        .pixels
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=255.0).contains(*p))
    {
        return Err(ImageError::OutOfRange { index, value });
    }
    Ok(image.map(|p| p / 255.0))
}

/// Horizontal and vertical Sobel responses with replicate padding.
///
/// Each response is a weighted sum of differences, so a flat neighborhood
/// gives exactly zero.
pub fn sobel_gradients(image: &GrayImage) -> Result<(GrayImage, GrayImage), ImageError> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Err(ImageError::TooSmall {
            width: w,
            height: h,
            detail: "Sobel needs at least 3×3".into(),
        });
    }
    let at = |x: usize, y: usize, dx: isize, dy: isize| {
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        image.get(xx, yy)
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = |dy: isize| at(x, y, 1, dy) - at(x, y, -1, dy);
            gx[y * w + x] = d(-1) + 2.0 * d(0) + d(1);
            let e = |dx: isize| at(x, y, dx, 1) - at(x, y, dx, -1);
            gy[y * w + x] = e(-1) + 2.0 * e(0) + e(1);
        }
    }
    Ok((GrayImage::new(w, h, gx)?, GrayImage::new(w, h, gy)?))
}

/// `√(Gx² + Gy²)` before any rescaling.
pub fn sobel_raw_magnitude(image: &GrayImage) -> Result<GrayImage, ImageError> {
    let (gx, gy) = sobel_gradients(image)?;
    let pixels = gx.pixels.iter().zip(&gy.pixels).map(|(a, b)| a.hypot(*b)).collect();
    GrayImage::new(image.width, image.height, pixels)
}

/// Sobel edge magnitude rescaled into [0, 1] by its global maximum. A flat
/// image yields an all-zero map.
pub fn sobel_magnitude(image: &GrayImage) -> Result<GrayImage, ImageError> {
    let raw = sobel_raw_magnitude(image)?;
    let max = raw.pixels.iter().copied().fold(0.0, f64::max);
    Ok(if max > 0.0 { raw.map(|p| p / max) } else { raw })
}

/// Steps of the preprocessing pipeline, in the order they ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessStep {
    Sobel,
    Rescale255,
    Resize,
    Normalize,
}

/// Raw 0..255 image → (Sobel edge map) → 100×100 → [0, 1].
///
/// The Sobel map replaces the raw image and is brought back to the 0..255
/// range before resizing, exactly as if it had been stored as an 8-bit file.
pub fn preprocess_traced(image: &GrayImage, sobel: bool) -> Result<(GrayImage, Vec<PreprocessStep>), ImageError> {
    let mut trace = Vec::with_capacity(4);
    let mut current = image.clone();
    if sobel {
        current = sobel_magnitude(&current)?;
        trace.push(PreprocessStep::Sobel);
        current = current.map(|p| p * 255.0);
        trace.push(PreprocessStep::Rescale255);
    }
    current = resize_bilinear(&current, TARGET_SIDE, TARGET_SIDE)?;
    trace.push(PreprocessStep::Resize);
    // Bilinear weights can push a 255 a hair above range.
    current = current.map(|p| p.clamp(0.0, 255.0));
    current = normalize_unit(&current)?;
    trace.push(PreprocessStep::Normalize);
    Ok((current, trace))
}

pub fn preprocess(image: &GrayImage, sobel: bool) -> Result<GrayImage, ImageError> {
    preprocess_traced(image, sobel).map(|(img, _)| img)
}
