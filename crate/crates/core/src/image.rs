//! Grayscale image representations shared by every stage of the pipeline.
//!
//! [`QuantizedImage`] holds raw 8-bit levels as they live on disk;
//! [`NormalizedImage`] holds unit-interval intensities that noise is applied to.
//! Conversion between the two is bit-exact: `level / 255` one way and
//! `round(clamp(p, 0, 1) * 255)` (half away from zero) the other.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "image must have positive area, got {height}x{width}"
        )));
    }
    Ok(())
}

/// Intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl NormalizedImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some((i, p)) = pixels
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::Numeric(format!(
                "pixel {i} = {p} is outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds an image by clamping arbitrary finite values into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pixel value {v}")));
        }
        Self::new(
            height,
            width,
            values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// 8-bit levels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl QuantizedImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

pub fn normalize(raw: &QuantizedImage) -> NormalizedImage {
    NormalizedImage {
        height: raw.height,
        width: raw.width,
        pixels: raw.pixels.iter().map(|&l| f64::from(l) / 255.0).collect(),
    }
}

/// Converts one intensity to its 8-bit level, clamping out-of-range values.
pub fn quantize_value(p: f64) -> Result<u8> {
    if !p.is_finite() {
        return Err(Error::Numeric(format!("cannot quantize non-finite value {p}")));
    }
    // f64::round is half-away-from-zero
    Ok((p.clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn quantize(img: &NormalizedImage) -> Result<QuantizedImage> {
    let pixels = img
        .pixels
        .iter()
        .map(|&p| quantize_value(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedImage {
        height: img.height,
        width: img.width,
        pixels,
    })
}

// Align-corners source coordinate for output index `i`.
fn source_coord(i: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len == 1 || src_len == 1 {
        0.0
    } else {
        i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // exact when a == b, so constant images survive resampling bit-for-bit
    a + (b - a) * t
}

/// Bilinear resampling with the align-corners convention. Aspect ratio is not
/// preserved: the image is stretched to the target grid.
pub fn resample(img: &NormalizedImage, target_h: usize, target_w: usize) -> Result<NormalizedImage> {
    check_dims(target_h, target_w)?;
    if target_h == img.height && target_w == img.width {
        return Ok(img.clone());
    }
    let mut pixels = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let y = source_coord(r, img.height, target_h);
        let y0 = (y.floor() as usize).min(img.height - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let ty = y - y0 as f64;
        for c in 0..target_w {
            let x = source_coord(c, img.width, target_w);
            let x0 = (x.floor() as usize).min(img.width - 1);
            let x1 = (x0 + 1).min(img.width - 1);
            let tx = x - x0 as f64;
            let top = lerp(img.get(y0, x0), img.get(y0, x1), tx);
            let bottom = lerp(img.get(y1, x0), img.get(y1, x1), tx);
            pixels.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
        }
    }
    NormalizedImage::new(target_h, target_w, pixels)
}

/// Nearest-neighbour resampling for label images; never invents a level that
/// is absent from the input.
pub fn resample_nearest(img: &QuantizedImage, target_h: usize, target_w: usize) -> Result<QuantizedImage> {
    check_dims(target_h, target_w)?;
    if target_h == img.height && target_w == img.width {
        return Ok(img.clone());
    }
    let pick = |i: usize, src: usize, dst: usize| ((((i as f64) + 0.5) * src as f64 / dst as f64) as usize).min(src - 1);
    let mut pixels = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let sr = pick(r, img.height, target_h);
        for c in 0..target_w {
            let sc = pick(c, img.width, target_w);
            pixels.push(img.pixels[sr * img.width + sc]);
        }
    }
    QuantizedImage::new(target_h, target_w, pixels)
}

/// Reads an 8-bit single-channel PNG or binary PGM.
pub fn read_gray(path: &Path) -> Result<QuantizedImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if decoded.color() != ColorType::L8 {
        return Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: format!(
                "expected 8-bit single-channel grayscale, found {:?}",
                decoded.color()
            ),
        });
    }
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    QuantizedImage::new(h, w, decoded.into_luma8().into_raw())
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Encodes to PNG, or to binary PGM (P5) when `path` ends in `.pgm`.
pub fn encode_gray(img: &QuantizedImage, path: &Path) -> Result<Vec<u8>> {
    if is_pgm(path) {
        let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
        out.extend_from_slice(&img.pixels);
        return Ok(out);
    }
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new(&mut buf)
        .write_image(
            &img.pixels,
            img.width as u32,
            img.height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf.into_inner())
}

pub fn write_gray(img: &QuantizedImage, path: &Path) -> Result<()> {
    let bytes = encode_gray(img, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
