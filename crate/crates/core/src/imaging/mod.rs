//! RGB float images, PNG I/O, quality metrics and synthetic patterns.

mod metrics;
mod pattern;

use std::io;
use std::path::Path;

use image::{DynamicImage, ImageReader, Rgb, RgbImage};
use thiserror::Error;

pub use metrics::{mse, psnr, ssim, ssim_with_grad, PSNR_CAP_DB, SSIM_MIN_SIDE};
pub use pattern::gen_zone_plate;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {2}px minimum side")]
    TooSmall(usize, usize, usize),
}

/// Three-channel image with interleaved `f64` samples, nominally in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be at least 1");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&value);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set_pixel(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, v: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&v);
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> Result<(), ImagingError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImagingError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bilinear sample at continuous coordinates where pixel `(i, j)` has its
    /// center at `(i + 0.5, j + 0.5)`; clamps to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let (p00, p10, p01, p11) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - tx) + p10[c] * tx;
            let bottom = p01[c] * (1.0 - tx) + p11[c] * tx;
            out[c] = top * (1.0 - ty) + bottom * ty;
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> ImageBuffer {
        assert!(x0 + width <= self.width && y0 + height <= self.height, "crop out of bounds");
        ImageBuffer::from_fn(width, height, |x, y| self.pixel(x0 + x, y0 + y))
    }

    /// Clamps and quantizes to 8-bit, rounding to nearest.
    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                out.put_pixel(x as u32, y as u32, Rgb([q(p[0]), q(p[1]), q(p[2])]));
            }
        }
        out
    }
}

fn io_err(path: &Path, source: io::Error) -> ImagingError {
    ImagingError::Io { path: path.display().to_string(), source }
}

/// Loads an 8- or 16-bit grayscale, RGB or RGBA PNG. Alpha is dropped and
/// gray is replicated to three channels. Values are not linearized.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer, ImagingError> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| io_err(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| io_err(path, e))?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(ImagingError::UnsupportedFormat(format!("{} is not a PNG file", path.display())));
    }
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(source) => io_err(path, source),
        other => ImagingError::UnsupportedFormat(other.to_string()),
    })?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> ImageBuffer {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    let data = if sixteen {
        img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    } else {
        img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
    };
    ImageBuffer { width: w, height: h, data }
}

pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    img.to_rgb8().save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(source) => io_err(path, source),
        other => ImagingError::UnsupportedFormat(other.to_string()),
    })
}
