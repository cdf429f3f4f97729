//! Grayscale rasters, subpixel sampling, gradients, pyramids, template
//! warping and ZNCC.

mod pyramid;
mod template;
mod zncc;

use std::path::Path;

use thiserror::Error;

use crate::geometry::PixelPoint;

pub use pyramid::{build_pyramid, level_scale, scale_homography, ImagePyramid, BLUR_KERNEL};
pub use template::{warp_template, Rect, TemplateRegion, WarpedTemplate};
pub use zncc::zncc;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image too small: {width}x{height} (need at least {min}x{min})")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("{levels} pyramid levels do not fit a {width}x{height} image")]
    TooManyLevels { levels: usize, width: usize, height: usize },
    #[error("correlation undefined: zero variance or fewer than 2 valid samples")]
    UndefinedCorrelation,
    #[error("signal lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("region {0:?} is not contained in a {1}x{2} image")]
    RegionOutside(Rect, usize, usize),
    #[error("failed to read image {path}: {source}")]
    Read { path: String, source: image::ImageError },
    #[error("failed to write image {path}: {source}")]
    Write { path: String, source: image::ImageError },
}

/// Row-major intensity raster. Loaded images hold values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "buffer size mismatch");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (self.width - 1) as f64 && p.v <= (self.height - 1) as f64
    }

    /// Returns the top-left cell corner and fractional offsets for a point
    /// known to be inside the sampling domain.
    #[inline]
    fn cell(&self, p: PixelPoint) -> (usize, usize, f64, f64) {
        let mut x0 = p.u.floor() as usize;
        let mut y0 = p.v.floor() as usize;
        let mut fx = p.u - x0 as f64;
        let mut fy = p.v - y0 as f64;
        // Points on the last row/column use the cell to their left/top.
        if x0 + 1 >= self.width && self.width > 1 {
            x0 = self.width - 2;
            fx = p.u - x0 as f64;
        }
        if y0 + 1 >= self.height && self.height > 1 {
            y0 = self.height - 2;
            fy = p.v - y0 as f64;
        }
        (x0, y0, fx, fy)
    }

    /// Bilinear interpolation; `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn bilinear_sample(&self, p: PixelPoint) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        if self.width == 1 || self.height == 1 {
            return Some(self.get(p.u as usize, p.v as usize) as f64);
        }
        let (x0, y0, fx, fy) = self.cell(p);
        let i = y0 * self.width + x0;
        let (i00, i10) = (self.data[i] as f64, self.data[i + 1] as f64);
        let (i01, i11) = (self.data[i + self.width] as f64, self.data[i + self.width + 1] as f64);
        let top = i00 + fx * (i10 - i00);
        let bottom = i01 + fx * (i11 - i01);
        Some(top + fy * (bottom - top))
    }

    /// Bilinear value together with the exact partial derivatives of the
    /// bilinear interpolant at `p`.
    #[inline]
    pub fn bilinear_sample_with_gradient(&self, p: PixelPoint) -> Option<(f64, f64, f64)> {
        if !self.contains(p) || self.width < 2 || self.height < 2 {
            return None;
        }
        let (x0, y0, fx, fy) = self.cell(p);
        let i = y0 * self.width + x0;
        let (i00, i10) = (self.data[i] as f64, self.data[i + 1] as f64);
        let (i01, i11) = (self.data[i + self.width] as f64, self.data[i + self.width + 1] as f64);
        let top = i00 + fx * (i10 - i00);
        let bottom = i01 + fx * (i11 - i01);
        let value = top + fy * (bottom - top);
        let du = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
        let dv = bottom - top;
        Some((value, du, dv))
    }

    /// Loads an 8-bit PGM or PNG; color inputs are converted to luma.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| ImageError::Read { path: path.display().to_string(), source })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        Ok(Self { width: w as usize, height: h as usize, data: luma.into_raw().into_iter().map(f32::from).collect() })
    }

    /// Rounds and clamps to 8 bits.
    pub fn to_luma8(&self) -> image::GrayImage {
        let raw: Vec<u8> = self.data.iter().map(|&x| x.round().clamp(0.0, 255.0) as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer matches dimensions")
    }

    /// Saves as 8-bit grayscale; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        self.to_luma8().save(path).map_err(|source| ImageError::Write { path: path.display().to_string(), source })
    }

    /// Copy of the pixels inside `rect`, which must lie in the image.
    pub fn crop(&self, rect: &Rect) -> GrayImage {
        GrayImage::from_fn(rect.width, rect.height, |x, y| self.get(rect.x + x, rect.y + y))
    }
}

/// Per-pixel image derivatives in intensity units per pixel.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub du: GrayImage,
    pub dv: GrayImage,
}

/// Central differences in the interior, one-sided differences on borders.
pub fn image_gradient(img: &GrayImage) -> Result<Gradients, ImageError> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(ImageError::TooSmall { width: w, height: h, min: 3 });
    }
    let du = GrayImage::from_fn(w, h, |x, y| {
        if x == 0 {
            img.get(1, y) - img.get(0, y)
        } else if x == w - 1 {
            img.get(w - 1, y) - img.get(w - 2, y)
        } else {
            0.5 * (img.get(x + 1, y) - img.get(x - 1, y))
        }
    });
    let dv = GrayImage::from_fn(w, h, |x, y| {
        if y == 0 {
            img.get(x, 1) - img.get(x, 0)
        } else if y == h - 1 {
            img.get(x, h - 1) - img.get(x, h - 2)
        } else {
            0.5 * (img.get(x, y + 1) - img.get(x, y - 1))
        }
    });
    Ok(Gradients { du, dv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bilinear_examples() {
        let img = GrayImage::from_fn(4, 3, |x, y| (x * 10 + y * 100) as f32);
        assert_eq!(img.bilinear_sample(PixelPoint::new(2.0, 1.0)), Some(120.0));
        let pair = GrayImage::from_vec(2, 2, vec![10.0, 20.0, 10.0, 20.0]);
        assert_eq!(pair.bilinear_sample(PixelPoint::new(0.5, 0.0)), Some(15.0));
        assert_eq!(img.bilinear_sample(PixelPoint::new(-0.5, 3.0)), None);
        assert_eq!(img.bilinear_sample(PixelPoint::new(3.0, 2.0)), Some(230.0));
        assert_eq!(img.bilinear_sample(PixelPoint::new(3.01, 1.0)), None);
    }

    #[test]
    fn interpolant_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = GrayImage::from_fn(9, 9, |_, _| rng.random_range(0.0..255.0));
        for _ in 0..100 {
            let p = PixelPoint::new(rng.random_range(0.5..7.5), rng.random_range(0.5..7.5));
            let (value, du, dv) = img.bilinear_sample_with_gradient(p).unwrap();
            assert_eq!(Some(value), img.bilinear_sample(p));
            let h = 1e-7;
            let s = |dx: f64, dy: f64| img.bilinear_sample(PixelPoint::new(p.u + dx, p.v + dy)).unwrap();
            assert!(((s(h, 0.0) - s(-h, 0.0)) / (2.0 * h) - du).abs() < 1e-4);
            assert!(((s(0.0, h) - s(0.0, -h)) / (2.0 * h) - dv).abs() < 1e-4);
        }
    }

    #[test]
    fn gradient_of_constant_and_planes() {
        let flat = GrayImage::from_fn(6, 5, |_, _| 42.0);
        let g = image_gradient(&flat).unwrap();
        assert!(g.du.data().iter().chain(g.dv.data()).all(|&x| x == 0.0));

        let plane = GrayImage::from_fn(7, 6, |x, y| 2.0 * x as f32 - 3.0 * y as f32 + 100.0);
        let g = image_gradient(&plane).unwrap();
        for y in 0..6 {
            for x in 0..7 {
                assert_eq!(g.du.get(x, y), 2.0);
                assert_eq!(g.dv.get(x, y), -3.0);
            }
        }
    }

    #[test]
    fn gradient_matches_direct_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = GrayImage::from_fn(8, 8, |_, _| rng.random_range(0.0..255.0));
        let g = image_gradient(&img).unwrap();
        for y in 1..7 {
            for x in 1..7 {
                assert_eq!(g.du.get(x, y), 0.5 * (img.get(x + 1, y) - img.get(x - 1, y)));
                assert_eq!(g.dv.get(x, y), 0.5 * (img.get(x, y + 1) - img.get(x, y - 1)));
            }
        }
    }

    #[test]
    fn gradient_rejects_tiny_images() {
        assert!(matches!(image_gradient(&GrayImage::new(2, 10)), Err(ImageError::TooSmall { .. })));
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(13, 7, |x, y| ((x * 17 + y * 31) % 256) as f32);
        let path = dir.path().join("a.png");
        img.save(&path).unwrap();
        assert_eq!(GrayImage::load(&path).unwrap(), img);
        let pgm = dir.path().join("a.pgm");
        img.save(&pgm).unwrap();
        assert_eq!(GrayImage::load(&pgm).unwrap(), img);
    }
}
