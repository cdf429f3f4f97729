use serde::{Deserialize, Serialize};

use super::{GrayImage, ImageError};
use crate::geometry::{warp_point, CornerQuad, HomographyMatrix, PixelPoint};

/// Axis-aligned integer rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= width && self.y + self.height <= height
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= self.x as f64
            && p.v >= self.y as f64
            && p.u <= (self.x + self.width - 1) as f64
            && p.v <= (self.y + self.height - 1) as f64
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Smallest rectangle covering the points, grown by `margin` and clipped
    /// to the image. `None` when nothing of it remains inside the image.
    pub fn bounding(points: &[PixelPoint], margin: f64, width: usize, height: usize) -> Option<Rect> {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            if !p.is_finite() {
                return None;
            }
            lo = (lo.0.min(p.u), lo.1.min(p.v));
            hi = (hi.0.max(p.u), hi.1.max(p.v));
        }
        let x0 = (lo.0 - margin).floor().max(0.0);
        let y0 = (lo.1 - margin).floor().max(0.0);
        let x1 = (hi.0 + margin).ceil().min((width - 1) as f64);
        let y1 = (hi.1 + margin).ceil().min((height - 1) as f64);
        if x1 < x0 || y1 < y0 {
            return None;
        }
        Some(Rect::new(x0 as usize, y0 as usize, (x1 - x0) as usize + 1, (y1 - y0) as usize + 1))
    }
}

/// Parses `X,Y,W,H`.
impl std::str::FromStr for Rect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("invalid rectangle '{s}': {e}"))?;
        match parts[..] {
            [x, y, w, h] if w > 0 && h > 0 => Ok(Rect::new(x, y, w, h)),
            _ => Err(format!("expected X,Y,W,H with positive size, got '{s}'")),
        }
    }
}

/// The reference template: a rectangle of `m = width * height` pixels inside
/// the reference image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRegion {
    pub rect: Rect,
}

impl TemplateRegion {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { rect: Rect::new(x, y, width, height) }
    }

    pub fn validate(&self, img: &GrayImage) -> Result<(), ImageError> {
        if self.rect.fits_in(img.width(), img.height()) {
            Ok(())
        } else {
            Err(ImageError::RegionOutside(self.rect, img.width(), img.height()))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.rect.area()
    }

    /// Template pixel coordinates `p*_i`, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = PixelPoint> + '_ {
        let r = self.rect;
        (r.y..r.y + r.height).flat_map(move |y| (r.x..r.x + r.width).map(move |x| PixelPoint::new(x as f64, y as f64)))
    }

    /// Centers of the extreme template pixels, clockwise from top-left.
    pub fn corners(&self) -> CornerQuad {
        let r = self.rect;
        let (x0, y0) = (r.x as f64, r.y as f64);
        let (x1, y1) = ((r.x + r.width - 1) as f64, (r.y + r.height - 1) as f64);
        CornerQuad([PixelPoint::new(x0, y0), PixelPoint::new(x1, y0), PixelPoint::new(x1, y1), PixelPoint::new(x0, y1)])
    }

    /// Pixels of pyramid level `level` whose full-resolution position falls
    /// inside the template, in level coordinates.
    pub fn at_level(&self, level: usize) -> Rect {
        let f = 1usize << level;
        let r = self.rect;
        let x0 = r.x.div_ceil(f);
        let y0 = r.y.div_ceil(f);
        let x1 = (r.x + r.width - 1) / f;
        let y1 = (r.y + r.height - 1) / f;
        Rect::new(x0, y0, (x1 + 1).saturating_sub(x0), (y1 + 1).saturating_sub(y0))
    }
}

/// Intensities sampled at the warped template pixels plus the validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedTemplate {
    pub intensities: Vec<f64>,
    pub valid: Vec<bool>,
}

impl WarpedTemplate {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn all_invalid(&self) -> bool {
        !self.valid.iter().any(|&v| v)
    }
}

/// Samples `img` at `w(H, p*_i)` for every template pixel. Invalid entries
/// hold 0.
pub fn warp_template(img: &GrayImage, h: &HomographyMatrix, rect: &Rect) -> WarpedTemplate {
    let mut intensities = Vec::with_capacity(rect.area());
    let mut valid = Vec::with_capacity(rect.area());
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            let sample = warp_point(h, PixelPoint::new(x as f64, y as f64)).ok().and_then(|q| img.bilinear_sample(q));
            intensities.push(sample.unwrap_or(0.0));
            valid.push(sample.is_some());
        }
    }
    WarpedTemplate { intensities, valid }
}
