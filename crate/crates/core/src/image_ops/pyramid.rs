use nalgebra::Matrix3;

use super::{GrayImage, ImageError};
use crate::geometry::HomographyMatrix;

/// Separable binomial kernel applied before each decimation.
pub const BLUR_KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

const MIN_LEVEL_SIZE: usize = 8;

/// Multiresolution stack. Index 0 is full resolution; pixel `(x, y)` of
/// level `l` sits at `(2^l x, 2^l y)` in full-resolution coordinates.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImage>,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &GrayImage {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn coarsest(&self) -> &GrayImage {
        self.levels.last().expect("pyramid has at least one level")
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Blurs with [`BLUR_KERNEL`] (replicated borders) and keeps every second
/// pixel in both directions.
fn blur_and_decimate(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (nw, nh) = (w / 2, h / 2);
    // Horizontal pass evaluated only at even columns.
    let mut horiz = vec![0.0f32; nw * h];
    for y in 0..h {
        let row = &img.data()[y * w..(y + 1) * w];
        for nx in 0..nw {
            let cx = (2 * nx) as isize;
            let mut acc = 0.0;
            for (k, &c) in BLUR_KERNEL.iter().enumerate() {
                acc += c * row[clamp_index(cx + k as isize - 2, w)];
            }
            horiz[y * nw + nx] = acc;
        }
    }
    let mut out = GrayImage::new(nw, nh);
    for ny in 0..nh {
        let cy = (2 * ny) as isize;
        for nx in 0..nw {
            let mut acc = 0.0;
            for (k, &c) in BLUR_KERNEL.iter().enumerate() {
                acc += c * horiz[clamp_index(cy + k as isize - 2, h) * nw + nx];
            }
            out.set(nx, ny, acc);
        }
    }
    out
}

pub fn build_pyramid(img: &GrayImage, levels: usize) -> Result<ImagePyramid, ImageError> {
    let too_many = || ImageError::TooManyLevels { levels, width: img.width(), height: img.height() };
    if levels == 0 {
        return Err(too_many());
    }
    let shrink = 1usize << (levels - 1);
    if img.width() / shrink < MIN_LEVEL_SIZE || img.height() / shrink < MIN_LEVEL_SIZE {
        return Err(too_many());
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let next = blur_and_decimate(out.last().unwrap());
        out.push(next);
    }
    Ok(ImagePyramid { levels: out })
}

/// Coordinate scale factor of level `l` relative to full resolution.
pub fn level_scale(level: usize) -> f64 {
    1.0 / (1u64 << level) as f64
}

/// Re-expresses a homography defined between level-`from` coordinates as one
/// between level-`to` coordinates: `S_to * S_from^-1 * H * S_from * S_to^-1`,
/// which reduces to a conjugation by the relative scale.
pub fn scale_homography(h: &HomographyMatrix, from: usize, to: usize) -> HomographyMatrix {
    if from == to {
        return *h;
    }
    let s = level_scale(to) / level_scale(from);
    let scale = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
    let inv = Matrix3::new(1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0, 0.0, 0.0, 1.0);
    HomographyMatrix::from_matrix(scale * h.matrix() * inv)
}
