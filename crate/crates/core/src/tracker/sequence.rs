//! Synthetic tracking sequence: smooth motion, a stretch where the template
//! is fully covered, then reappearance at a distant pose.

use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{io_err, TrackerError};
use crate::geometry::{warp_point, HomographyMatrix, PixelPoint};
use crate::image_ops::{GrayImage, Rect, TemplateRegion};
use crate::synth::textured_scene;

const WIDTH: usize = 480;
const HEIGHT: usize = 360;
const TEMPLATE: Rect = Rect::new(190, 130, 100, 100);
const PRE_FRAMES: usize = 8;
const OCCLUDED_FRAMES: usize = 10;
const POST_FRAMES: usize = 4;
const OCCLUDER_MARGIN: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub file: String,
    /// Reference-to-frame homography.
    pub h: HomographyMatrix,
    pub occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSequence {
    pub template: Rect,
    pub ref_frame: usize,
    /// First frame where the template is visible again.
    pub reappearance: usize,
    pub frames: Vec<FrameTruth>,
    #[serde(skip)]
    pub images: Vec<GrayImage>,
}

/// Rotation by `theta` about the template centre followed by a shift.
fn pose(tx: f64, ty: f64, theta: f64) -> HomographyMatrix {
    let (cx, cy) = (
        TEMPLATE.x as f64 + (TEMPLATE.width as f64 - 1.0) / 2.0,
        TEMPLATE.y as f64 + (TEMPLATE.height as f64 - 1.0) / 2.0,
    );
    let (s, c) = theta.sin_cos();
    let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let to = Matrix3::new(1.0, 0.0, cx + tx, 0.0, 1.0, cy + ty, 0.0, 0.0, 1.0);
    let from = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    HomographyMatrix::from_matrix(to * r * from)
}

fn render(world: &GrayImage, background: &GrayImage, occluder: Option<&GrayImage>, h: &HomographyMatrix) -> GrayImage {
    let inv = h.inverse().expect("poses are invertible");
    let cover = occluder.map(|_| {
        let pts: Vec<PixelPoint> = TemplateRegion { rect: TEMPLATE }.corners().warp(h).expect("finite pose").0.to_vec();
        let fold = |f: fn(f64, f64) -> f64, init: f64, g: fn(&PixelPoint) -> f64| pts.iter().map(g).fold(init, f);
        (
            fold(f64::min, f64::INFINITY, |p| p.u) - OCCLUDER_MARGIN,
            fold(f64::min, f64::INFINITY, |p| p.v) - OCCLUDER_MARGIN,
            fold(f64::max, f64::NEG_INFINITY, |p| p.u) + OCCLUDER_MARGIN,
            fold(f64::max, f64::NEG_INFINITY, |p| p.v) + OCCLUDER_MARGIN,
        )
    });
    GrayImage::from_fn(WIDTH, HEIGHT, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        if let (Some(occ), Some((x0, y0, x1, y1))) = (occluder, cover) {
            if xf >= x0 && xf <= x1 && yf >= y0 && yf <= y1 {
                return occ.get(x, y);
            }
        }
        warp_point(&inv, PixelPoint::new(xf, yf))
            .ok()
            .and_then(|p| world.bilinear_sample(p))
            .map_or_else(|| background.get(x, y), |v| v.round() as f32)
    })
}

/// Builds the sequence deterministically from `seed`. Frame 0 is the
/// reference; the template is hidden for 10 frames and reappears about
/// 160 px away, rotated by 4 degrees.
pub fn occlusion_sequence(seed: u64) -> SyntheticSequence {
    let world = textured_scene(WIDTH, HEIGHT, seed);
    let background = textured_scene(WIDTH, HEIGHT, seed.wrapping_add(1));
    let occluder = textured_scene(WIDTH, HEIGHT, seed.wrapping_add(2));

    let mut poses = Vec::new();
    for k in 0..PRE_FRAMES + OCCLUDED_FRAMES {
        poses.push((pose(2.0 * k as f64, k as f64, 0.003 * k as f64), k >= PRE_FRAMES));
    }
    let theta = 4f64.to_radians();
    for j in 0..POST_FRAMES {
        poses.push((pose(150.0 + 2.0 * j as f64, 60.0 + j as f64, theta), false));
    }

    let mut frames = Vec::new();
    let mut images = Vec::new();
    for (k, (h, occluded)) in poses.into_iter().enumerate() {
        images.push(render(&world, &background, occluded.then_some(&occluder), &h));
        frames.push(FrameTruth { file: format!("frame_{k:03}.png"), h, occluded });
    }
    SyntheticSequence { template: TEMPLATE, ref_frame: 0, reappearance: PRE_FRAMES + OCCLUDED_FRAMES, frames, images }
}

impl SyntheticSequence {
    /// Writes the frames as PNG plus `ground_truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), TrackerError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (truth, image) in self.frames.iter().zip(&self.images) {
            image.save(dir.join(&truth.file))?;
        }
        let path = dir.join("ground_truth.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(io_err(&path))
    }

    /// Reads `ground_truth.json` from `dir`; images are not loaded.
    pub fn read_truth(dir: &Path) -> Result<SyntheticSequence, TrackerError> {
        let path = dir.join("ground_truth.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_ops::zncc;

    fn template_pixels(img: &GrayImage, h: &HomographyMatrix) -> Vec<f64> {
        TemplateRegion { rect: TEMPLATE }
            .pixels()
            .map(|p| img.bilinear_sample(warp_point(h, p).unwrap()).unwrap_or(0.0))
            .collect()
    }

    #[test]
    fn layout_and_visibility() {
        let seq = occlusion_sequence(4);
        assert_eq!(seq.frames.len(), 22);
        assert_eq!(seq.reappearance, 18);
        assert_eq!(seq.frames[0].h, HomographyMatrix::identity());
        let reference = template_pixels(&seq.images[0], &HomographyMatrix::identity());
        for (truth, img) in seq.frames.iter().zip(&seq.images) {
            let score = zncc(&reference, &template_pixels(img, &truth.h), None).unwrap();
            if truth.occluded {
                assert!(score < 0.3, "{}: {score}", truth.file);
            } else {
                assert!(score > 0.95, "{}: {score}", truth.file);
            }
        }
        let c = warp_point(&seq.frames[18].h, PixelPoint::new(239.5, 179.5)).unwrap();
        assert!((c.u - 389.5).abs() < 1e-9 && (c.v - 239.5).abs() < 1e-9);
    }

    #[test]
    fn truth_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let seq = occlusion_sequence(4);
        seq.write(dir.path()).unwrap();
        let back = SyntheticSequence::read_truth(dir.path()).unwrap();
        assert_eq!(back.frames, seq.frames);
        let img = GrayImage::load(dir.path().join("frame_005.png")).unwrap();
        assert_eq!(img, seq.images[5]);
    }
}
