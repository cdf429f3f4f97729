//! Keypoints, descriptors, matching and robust homography fitting for the
//! feature-based half of the estimator.

mod fast;
mod matching;
mod ransac;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{warp_point, GeometryError, HomographyMatrix, PixelPoint};
use crate::image_ops::{GrayImage, Rect};

pub use fast::{FastBriefBackend, FastBriefConfig};
pub use matching::{match_descriptors, MatcherConfig};
pub use ransac::{robust_homography, RansacConfig, RobustFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("global estimation failed: {0}")]
    GlobalEstimationFailed(String),
    #[error("no feature matches")]
    NoMatches,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub position: PixelPoint,
    pub response: f64,
    pub scale: f64,
    /// Dominant orientation in radians.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    /// Bit string compared with the Hamming distance.
    Binary(Vec<u64>),
    /// Real vector compared with the Euclidean distance.
    Real(Vec<f32>),
}

impl Descriptor {
    /// Distance between descriptors of the same kind and length; infinite
    /// otherwise.
    pub fn distance(&self, other: &Descriptor) -> f64 {
        match (self, other) {
            (Descriptor::Binary(a), Descriptor::Binary(b)) if a.len() == b.len() => {
                a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum::<u32>() as f64
            }
            (Descriptor::Real(a), Descriptor::Real(b)) if a.len() == b.len() => {
                a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
            }
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

/// Correspondence between a reference-template feature `q_star` and a
/// current-image feature `q`, both in full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub q_star: PixelPoint,
    pub q: PixelPoint,
    pub distance: f64,
}

/// Detector + descriptor pair. Implementations must be shareable across
/// threads.
pub trait FeatureBackend: Send + Sync {
    /// Keypoints sorted by decreasing response. When `region` is given,
    /// every returned position lies inside it.
    fn detect_and_describe(&self, img: &GrayImage, region: Option<&Rect>) -> Vec<Feature>;

    /// Radius of the support used around each keypoint, in pixels.
    fn patch_radius(&self) -> f64;
}

/// Root-mean-square transfer error `sqrt(1/n sum |w(H, q*_j) - q_j|^2)`.
pub fn rmsd_fb(h: &HomographyMatrix, matches: &[FeatureMatch]) -> Result<f64, FeatureError> {
    if matches.is_empty() {
        return Err(FeatureError::NoMatches);
    }
    let mut sum = 0.0;
    for m in matches {
        let p = warp_point(h, m.q_star)?;
        sum += (p.u - m.q.u).powi(2) + (p.v - m.q.v).powi(2);
    }
    Ok((sum / matches.len() as f64).sqrt())
}
