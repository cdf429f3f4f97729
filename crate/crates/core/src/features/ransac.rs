use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatch};
use crate::geometry::{dlt_homography, has_collinear_triple, warp_point, HomographyMatrix, PixelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the symmetric transfer error, in pixels.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold: 3.0, confidence: 0.995, max_iterations: 1000, min_inliers: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit {
    pub homography: HomographyMatrix,
    pub inliers: Vec<bool>,
}

impl RobustFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    pub fn inlier_matches(&self, matches: &[FeatureMatch]) -> Vec<FeatureMatch> {
        matches.iter().zip(&self.inliers).filter(|(_, &keep)| keep).map(|(m, _)| *m).collect()
    }
}

/// RMS of the forward and backward transfer distances; infinite when either
/// direction hits the line at infinity.
fn symmetric_transfer_error(h: &HomographyMatrix, h_inv: &HomographyMatrix, m: &FeatureMatch) -> f64 {
    let (Ok(fwd), Ok(bwd)) = (warp_point(h, m.q_star), warp_point(h_inv, m.q)) else {
        return f64::INFINITY;
    };
    ((fwd.distance(&m.q).powi(2) + bwd.distance(&m.q_star).powi(2)) / 2.0).sqrt()
}

/// Inlier flags and summed error of the inliers.
fn score(h: &HomographyMatrix, matches: &[FeatureMatch], threshold: f64) -> Option<(Vec<bool>, usize, f64)> {
    let h_inv = h.inverse().ok()?;
    let mut flags = Vec::with_capacity(matches.len());
    let (mut count, mut total) = (0, 0.0);
    for m in matches {
        let e = symmetric_transfer_error(h, &h_inv, m);
        let inlier = e <= threshold;
        if inlier {
            count += 1;
            total += e;
        }
        flags.push(inlier);
    }
    Some((flags, count, total))
}

fn refit(matches: &[FeatureMatch], flags: &[bool]) -> Option<HomographyMatrix> {
    let pairs: Vec<(PixelPoint, PixelPoint)> =
        matches.iter().zip(flags).filter(|(_, &f)| f).map(|(m, _)| (m.q_star, m.q)).collect();
    dlt_homography(&pairs).ok()
}

/// RANSAC over minimal 4-point DLT fits, followed by a DLT refit on the
/// consensus set.
pub fn robust_homography(matches: &[FeatureMatch], config: &RansacConfig) -> Result<RobustFit, FeatureError> {
    let n = matches.len();
    let min_inliers = config.min_inliers.max(4);
    if n < 4 {
        return Err(FeatureError::GlobalEstimationFailed(format!("{n} matches, need at least 4")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Vec<bool>, usize, f64)> = None;
    let mut needed = config.max_iterations;
    let mut iteration = 0;
    while iteration < needed.min(config.max_iterations) {
        iteration += 1;
        let idx = sample(&mut rng, n, 4).into_vec();
        let src = [0, 1, 2, 3].map(|k| matches[idx[k]].q_star);
        let dst = [0, 1, 2, 3].map(|k| matches[idx[k]].q);
        if has_collinear_triple(&src) || has_collinear_triple(&dst) {
            continue;
        }
        let pairs: Vec<_> = src.iter().copied().zip(dst.iter().copied()).collect();
        let Ok(h) = dlt_homography(&pairs) else {
            continue;
        };
        let Some(candidate) = score(&h, matches, config.threshold) else {
            continue;
        };
        let better = best.as_ref().is_none_or(|b| candidate.1 > b.1 || (candidate.1 == b.1 && candidate.2 < b.2));
        if better {
            let ratio = candidate.1 as f64 / n as f64;
            let p_fail = 1.0 - ratio.powi(4);
            needed = if p_fail <= f64::EPSILON {
                0
            } else {
                let k = (1.0 - config.confidence).ln() / p_fail.ln();
                k.ceil().max(1.0) as usize
            };
            best = Some(candidate);
        }
    }
    let Some((mut flags, mut count, _)) = best else {
        return Err(FeatureError::GlobalEstimationFailed("no non-degenerate sample".into()));
    };
    if count < min_inliers {
        return Err(FeatureError::GlobalEstimationFailed(format!(
            "best model has {count} inliers, need {min_inliers}"
        )));
    }
    let mut h = refit(matches, &flags)
        .ok_or_else(|| FeatureError::GlobalEstimationFailed("degenerate consensus set".into()))?;
    // Re-score with the refit and grow the consensus while it improves.
    for _ in 0..5 {
        let Some((new_flags, new_count, _)) = score(&h, matches, config.threshold) else {
            break;
        };
        if new_count < count || new_flags == flags {
            break;
        }
        match refit(matches, &new_flags) {
            Some(next) => {
                flags = new_flags;
                count = new_count;
                h = next;
            }
            None => break,
        }
    }
    if let Some((final_flags, final_count, _)) = score(&h, matches, config.threshold) {
        if final_count >= min_inliers {
            flags = final_flags;
        }
    }
    Ok(RobustFit { homography: h, inliers: flags })
}
