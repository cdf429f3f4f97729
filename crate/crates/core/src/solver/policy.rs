//! Choice between a local and a global feature search.

use serde::{Deserialize, Serialize};

use super::ReferenceTemplate;
use crate::features::{
    match_descriptors, robust_homography, FeatureBackend, FeatureMatch, MatcherConfig, RansacConfig,
};
use crate::geometry::HomographyMatrix;
use crate::image_ops::{warp_template, zncc, GrayImage, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SearchKind {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub kind: SearchKind,
    /// Correlation of the warped template with the reference, `None` when
    /// undefined.
    pub score: Option<f64>,
    /// Detection region for a local search.
    pub region: Option<Rect>,
    /// Matches kept for the feature residuals (RANSAC inliers).
    pub matches: Vec<FeatureMatch>,
    /// Robust full-image estimate that replaces the current one after a
    /// successful global search.
    pub replacement: Option<HomographyMatrix>,
    /// Why the global search failed, if it did.
    pub global_error: Option<String>,
}

/// Correlation between the template and the current image warped by `h`,
/// at full resolution.
pub fn alignment_score(template: &ReferenceTemplate, current: &GrayImage, h: &HomographyMatrix) -> Option<f64> {
    let warped = warp_template(current, h, &template.region().rect);
    if warped.valid_count() < 2 {
        return None;
    }
    zncc(&template.level(0).intensities, &warped.intensities, Some(&warped.valid)).ok()
}

/// Scores the current estimate; at or above `tau` features are searched in a
/// window around the predicted template, below it over the whole image
/// followed by a robust homography fit.
///
/// Local matches are filtered to the inliers of a robust fit; without a
/// consistent set of at least four, no matches are kept.
pub fn local_global_policy(
    template: &ReferenceTemplate,
    current: &GrayImage,
    h: &HomographyMatrix,
    tau: f64,
    backend: &dyn FeatureBackend,
    matcher: &MatcherConfig,
    ransac: &RansacConfig,
) -> SearchOutcome {
    let score = alignment_score(template, current, h);
    let local_region = if score.is_some_and(|s| s >= tau) {
        template
            .region()
            .corners()
            .warp(h)
            .ok()
            .and_then(|q| Rect::bounding(q.points(), backend.patch_radius(), current.width(), current.height()))
    } else {
        None
    };

    match local_region {
        Some(region) => {
            let found = backend.detect_and_describe(current, Some(&region));
            let raw = match_descriptors(template.features(), &found, matcher);
            let matches = match robust_homography(&raw, ransac) {
                Ok(fit) => fit.inlier_matches(&raw),
                Err(_) => Vec::new(),
            };
            SearchOutcome {
                kind: SearchKind::Local,
                score,
                region: Some(region),
                matches,
                replacement: None,
                global_error: None,
            }
        }
        None => {
            let found = backend.detect_and_describe(current, None);
            let raw = match_descriptors(template.features(), &found, matcher);
            let (matches, replacement, global_error) = match robust_homography(&raw, ransac) {
                Ok(fit) => (fit.inlier_matches(&raw), Some(fit.homography), None),
                Err(e) => (Vec::new(), None, Some(e.to_string())),
            };
            SearchOutcome { kind: SearchKind::Global, score, region: None, matches, replacement, global_error }
        }
    }
}
