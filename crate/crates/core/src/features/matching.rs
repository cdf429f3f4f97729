use serde::{Deserialize, Serialize};

use super::{Feature, FeatureMatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    /// Maximum best/second-best distance ratio.
    pub ratio: f64,
    /// Keep only pairs that are each other's nearest neighbour.
    pub mutual: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { ratio: 0.8, mutual: true }
    }
}

/// Nearest and second-nearest candidate distances.
fn two_nearest(query: &Feature, pool: &[Feature]) -> Option<(usize, f64, Option<f64>)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second: Option<f64> = None;
    for (j, cand) in pool.iter().enumerate() {
        let d = query.descriptor.distance(&cand.descriptor);
        if !d.is_finite() {
            continue;
        }
        match best {
            Some((_, bd)) if d >= bd => {
                if second.is_none_or(|s| d < s) {
                    second = Some(d);
                }
            }
            _ => {
                if let Some((_, bd)) = best {
                    second = Some(bd);
                }
                best = Some((j, d));
            }
        }
    }
    best.map(|(j, d)| (j, d, second))
}

/// Brute-force matching of reference-template features against current-image
/// features with Lowe's ratio test and an optional mutual-best check.
pub fn match_descriptors(reference: &[Feature], current: &[Feature], config: &MatcherConfig) -> Vec<FeatureMatch> {
    if reference.is_empty() || current.is_empty() {
        return Vec::new();
    }
    let backward: Vec<Option<usize>> = if config.mutual {
        current.iter().map(|c| two_nearest(c, reference).map(|(i, _, _)| i)).collect()
    } else {
        Vec::new()
    };
    let mut out = Vec::new();
    for (i, r) in reference.iter().enumerate() {
        let Some((j, best, second)) = two_nearest(r, current) else {
            continue;
        };
        // Equal distances are ambiguous regardless of the ratio.
        let passes_ratio = second.is_none_or(|s| best < s && best <= config.ratio * s);
        if !passes_ratio {
            continue;
        }
        if config.mutual && backward[j] != Some(i) {
            continue;
        }
        out.push(FeatureMatch { q_star: r.keypoint.position, q: current[j].keypoint.position, distance: best });
    }
    out
}
