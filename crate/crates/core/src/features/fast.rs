//! FAST-9 segment-test corners with steered binary (BRIEF-style)
//! descriptors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Descriptor, Feature, FeatureBackend, Keypoint};
use crate::geometry::PixelPoint;
use crate::image_ops::{GrayImage, Rect, BLUR_KERNEL};

const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];
const ARC_LENGTH: usize = 9;
const PATCH_RADIUS: isize = 15;
const DESCRIPTOR_BITS: usize = 256;
// Rotated sampling pairs stay within ceil(15 * sqrt(2)) of the keypoint.
const KEYPOINT_BORDER: usize = 22;
// Two passes of the 5-tap blur reach 4 pixels; keeps window-edge effects
// out of every descriptor patch.
const WINDOW_MARGIN: usize = KEYPOINT_BORDER + 6;
const REFINE_RADIUS: isize = 3;
const REFINE_SIGMA: f64 = 1.5;
const REFINE_MAX_SHIFT: f64 = 2.0;
const REFINE_ITERATIONS: usize = 4;
const REFINE_MIN_ISOTROPY: f64 = 0.05;
const PATTERN_SEED: u64 = 0x0b21_ef00_5eed;
// Patch size / 5.
const PATTERN_SIGMA: f64 = 31.0 / 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastBriefConfig {
    /// Intensity difference for the segment test.
    pub threshold: f32,
    pub max_keypoints: usize,
}

impl Default for FastBriefConfig {
    fn default() -> Self {
        Self { threshold: 20.0, max_keypoints: 5000 }
    }
}

/// Default detector/descriptor backend.
#[derive(Debug, Clone)]
pub struct FastBriefBackend {
    config: FastBriefConfig,
    pattern: Vec<[(f64, f64); 2]>,
}

impl Default for FastBriefBackend {
    fn default() -> Self {
        Self::new(FastBriefConfig::default())
    }
}

impl FastBriefBackend {
    pub fn new(config: FastBriefConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let normal = Normal::new(0.0, PATTERN_SIGMA).unwrap();
        let mut draw = || {
            let v: f64 = normal.sample(&mut rng);
            v.round().clamp(-(PATCH_RADIUS as f64), PATCH_RADIUS as f64)
        };
        let pattern = (0..DESCRIPTOR_BITS).map(|_| [(draw(), draw()), (draw(), draw())]).collect();
        Self { config, pattern }
    }

    pub fn config(&self) -> &FastBriefConfig {
        &self.config
    }
}

/// Local window of the input with its blurred copy.
struct Window {
    origin: (usize, usize),
    raw: GrayImage,
    smooth: GrayImage,
}

impl Window {
    #[inline]
    fn raw_at(&self, x: usize, y: usize) -> f32 {
        self.raw.get(x - self.origin.0, y - self.origin.1)
    }

    #[inline]
    fn smooth_at(&self, x: isize, y: isize) -> f32 {
        self.smooth.get(x as usize - self.origin.0, y as usize - self.origin.1)
    }
}

fn blur(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, c) in BLUR_KERNEL.iter().enumerate() {
                acc += c * img.get(clamp(x as isize + k as isize - 2, w), y);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, c) in BLUR_KERNEL.iter().enumerate() {
                acc += c * tmp.get(x, clamp(y as isize + k as isize - 2, h));
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Segment-test score: summed excess contrast of the winning side, or 0
/// when no contiguous arc of [`ARC_LENGTH`] pixels exists.
fn fast_score(win: &Window, x: usize, y: usize, t: f32) -> f32 {
    let center = win.raw_at(x, y);
    let at = |k: usize| {
        let (dx, dy) = CIRCLE[k];
        win.raw_at((x as isize + dx) as usize, (y as isize + dy) as usize)
    };
    // Any arc of nine contains at least two of the four compass points.
    let compass = [at(0), at(4), at(8), at(12)];
    let bright_c = compass.iter().filter(|&&p| p > center + t).count();
    let dark_c = compass.iter().filter(|&&p| p < center - t).count();
    if bright_c < 2 && dark_c < 2 {
        return 0.0;
    }
    let ring: [f32; 16] = std::array::from_fn(at);
    let longest = |pred: &dyn Fn(f32) -> bool| {
        let (mut best, mut run) = (0, 0);
        for k in 0..32 {
            if pred(ring[k % 16]) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best.min(16)
    };
    let mut score = 0.0f32;
    if longest(&|p| p > center + t) >= ARC_LENGTH {
        score = score.max(ring.iter().filter(|&&p| p > center + t).map(|&p| p - center - t).sum());
    }
    if longest(&|p| p < center - t) >= ARC_LENGTH {
        score = score.max(ring.iter().filter(|&&p| p < center - t).map(|&p| center - t - p).sum());
    }
    score
}

impl FastBriefBackend {
    fn orientation(&self, win: &Window, x: usize, y: usize) -> f64 {
        let (mut m10, mut m01) = (0.0f64, 0.0f64);
        for dy in -PATCH_RADIUS..=PATCH_RADIUS {
            let span = ((PATCH_RADIUS * PATCH_RADIUS - dy * dy) as f64).sqrt() as isize;
            for dx in -span..=span {
                let v = win.raw_at((x as isize + dx) as usize, (y as isize + dy) as usize) as f64;
                m10 += dx as f64 * v;
                m01 += dy as f64 * v;
            }
        }
        m01.atan2(m10)
    }

    /// Point closest, in the least-squares sense, to all edge lines through
    /// a small neighbourhood: solves `sum(g g^T) q = sum(g g^T x)` over
    /// Gaussian-weighted gradients of the smoothed window, re-centred a few
    /// times. Falls back to the pixel itself when the structure tensor is
    /// edge-like or the solution strays too far.
    fn refine(&self, win: &Window, x: usize, y: usize) -> PixelPoint {
        let origin = PixelPoint::new(x as f64, y as f64);
        let mut p = origin;
        for _ in 0..REFINE_ITERATIONS {
            let (cx, cy) = (p.u.round() as isize, p.v.round() as isize);
            let (mut a00, mut a01, mut a11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -REFINE_RADIUS..=REFINE_RADIUS {
                for dx in -REFINE_RADIUS..=REFINE_RADIUS {
                    let (px, py) = (cx + dx, cy + dy);
                    let gx = 0.5 * (win.smooth_at(px + 1, py) - win.smooth_at(px - 1, py)) as f64;
                    let gy = 0.5 * (win.smooth_at(px, py + 1) - win.smooth_at(px, py - 1)) as f64;
                    let (ex, ey) = (px as f64 - p.u, py as f64 - p.v);
                    let w = (-(ex * ex + ey * ey) / (2.0 * REFINE_SIGMA * REFINE_SIGMA)).exp();
                    let (gxx, gxy, gyy) = (w * gx * gx, w * gx * gy, w * gy * gy);
                    a00 += gxx;
                    a01 += gxy;
                    a11 += gyy;
                    b0 += gxx * px as f64 + gxy * py as f64;
                    b1 += gxy * px as f64 + gyy * py as f64;
                }
            }
            let det = a00 * a11 - a01 * a01;
            let trace = a00 + a11;
            // Both eigenvalues must be comparable: a corner, not an edge.
            if trace <= 0.0 || det <= REFINE_MIN_ISOTROPY * trace * trace {
                return origin;
            }
            let next = PixelPoint::new((a11 * b0 - a01 * b1) / det, (a00 * b1 - a01 * b0) / det);
            if (next.u - origin.u).abs() > REFINE_MAX_SHIFT || (next.v - origin.v).abs() > REFINE_MAX_SHIFT {
                return origin;
            }
            let moved = next.distance(&p);
            p = next;
            if moved < 0.01 {
                break;
            }
        }
        p
    }

    fn describe(&self, win: &Window, x: usize, y: usize, angle: f64) -> Descriptor {
        let (s, c) = angle.sin_cos();
        let rot = |(px, py): (f64, f64)| {
            (x as isize + (c * px - s * py).round() as isize, y as isize + (s * px + c * py).round() as isize)
        };
        let mut bits = vec![0u64; DESCRIPTOR_BITS / 64];
        for (i, [a, b]) in self.pattern.iter().enumerate() {
            let (ax, ay) = rot(*a);
            let (bx, by) = rot(*b);
            if win.smooth_at(ax, ay) < win.smooth_at(bx, by) {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        Descriptor::Binary(bits)
    }
}

impl FeatureBackend for FastBriefBackend {
    fn detect_and_describe(&self, img: &GrayImage, region: Option<&Rect>) -> Vec<Feature> {
        let (w, h) = (img.width(), img.height());
        if w <= 2 * KEYPOINT_BORDER || h <= 2 * KEYPOINT_BORDER {
            return Vec::new();
        }
        let full = Rect::new(0, 0, w, h);
        let region = region.copied().unwrap_or(full);
        // Candidate positions: inside the region and far enough from the
        // image border for the rotated descriptor pattern.
        let x0 = region.x.max(KEYPOINT_BORDER);
        let y0 = region.y.max(KEYPOINT_BORDER);
        let x1 = (region.x + region.width).min(w - KEYPOINT_BORDER);
        let y1 = (region.y + region.height).min(h - KEYPOINT_BORDER);
        if x0 >= x1 || y0 >= y1 {
            return Vec::new();
        }
        let wx0 = x0.saturating_sub(WINDOW_MARGIN);
        let wy0 = y0.saturating_sub(WINDOW_MARGIN);
        let wx1 = (x1 + WINDOW_MARGIN).min(w);
        let wy1 = (y1 + WINDOW_MARGIN).min(h);
        let raw = img.crop(&Rect::new(wx0, wy0, wx1 - wx0, wy1 - wy0));
        let smooth = blur(&raw);
        let win = Window { origin: (wx0, wy0), raw, smooth };

        // Scores on the candidate area grown by one pixel for suppression.
        let (sx0, sy0) = (x0 - 1, y0 - 1);
        let (sw, sh) = (x1 - x0 + 2, y1 - y0 + 2);
        let mut scores = vec![0.0f32; sw * sh];
        for y in sy0..sy0 + sh {
            for x in sx0..sx0 + sw {
                let border_ok =
                    x >= KEYPOINT_BORDER && y >= KEYPOINT_BORDER && x < w - KEYPOINT_BORDER && y < h - KEYPOINT_BORDER;
                if border_ok {
                    scores[(y - sy0) * sw + (x - sx0)] = fast_score(&win, x, y, self.config.threshold);
                }
            }
        }
        let mut corners = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                let (lx, ly) = (x - sx0, y - sy0);
                let s = scores[ly * sw + lx];
                if s <= 0.0 {
                    continue;
                }
                // Strict maximum over earlier neighbours, non-strict over
                // later ones, so plateaus keep exactly one pixel.
                let mut is_max = true;
                'nms: for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let n = scores[(ly as isize + dy) as usize * sw + (lx as isize + dx) as usize];
                        let earlier = dy < 0 || (dy == 0 && dx < 0);
                        if n > s || (earlier && n == s) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if is_max {
                    corners.push((s, x, y));
                }
            }
        }
        corners.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        corners.truncate(self.config.max_keypoints);
        corners
            .into_iter()
            .map(|(s, x, y)| {
                let angle = self.orientation(&win, x, y);
                Feature {
                    keypoint: Keypoint { position: self.refine(&win, x, y), response: s as f64, scale: 1.0, angle },
                    descriptor: self.describe(&win, x, y, angle),
                }
            })
            .collect()
    }

    fn patch_radius(&self) -> f64 {
        PATCH_RADIUS as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(square: usize, n: usize, offset: usize) -> GrayImage {
        let size = 2 * offset + square * n;
        GrayImage::from_fn(size, size, |x, y| {
            if x < offset || y < offset || x >= offset + square * n || y >= offset + square * n {
                return 40.0;
            }
            let (cx, cy) = ((x - offset) / square, (y - offset) / square);
            if (cx + cy) % 2 == 0 {
                210.0
            } else {
                40.0
            }
        })
    }

    #[test]
    fn constant_image_has_no_features() {
        let img = GrayImage::from_fn(120, 90, |_, _| 128.0);
        assert!(FastBriefBackend::default().detect_and_describe(&img, None).is_empty());
    }

    #[test]
    fn checkerboard_corners_lie_on_the_grid() {
        let (square, n, offset) = (16, 6, 30);
        let img = checkerboard(square, n, offset);
        let feats = FastBriefBackend::default().detect_and_describe(&img, None);
        assert!(!feats.is_empty());
        for f in &feats {
            let p = f.keypoint.position;
            // Square boundaries sit between pixels offset + k*square - 1 and
            // offset + k*square.
            let near = |c: f64| (0..=n).any(|k| (c - ((offset + k * square) as f64 - 0.5)).abs() <= 2.0);
            assert!(near(p.u) && near(p.v), "corner {p:?} off the grid");
        }
    }

    #[test]
    fn region_restriction_is_respected_and_consistent() {
        let img = crate::synth::textured_scene(260, 200, 9);
        let backend = FastBriefBackend::default();
        let full = backend.detect_and_describe(&img, None);
        let region = Rect::new(70, 60, 90, 70);
        let local = backend.detect_and_describe(&img, Some(&region));
        assert!(!local.is_empty());
        for f in &local {
            assert!(region.contains(f.keypoint.position));
            let twin = full
                .iter()
                .find(|g| g.keypoint.position == f.keypoint.position)
                .expect("region detection is a subset of full detection");
            assert_eq!(twin.descriptor, f.descriptor);
        }
    }

    #[test]
    fn sorted_by_response_and_capped() {
        let img = crate::synth::textured_scene(300, 240, 4);
        let backend = FastBriefBackend::new(FastBriefConfig { threshold: 20.0, max_keypoints: 25 });
        let feats = backend.detect_and_describe(&img, None);
        assert_eq!(feats.len(), 25);
        assert!(feats.windows(2).all(|w| w[0].keypoint.response >= w[1].keypoint.response));
    }
}
