//! Exhaustive integer-translation search at the coarsest pyramid level.

use super::TemplateLevel;
use crate::geometry::{warp_point, HomographyMatrix};
use crate::image_ops::{level_scale, scale_homography, GrayImage};

/// Result of the translation search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorOutcome {
    pub homography: HomographyMatrix,
    /// Winning displacement in level pixels; `(0, 0)` when nothing was found.
    pub displacement: (i32, i32),
    /// Best correlation, if any candidate had a defined one.
    pub score: Option<f64>,
}

struct Sample {
    x: isize,
    y: isize,
    fx: f64,
    fy: f64,
}

/// Tries every integer displacement `d` with `|d_u|, |d_v| <= radius` of the
/// warped template at pyramid level `level` and keeps the one maximising the
/// correlation with the template. The displacement is left-composed onto `h`
/// (after scaling back to full resolution). Ties go to the smaller
/// displacement, then lexicographically smaller `(d_u, d_v)`.
///
/// Candidates that keep less than half the template inside the image are
/// skipped. When no candidate is usable, `h` is returned unchanged.
pub fn zncc_predictor(
    template: &TemplateLevel,
    level: usize,
    current: &GrayImage,
    h: &HomographyMatrix,
    radius: usize,
) -> PredictorOutcome {
    let unchanged = PredictorOutcome { homography: *h, displacement: (0, 0), score: None };
    let h_level = scale_homography(h, 0, level);
    let mut samples = Vec::with_capacity(template.points.len());
    let mut refs = Vec::with_capacity(template.points.len());
    for (p, &t) in template.points.iter().zip(&template.intensities) {
        let Ok(q) = warp_point(&h_level, *p) else { continue };
        if !q.is_finite() || q.u.abs() > 1e7 || q.v.abs() > 1e7 {
            continue;
        }
        let (x0, y0) = (q.u.floor(), q.v.floor());
        samples.push(Sample { x: x0 as isize, y: y0 as isize, fx: q.u - x0, fy: q.v - y0 });
        refs.push(t);
    }
    let needed = template.points.len().div_ceil(2).max(2);
    if samples.len() < needed {
        return unchanged;
    }

    let r = radius as i32;
    let mut candidates: Vec<(i32, i32)> = (-r..=r).flat_map(|du| (-r..=r).map(move |dv| (du, dv))).collect();
    candidates.sort_by_key(|&(du, dv)| (du * du + dv * dv, du, dv));

    let (w, hgt) = (current.width() as isize, current.height() as isize);
    let data = current.data();
    let mut best: Option<((i32, i32), f64)> = None;
    for (du, dv) in candidates {
        let (mut n, mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (s, &a) in samples.iter().zip(&refs) {
            let (x, y) = (s.x + du as isize, s.y + dv as isize);
            if x < 0 || y < 0 || x + 1 >= w || y + 1 >= hgt {
                continue;
            }
            let i = (y * w + x) as usize;
            let (v00, v10) = (data[i] as f64, data[i + 1] as f64);
            let (v01, v11) = (data[i + w as usize] as f64, data[i + w as usize + 1] as f64);
            let top = v00 + s.fx * (v10 - v00);
            let bottom = v01 + s.fx * (v11 - v01);
            let b = top + s.fy * (bottom - top);
            n += 1.0;
            sa += a;
            sb += b;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        if (n as usize) < needed {
            continue;
        }
        let cov = sab - sa * sb / n;
        let va = saa - sa * sa / n;
        let vb = sbb - sb * sb / n;
        if va <= 1e-9 * n || vb <= 1e-9 * n {
            continue;
        }
        let score = cov / (va * vb).sqrt();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some(((du, dv), score));
        }
    }
    let Some(((du, dv), score)) = best else {
        return unchanged;
    };
    let f = 1.0 / level_scale(level);
    let shift = HomographyMatrix::translation(du as f64 * f, dv as f64 * f);
    PredictorOutcome {
        homography: HomographyMatrix::from_matrix(shift.matrix() * h.matrix()),
        displacement: (du, dv),
        score: Some(score),
    }
}
