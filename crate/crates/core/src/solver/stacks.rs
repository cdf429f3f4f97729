//! Residual stacks and their Jacobians with respect to the left increment
//! `z = (v, d_alpha, d_beta)` applied as `x(z) o x_hat`.

use super::{Estimate, SolverError, TemplateLevel, PARAMS};
use crate::features::FeatureMatch;
use crate::geometry::{warp_generator_derivatives, warp_point, PixelPoint, SL3_DIM};
use crate::image_ops::{level_scale, scale_homography, GrayImage};

/// Rows of residuals with matching Jacobian rows over all ten parameters
/// (eight sl(3) coordinates, then gain, then bias).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualStack {
    pub residuals: Vec<f64>,
    pub jacobian: Vec<[f64; PARAMS]>,
}

impl ResidualStack {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn squared_norm(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    pub fn mean_square(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.squared_norm() / self.len() as f64
        }
    }
}

/// How the sl(3) columns of the intensity Jacobian are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianKind {
    /// Gradient of the interpolated current image only: the exact
    /// derivative of the residual at `z = 0`.
    FirstOrder,
    /// Mean of the current-image and reference-template gradients, the
    /// reference gradient being mapped into the current frame.
    Esm,
}

/// Derivatives of the level-`level` warp with respect to the full-resolution
/// generators, at a point `q` given in level coordinates.
#[inline]
fn level_generator_derivatives(q: PixelPoint, scale: f64) -> [[f64; 2]; SL3_DIM] {
    let full = warp_generator_derivatives(PixelPoint::new(q.u / scale, q.v / scale));
    full.map(|[a, b]| [a * scale, b * scale])
}

/// Intensity residuals `a_i = alpha * I(w(H, p*_i)) + beta - I*(p*_i)` over
/// the template pixels that land inside `current` (a pyramid level).
///
/// Returns the stack (one row per valid pixel, so `m'` is its length).
pub fn ib_residuals_and_jacobian(
    template: &TemplateLevel,
    level: usize,
    current: &GrayImage,
    estimate: &Estimate,
    kind: JacobianKind,
    min_valid_fraction: f64,
) -> Result<ResidualStack, SolverError> {
    let scale = level_scale(level);
    let h = scale_homography(&estimate.homography, 0, level);
    let (alpha, beta) = (estimate.photometric.alpha, estimate.photometric.beta);
    let m = template.points.len();
    let mut stack = ResidualStack { residuals: Vec::with_capacity(m), jacobian: Vec::with_capacity(m) };
    for i in 0..m {
        let p = template.points[i];
        let Ok(q) = warp_point(&h, p) else { continue };
        let Some((value, du, dv)) = current.bilinear_sample_with_gradient(q) else {
            continue;
        };
        let (gu, gv) = match kind {
            JacobianKind::FirstOrder => (alpha * du, alpha * dv),
            JacobianKind::Esm => {
                let Ok(jw) = h.point_jacobian(p) else { continue };
                let det = jw[0][0] * jw[1][1] - jw[0][1] * jw[1][0];
                if det.abs() < 1e-12 {
                    continue;
                }
                // Row vector times the inverse point Jacobian.
                let (tu, tv) = (template.grad_u[i], template.grad_v[i]);
                let ru = (tu * jw[1][1] - tv * jw[1][0]) / det;
                let rv = (-tu * jw[0][1] + tv * jw[0][0]) / det;
                (0.5 * (alpha * du + ru), 0.5 * (alpha * dv + rv))
            }
        };
        let d = level_generator_derivatives(q, scale);
        let mut row = [0.0; PARAMS];
        for (k, dk) in d.iter().enumerate() {
            row[k] = gu * dk[0] + gv * dk[1];
        }
        row[SL3_DIM] = value;
        row[SL3_DIM + 1] = 1.0;
        stack.residuals.push(alpha * value + beta - template.intensities[i]);
        stack.jacobian.push(row);
    }
    let required = ((min_valid_fraction * m as f64).ceil() as usize).max(1);
    if stack.len() < required {
        return Err(SolverError::TemplateLost { valid: stack.len(), required });
    }
    Ok(stack)
}

/// Feature transfer residuals `(b^u_j, b^v_j) = w(H, q*_j) - q_j`, expressed in
/// level-`level` pixels. Photometric columns are zero.
///
/// With `huber = Some(k)`, rows of a match whose full-resolution transfer
/// error `r` exceeds `k` are scaled by `sqrt(k / r)`.
pub fn fb_residuals_and_jacobian(
    matches: &[FeatureMatch],
    level: usize,
    estimate: &Estimate,
    huber: Option<f64>,
) -> ResidualStack {
    let scale = level_scale(level);
    let mut stack = ResidualStack {
        residuals: Vec::with_capacity(2 * matches.len()),
        jacobian: Vec::with_capacity(2 * matches.len()),
    };
    for m in matches {
        let Ok(x) = warp_point(&estimate.homography, m.q_star) else {
            continue;
        };
        let (bu, bv) = (x.u - m.q.u, x.v - m.q.v);
        let robust = match huber {
            Some(k) => {
                let r = bu.hypot(bv);
                if r > k {
                    (k / r).sqrt()
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let f = scale * robust;
        let d = warp_generator_derivatives(x);
        let mut row_u = [0.0; PARAMS];
        let mut row_v = [0.0; PARAMS];
        for k in 0..SL3_DIM {
            row_u[k] = f * d[k][0];
            row_v[k] = f * d[k][1];
        }
        stack.residuals.push(f * bu);
        stack.jacobian.push(row_u);
        stack.residuals.push(f * bv);
        stack.jacobian.push(row_v);
    }
    stack
}
