//! Weighting, damped normal equations and the update rule.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::stacks::ResidualStack;
use super::{Estimate, SolverError, PARAMS};
use crate::geometry::{exp_sl3, normalize_det, sl3_generator_combination, LieAlgebraVector, SL3_DIM};
use crate::photometric::PhotometricParams;

/// Relative weights of the intensity and feature parts. They sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub ib: f64,
    pub fb: f64,
}

impl Weights {
    pub const fn pure_ib() -> Self {
        Self { ib: 1.0, fb: 0.0 }
    }

    pub const fn pure_fb() -> Self {
        Self { ib: 0.0, fb: 1.0 }
    }
}

/// `w_FB = 1 - exp(-d_FB)`, `w_IB = 1 - w_FB`.
pub fn compute_weights(d_fb: f64) -> Result<Weights, SolverError> {
    if d_fb.is_nan() || d_fb < 0.0 {
        return Err(SolverError::InvalidDistance(d_fb));
    }
    let fb = -(-d_fb).exp_m1();
    Ok(Weights { ib: 1.0 - fb, fb })
}

/// Increment `z = (v, d_alpha, d_beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateVector {
    pub v: LieAlgebraVector,
    pub photometric: PhotometricParams,
}

impl UpdateVector {
    pub fn zeros() -> Self {
        Self { v: LieAlgebraVector::zeros(), photometric: PhotometricParams::new(0.0, 0.0) }
    }

    pub fn from_slice(z: &[f64]) -> Self {
        let mut out = Self::zeros();
        out.v = LieAlgebraVector::from_slice(&z[..SL3_DIM]);
        if z.len() >= PARAMS {
            out.photometric = PhotometricParams::new(z[SL3_DIM], z[SL3_DIM + 1]);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        let p = &self.photometric;
        (self.v.norm().powi(2) + p.alpha * p.alpha + p.beta * p.beta).sqrt()
    }
}

/// Relative size below which a normal-matrix diagonal entry is treated as
/// zero.
const NEGLIGIBLE: f64 = 1e-14;

type Mat = SMatrix<f64, PARAMS, PARAMS>;
type Vector = SVector<f64, PARAMS>;

fn accumulate(stack: &ResidualStack, scale: f64, n: &mut Mat, g: &mut Vector) {
    for (row, r) in stack.jacobian.iter().zip(&stack.residuals) {
        for i in 0..PARAMS {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            g[i] += scale * ri * r;
            for j in i..PARAMS {
                n[(i, j)] += scale * ri * row[j];
            }
        }
    }
}

/// Solves the damped weighted normal equations
/// `(J^T J + lambda diag(J^T J)) z = -J^T y`, where the intensity rows are
/// scaled by `sqrt(w_IB / m')` and the feature rows by `sqrt(w_FB / 2n)`.
///
/// Only the first eight unknowns are solved for when `photometric` is false;
/// the photometric increment is then zero.
pub fn assemble_and_solve(
    ib: Option<&ResidualStack>,
    fb: Option<&ResidualStack>,
    weights: Weights,
    damping: f64,
    photometric: bool,
) -> Result<UpdateVector, SolverError> {
    let ib = ib.filter(|s| !s.is_empty() && weights.ib > 0.0);
    let fb = fb.filter(|s| !s.is_empty() && weights.fb > 0.0);
    if ib.is_none() && fb.is_none() {
        return Err(SolverError::SingularSystem);
    }
    let mut n = Mat::zeros();
    let mut g = Vector::zeros();
    if let Some(s) = ib {
        accumulate(s, weights.ib / s.len() as f64, &mut n, &mut g);
    }
    if let Some(s) = fb {
        accumulate(s, weights.fb / s.len() as f64, &mut n, &mut g);
    }
    let dim = if photometric { PARAMS } else { SL3_DIM };
    let max_diag = (0..dim).map(|i| n[(i, i)]).fold(0.0, f64::max);
    if max_diag <= 0.0 || !max_diag.is_finite() {
        return Err(SolverError::SingularSystem);
    }
    // Unknowns without measurable influence keep a zero increment (e.g. the
    // photometric pair when the intensity weight has vanished).
    let active: Vec<usize> = (0..dim).filter(|&i| n[(i, i)] > NEGLIGIBLE * max_diag).collect();
    let k = active.len();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for (r, &i) in active.iter().enumerate() {
        b[r] = -g[i];
        for (c, &j) in active.iter().enumerate() {
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            a[(r, c)] = n[(lo, hi)];
        }
        a[(r, r)] *= 1.0 + damping;
    }
    let chol = a.cholesky().ok_or(SolverError::SingularSystem)?;
    let sol = chol.solve(&b);
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::SingularSystem);
    }
    let mut z = [0.0; PARAMS];
    for (r, &i) in active.iter().enumerate() {
        z[i] = sol[r];
    }
    Ok(UpdateVector::from_slice(&z))
}

/// `H <- normalize_det(exp(A(v)) H)`, `(alpha, beta) += (d_alpha, d_beta)`.
pub fn apply_update(estimate: &Estimate, z: &UpdateVector) -> Result<Estimate, SolverError> {
    let step = exp_sl3(&sl3_generator_combination(&z.v))?;
    let h =
        normalize_det(&crate::geometry::HomographyMatrix::from_matrix(step.matrix() * estimate.homography.matrix()))?;
    Ok(Estimate { homography: h, photometric: PhotometricParams::compose(&z.photometric, &estimate.photometric) })
}
