//! SL(3) homography algebra.
//!
//! Homographies are parametrized through the Lie algebra sl(3): an 8-vector
//! `v` is mapped to a traceless matrix `A(v)` over a fixed generator basis and
//! then to the group through the matrix exponential. Increments are composed
//! on the left, `H <- exp(A(v)) * H`, so the algebra acts in the frame of the
//! current image.

use nalgebra::{DMatrix, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of degrees of freedom of a homography.
pub const SL3_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not traceless (trace = {0:e})")]
    NotTraceless(f64),
    #[error("point maps to infinity (denominator = {0:e})")]
    PointAtInfinity(f64),
    #[error("degenerate homography (determinant = {0:e})")]
    DegenerateHomography(f64),
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate point configuration (rank deficient)")]
    RankDeficient,
}

/// A pixel position with an implicit homogeneous coordinate of 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

/// Four corners ordered top-left, top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerQuad(pub [PixelPoint; 4]);

impl CornerQuad {
    pub fn points(&self) -> &[PixelPoint; 4] {
        &self.0
    }

    /// Warps every corner, preserving the ordering.
    pub fn warp(&self, h: &HomographyMatrix) -> Result<CornerQuad, GeometryError> {
        let mut out = self.0;
        for p in out.iter_mut() {
            *p = warp_point(h, *p)?;
        }
        Ok(CornerQuad(out))
    }

    /// True when the quad is strictly convex with consistent winding, which
    /// also rules out self-intersection and collinear corner triples.
    pub fn is_strictly_convex(&self) -> bool {
        let p = &self.0;
        let mut sign = 0.0;
        for i in 0..4 {
            let a = p[i];
            let b = p[(i + 1) % 4];
            let c = p[(i + 2) % 4];
            let cross = (b.u - a.u) * (c.v - b.v) - (b.v - a.v) * (c.u - b.u);
            if cross.abs() < 1e-9 {
                return false;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }
}

/// Coordinates of the Lie algebra sl(3) over the generator basis used by
/// [`sl3_generator_combination`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LieAlgebraVector(pub SVector<f64, SL3_DIM>);

impl LieAlgebraVector {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self(SVector::from_column_slice(v))
    }

    /// Increment that is a pure translation in the current image frame.
    pub fn translation(du: f64, dv: f64) -> Self {
        let mut v = SVector::zeros();
        v[0] = du;
        v[1] = dv;
        Self(v)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl std::ops::Neg for LieAlgebraVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

/// Builds `A(v) = sum_k v_k G_k` over the basis
///
/// | k | generator            | meaning              |
/// |---|----------------------|----------------------|
/// | 0 | E13                  | translation in u     |
/// | 1 | E23                  | translation in v     |
/// | 2 | E21 - E12            | rotation             |
/// | 3 | E11 - E22            | anisotropic scale    |
/// | 4 | E12 + E21            | shear                |
/// | 5 | E11 + E22 - 2 E33    | dilation             |
/// | 6 | E31                  | projective in u      |
/// | 7 | E32                  | projective in v      |
///
/// The `(2, 2)` entry is written as `-(a00 + a11)` so the trace is exactly
/// zero in floating point.
pub fn sl3_generator_combination(v: &LieAlgebraVector) -> Matrix3<f64> {
    let v = &v.0;
    let a00 = v[3] + v[5];
    let a11 = v[5] - v[3];
    Matrix3::new(a00, v[4] - v[2], v[0], v[2] + v[4], a11, v[1], v[6], v[7], -(a00 + a11))
}

/// Derivative of the dehomogenized warp `w(exp(A(v)), q)` with respect to
/// each generator at `v = 0`, for a point `q` in the current frame.
pub fn warp_generator_derivatives(q: PixelPoint) -> [[f64; 2]; SL3_DIM] {
    let (x, y) = (q.u, q.v);
    [[1.0, 0.0], [0.0, 1.0], [-y, x], [x, -y], [y, x], [3.0 * x, 3.0 * y], [-x * x, -x * y], [-x * y, -y * y]]
}

const EXP_TAYLOR_TERMS: usize = 18;

/// Matrix exponential of a traceless 3x3 matrix via scaling and squaring of
/// a fixed-order Taylor series.
pub fn exp_sl3(a: &Matrix3<f64>) -> Result<HomographyMatrix, GeometryError> {
    let trace = a.trace();
    if !trace.is_finite() || trace.abs() > 1e-12 * a.abs().max().max(1.0) {
        return Err(GeometryError::NotTraceless(trace));
    }
    Ok(HomographyMatrix(expm(a)))
}

fn expm(a: &Matrix3<f64>) -> Matrix3<f64> {
    // 1-norm (max column sum) drives the number of squarings.
    let norm = (0..3).map(|c| a.column(c).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(squarings);
    let mut result = Matrix3::identity();
    let mut term = Matrix3::identity();
    for k in 1..=EXP_TAYLOR_TERMS {
        term = term * b / k as f64;
        result += term;
    }
    for _ in 0..squarings {
        result = result * result;
    }
    result
}

/// A 3x3 projective transformation mapping reference-image pixels to
/// current-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 9]", into = "[f64; 9]")]
pub struct HomographyMatrix(Matrix3<f64>);

impl From<[f64; 9]> for HomographyMatrix {
    fn from(e: [f64; 9]) -> Self {
        Self(Matrix3::from_row_slice(&e))
    }
}

impl From<HomographyMatrix> for [f64; 9] {
    fn from(h: HomographyMatrix) -> Self {
        let m = &h.0;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }
}

impl Default for HomographyMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl HomographyMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a raw matrix as-is; no normalization is applied.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn translation(du: f64, dv: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, du, 0.0, 1.0, dv, 0.0, 0.0, 1.0))
    }

    /// `exp(A(v))`.
    pub fn from_lie(v: &LieAlgebraVector) -> Self {
        // A(v) is traceless by construction.
        Self(expm(&sl3_generator_combination(v)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn inverse(&self) -> Result<HomographyMatrix, GeometryError> {
        self.0.try_inverse().map(HomographyMatrix).ok_or(GeometryError::DegenerateHomography(self.determinant()))
    }

    /// Copy scaled so that `h33 = 1`, when that entry is nonzero.
    pub fn h33_normalized(&self) -> Option<Matrix3<f64>> {
        let h33 = self.0[(2, 2)];
        (h33 != 0.0).then(|| self.0 / h33)
    }

    /// Jacobian of `w(H, p)` with respect to `p`.
    pub fn point_jacobian(&self, p: PixelPoint) -> Result<[[f64; 2]; 2], GeometryError> {
        let h = &self.0;
        let den = h[(2, 0)] * p.u + h[(2, 1)] * p.v + h[(2, 2)];
        if den.abs() < 1e-12 {
            return Err(GeometryError::PointAtInfinity(den));
        }
        let x = (h[(0, 0)] * p.u + h[(0, 1)] * p.v + h[(0, 2)]) / den;
        let y = (h[(1, 0)] * p.u + h[(1, 1)] * p.v + h[(1, 2)]) / den;
        Ok([
            [(h[(0, 0)] - x * h[(2, 0)]) / den, (h[(0, 1)] - x * h[(2, 1)]) / den],
            [(h[(1, 0)] - y * h[(2, 0)]) / den, (h[(1, 1)] - y * h[(2, 1)]) / den],
        ])
    }
}

/// Dehomogenized image of `p` under `h`.
pub fn warp_point(h: &HomographyMatrix, p: PixelPoint) -> Result<PixelPoint, GeometryError> {
    let r = h.0 * p.homogeneous();
    if r.z.abs() < 1e-12 {
        return Err(GeometryError::PointAtInfinity(r.z));
    }
    Ok(PixelPoint::new(r.x / r.z, r.y / r.z))
}

/// `h1 * h2`, renormalized to unit determinant.
pub fn compose(h1: &HomographyMatrix, h2: &HomographyMatrix) -> HomographyMatrix {
    let product = HomographyMatrix(h1.0 * h2.0);
    normalize_det(&product).unwrap_or(product)
}

/// Scales `h` into SL(3) using the real cube root of its determinant,
/// flipping the sign first when the determinant is negative.
pub fn normalize_det(h: &HomographyMatrix) -> Result<HomographyMatrix, GeometryError> {
    let det = h.determinant();
    let scale = h.0.norm().powi(3);
    if !det.is_finite() || det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(GeometryError::DegenerateHomography(det));
    }
    let m = if det < 0.0 { -h.0 } else { h.0 };
    Ok(HomographyMatrix(m / det.abs().cbrt()))
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn hartley_normalization(points: &[PixelPoint]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let cu = points.iter().map(|p| p.u).sum::<f64>() / n;
    let cv = points.iter().map(|p| p.v).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| (p.u - cu).hypot(p.v - cv)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cu, 0.0, s, -s * cv, 0.0, 0.0, 1.0)
}

fn collinear(a: PixelPoint, b: PixelPoint, c: PixelPoint) -> bool {
    let cross = (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u);
    let scale = a.distance(&b).max(a.distance(&c)).max(b.distance(&c));
    cross.abs() <= 1e-9 * scale * scale.max(1.0)
}

/// True when any three of the four points are collinear.
pub fn has_collinear_triple(points: &[PixelPoint; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| collinear(points[t[0]], points[t[1]], points[t[2]]))
}

/// Normalized direct linear transform. `pairs` are `(source, target)`;
/// the result maps sources onto targets and lies in SL(3).
pub fn dlt_homography(pairs: &[(PixelPoint, PixelPoint)]) -> Result<HomographyMatrix, GeometryError> {
    let n = pairs.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences(n));
    }
    if n == 4 {
        let src = [pairs[0].0, pairs[1].0, pairs[2].0, pairs[3].0];
        let dst = [pairs[0].1, pairs[1].1, pairs[2].1, pairs[3].1];
        if has_collinear_triple(&src) || has_collinear_triple(&dst) {
            return Err(GeometryError::RankDeficient);
        }
    }
    let src: Vec<PixelPoint> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<PixelPoint> = pairs.iter().map(|p| p.1).collect();
    let ts = hartley_normalization(&src);
    let td = hartley_normalization(&dst);

    // Padded to at least 9 rows so the SVD exposes the full right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = ts * s.homogeneous();
        let d = td * d.homogeneous();
        let (x, y) = (s.x, s.y);
        let (u, v) = (d.x, d.y);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::RankDeficient)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = order[0];
    let largest = svd.singular_values[order[order.len() - 1]];
    // A unique solution needs a one-dimensional null space.
    if svd.singular_values[order[1]] <= 1e-10 * largest {
        return Err(GeometryError::RankDeficient);
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(GeometryError::RankDeficient)?;
    let m = td_inv * hn * ts;
    let m = m / m.norm();
    normalize_det(&HomographyMatrix(m)).map_err(|_| GeometryError::RankDeficient)
}

/// Root-mean-square over the four corners of the distance between their
/// images under `h_est` and under `h_true`.
pub fn corner_rms_error(
    h_est: &HomographyMatrix,
    h_true: &HomographyMatrix,
    corners: &CornerQuad,
) -> Result<f64, GeometryError> {
    let mut sum = 0.0;
    for c in corners.points() {
        let a = warp_point(h_est, *c)?;
        let b = warp_point(h_true, *c)?;
        sum += (a.u - b.u).powi(2) + (a.v - b.v).powi(2);
    }
    Ok((sum / 4.0).sqrt())
}
