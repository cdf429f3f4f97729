//! Global affine illumination model `I' = alpha * I + beta`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    /// Gain (contrast).
    pub alpha: f64,
    /// Bias (brightness), in intensity units.
    pub beta: f64,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl PhotometricParams {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub const fn identity() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }

    /// Not clamped: residuals are formed on real values.
    #[inline]
    pub fn apply(&self, intensity: f64) -> f64 {
        self.alpha * intensity + self.beta
    }

    /// Additive composition of an increment onto the current estimate.
    pub fn compose(increment: &PhotometricParams, current: &PhotometricParams) -> PhotometricParams {
        PhotometricParams { alpha: current.alpha + increment.alpha, beta: current.beta + increment.beta }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite()
    }

    /// Gain at or below zero inverts contrast; only reported, never enforced.
    pub fn has_nonpositive_gain(&self) -> bool {
        self.alpha <= 0.0
    }
}
