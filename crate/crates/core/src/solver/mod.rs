//! The unified estimator: intensity and feature residuals stacked into one
//! damped Gauss-Newton problem, run coarse to fine.

mod normal;
mod policy;
mod predictor;
mod stacks;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{rmsd_fb, Feature, FeatureBackend, FeatureMatch, MatcherConfig, RansacConfig};
use crate::geometry::{normalize_det, GeometryError, HomographyMatrix, PixelPoint, SL3_DIM};
use crate::image_ops::{build_pyramid, image_gradient, GrayImage, ImageError, Rect, TemplateRegion};
use crate::photometric::PhotometricParams;

pub use normal::{apply_update, assemble_and_solve, compute_weights, UpdateVector, Weights};
pub use policy::{alignment_score, local_global_policy, SearchKind, SearchOutcome};
pub use predictor::{zncc_predictor, PredictorOutcome};
pub use stacks::{fb_residuals_and_jacobian, ib_residuals_and_jacobian, JacobianKind, ResidualStack};

/// Unknowns per step: eight sl(3) coordinates plus gain and bias.
pub const PARAMS: usize = SL3_DIM + 2;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("template lost: {valid} valid pixels, need {required}")]
    TemplateLost { valid: usize, required: usize },
    #[error("singular normal equations")]
    SingularSystem,
    #[error("invalid feature distance {0}")]
    InvalidDistance(f64),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolverMode {
    IbOnly,
    FbOnly,
    Unified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mode: SolverMode,
    /// Estimate the gain/bias pair alongside the warp.
    pub photometric: bool,
    /// Run the coarse translation search before everything else.
    pub predictor: bool,
    pub levels: usize,
    pub iterations_per_level: usize,
    /// Correlation threshold separating local from global feature search.
    pub tau: f64,
    pub predictor_radius: usize,
    /// Early stop on the step norm, checked per level.
    pub step_tolerance: f64,
    /// Initial Levenberg-Marquardt damping, reset at every level.
    pub damping: f64,
    pub ransac: RansacConfig,
    pub matcher: MatcherConfig,
    /// Huber threshold on feature transfer errors, in pixels.
    pub huber: Option<f64>,
    /// Fraction of template pixels that must stay inside the image.
    pub min_valid_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: SolverMode::Unified,
            photometric: true,
            predictor: true,
            levels: 3,
            iterations_per_level: 3,
            tau: 0.6,
            predictor_radius: 15,
            step_tolerance: 1e-6,
            damping: 1e-4,
            ransac: RansacConfig::default(),
            matcher: MatcherConfig::default(),
            huber: None,
            min_valid_fraction: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.to_string()));
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if self.iterations_per_level == 0 {
            return bad("iterations_per_level must be at least 1");
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [-1, 1]");
        }
        if self.damping < 0.0 || !self.damping.is_finite() {
            return bad("damping must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return bad("min_valid_fraction must lie in [0, 1]");
        }
        if self.huber.is_some_and(|k| k.is_nan() || k <= 0.0) {
            return bad("huber threshold must be positive");
        }
        Ok(())
    }
}

/// Current estimate `x_hat = (H, alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub homography: HomographyMatrix,
    pub photometric: PhotometricParams,
}

impl Estimate {
    pub fn new(homography: HomographyMatrix) -> Self {
        Self { homography, photometric: PhotometricParams::identity() }
    }
}

impl Default for Estimate {
    fn default() -> Self {
        Self::new(HomographyMatrix::identity())
    }
}

/// Template pixels of one pyramid level, in that level's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLevel {
    pub rect: Rect,
    pub points: Vec<PixelPoint>,
    pub intensities: Vec<f64>,
    pub grad_u: Vec<f64>,
    pub grad_v: Vec<f64>,
}

/// Everything precomputed from the reference image: per-level template
/// samples and gradients, and the template's features.
#[derive(Debug, Clone)]
pub struct ReferenceTemplate {
    region: TemplateRegion,
    levels: Vec<TemplateLevel>,
    features: Vec<Feature>,
}

impl ReferenceTemplate {
    pub fn new(
        reference: &GrayImage,
        region: TemplateRegion,
        levels: usize,
        backend: Option<&dyn FeatureBackend>,
    ) -> Result<Self, SolverError> {
        region.validate(reference)?;
        let pyramid = build_pyramid(reference, levels)?;
        let mut out = Vec::with_capacity(levels);
        for (l, img) in pyramid.levels().iter().enumerate() {
            let rect = region.at_level(l);
            if rect.area() == 0 {
                return Err(SolverError::InvalidConfig(format!("template is empty at level {l}")));
            }
            let grad = image_gradient(img)?;
            let mut level = TemplateLevel {
                rect,
                points: Vec::with_capacity(rect.area()),
                intensities: Vec::with_capacity(rect.area()),
                grad_u: Vec::with_capacity(rect.area()),
                grad_v: Vec::with_capacity(rect.area()),
            };
            for y in rect.y..rect.y + rect.height {
                for x in rect.x..rect.x + rect.width {
                    level.points.push(PixelPoint::new(x as f64, y as f64));
                    level.intensities.push(img.get(x, y) as f64);
                    level.grad_u.push(grad.du.get(x, y) as f64);
                    level.grad_v.push(grad.dv.get(x, y) as f64);
                }
            }
            out.push(level);
        }
        let features = backend.map(|b| b.detect_and_describe(reference, Some(&region.rect))).unwrap_or_default();
        Ok(Self { region, levels: out, features })
    }

    pub fn region(&self) -> &TemplateRegion {
        &self.region
    }

    pub fn level(&self, l: usize) -> &TemplateLevel {
        &self.levels[l]
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }
}

/// Why an estimation stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverFailure {
    TemplateLost { valid: usize, required: usize },
    SingularSystem,
    NoFeatureMatches { reason: Option<String> },
    Numerical { message: String },
}

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverFailure::TemplateLost { valid, required } => {
                write!(f, "template lost: {valid} valid pixels, {required} required")
            }
            SolverFailure::SingularSystem => write!(f, "singular normal equations"),
            SolverFailure::NoFeatureMatches { reason: Some(r) } => write!(f, "no feature matches: {r}"),
            SolverFailure::NoFeatureMatches { reason: None } => write!(f, "no feature matches"),
            SolverFailure::Numerical { message } => write!(f, "numerical failure: {message}"),
        }
    }
}

impl From<SolverError> for SolverFailure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::TemplateLost { valid, required } => SolverFailure::TemplateLost { valid, required },
            SolverError::SingularSystem => SolverFailure::SingularSystem,
            other => SolverFailure::Numerical { message: other.to_string() },
        }
    }
}

/// State after one labelled step: `"predictor"`, `"global"`, or
/// `"<stage>-<iteration>"` where stage 1 is the coarsest level processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub label: String,
    pub estimate: Estimate,
    pub d_fb: Option<f64>,
    pub weights: Option<Weights>,
    /// RMS of the intensity residuals before the step.
    pub ib_rms: Option<f64>,
    /// RMS of the feature residuals before the step, in level pixels.
    pub fb_rms: Option<f64>,
    pub step_norm: Option<f64>,
    pub damping: Option<f64>,
    /// Seconds since the estimation started.
    pub elapsed: f64,
    /// Filled in by callers that know the ground truth.
    pub corner_rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub estimate: Estimate,
    pub steps: Vec<StepRecord>,
    pub failure: Option<SolverFailure>,
    /// No failure and the final alignment score reaches `tau`.
    pub converged: bool,
    pub final_score: Option<f64>,
    pub used_predictor: bool,
    pub search: Option<SearchKind>,
    /// A successful global search replaced the estimate.
    pub used_global: bool,
    pub global_error: Option<String>,
    pub matches: usize,
    /// Some iterate had a gain `alpha <= 0`. Not enforced, only reported.
    pub nonpositive_gain: bool,
    pub elapsed: f64,
}

fn record(label: String, estimate: &Estimate, start: &Instant) -> StepRecord {
    StepRecord {
        label,
        estimate: *estimate,
        d_fb: None,
        weights: None,
        ib_rms: None,
        fb_rms: None,
        step_norm: None,
        damping: None,
        elapsed: start.elapsed().as_secs_f64(),
        corner_rms: None,
    }
}

/// Estimates the warp and illumination change mapping the template into
/// `current`, starting from `initial`.
///
/// Only invalid inputs are returned as errors; failures during the iteration
/// end up in the report together with the last valid estimate.
pub fn estimate(
    template: &ReferenceTemplate,
    current: &GrayImage,
    initial: Estimate,
    config: &SolverConfig,
    backend: &dyn FeatureBackend,
) -> Result<SolverReport, SolverError> {
    config.validate()?;
    let start = Instant::now();
    let levels = config.levels.min(template.level_count());
    let pyramid = build_pyramid(current, levels)?;
    let photometric = config.photometric && config.mode != SolverMode::FbOnly;

    let mut est = initial;
    let mut report = SolverReport {
        estimate: est,
        steps: Vec::new(),
        failure: None,
        converged: false,
        final_score: None,
        used_predictor: false,
        search: None,
        used_global: false,
        global_error: None,
        matches: 0,
        nonpositive_gain: false,
        elapsed: 0.0,
    };

    let coarsest = levels - 1;
    if config.predictor {
        let out = zncc_predictor(
            template.level(coarsest),
            coarsest,
            pyramid.level(coarsest),
            &est.homography,
            config.predictor_radius,
        );
        est.homography = normalize_det(&out.homography).unwrap_or(est.homography);
        report.used_predictor = true;
        report.steps.push(record("predictor".into(), &est, &start));
    }

    let mut matches: Vec<FeatureMatch> = Vec::new();
    if config.mode != SolverMode::IbOnly {
        let out = local_global_policy(
            template,
            current,
            &est.homography,
            config.tau,
            backend,
            &config.matcher,
            &config.ransac,
        );
        report.search = Some(out.kind);
        report.global_error = out.global_error.clone();
        if let Some(h) = out.replacement.and_then(|h| normalize_det(&h).ok()) {
            est.homography = h;
            if photometric {
                est.photometric = PhotometricParams::identity();
            }
            report.used_global = true;
            report.steps.push(record("global".into(), &est, &start));
        }
        matches = out.matches;
        report.matches = matches.len();
        if config.mode == SolverMode::FbOnly && matches.is_empty() {
            report.failure = Some(SolverFailure::NoFeatureMatches { reason: out.global_error });
        }
    }

    if report.failure.is_none() {
        if let Err(e) = refine(template, &pyramid, &matches, config, photometric, &start, &mut est, &mut report.steps) {
            report.failure = Some(e.into());
        }
    }

    report.estimate = est;
    report.nonpositive_gain = est.photometric.has_nonpositive_gain()
        || report.steps.iter().any(|s| s.estimate.photometric.has_nonpositive_gain());
    report.final_score = alignment_score(template, current, &est.homography);
    report.converged = report.failure.is_none() && report.final_score.is_some_and(|s| s >= config.tau);
    report.elapsed = start.elapsed().as_secs_f64();
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    template: &ReferenceTemplate,
    pyramid: &crate::image_ops::ImagePyramid,
    matches: &[FeatureMatch],
    config: &SolverConfig,
    photometric: bool,
    start: &Instant,
    est: &mut Estimate,
    steps: &mut Vec<StepRecord>,
) -> Result<(), SolverError> {
    let levels = pyramid.len();
    let use_ib = config.mode != SolverMode::FbOnly;
    let use_fb = config.mode != SolverMode::IbOnly && !matches.is_empty();
    for stage in 1..=levels {
        let level = levels - stage;
        let mut damping = config.damping;
        let mut previous: Option<(Weights, f64)> = None;
        for iteration in 1..=config.iterations_per_level {
            let d_fb = if use_fb {
                Some(rmsd_fb(&est.homography, matches).map_err(|_| SolverError::SingularSystem)?)
            } else {
                None
            };
            let weights = match (config.mode, d_fb) {
                (SolverMode::IbOnly, _) => Weights::pure_ib(),
                (SolverMode::FbOnly, _) => Weights::pure_fb(),
                (SolverMode::Unified, Some(d)) => compute_weights(d)?,
                (SolverMode::Unified, None) => Weights::pure_ib(),
            };
            let ib = if use_ib {
                Some(ib_residuals_and_jacobian(
                    template.level(level),
                    level,
                    pyramid.level(level),
                    est,
                    JacobianKind::Esm,
                    config.min_valid_fraction,
                )?)
            } else {
                None
            };
            let fb = use_fb.then(|| fb_residuals_and_jacobian(matches, level, est, config.huber));

            let ms_ib = ib.as_ref().map_or(0.0, ResidualStack::mean_square);
            let ms_fb = fb.as_ref().map_or(0.0, ResidualStack::mean_square);
            if let Some((w, cost)) = previous {
                if w.ib * ms_ib + w.fb * ms_fb > cost {
                    damping *= 10.0;
                } else {
                    damping = (damping / 10.0).max(1e-12);
                }
            }
            previous = Some((weights, weights.ib * ms_ib + weights.fb * ms_fb));

            let z = assemble_and_solve(ib.as_ref(), fb.as_ref(), weights, damping, photometric)?;
            *est = apply_update(est, &z)?;
            steps.push(StepRecord {
                d_fb,
                weights: Some(weights),
                ib_rms: ib.as_ref().map(|_| ms_ib.sqrt()),
                fb_rms: fb.as_ref().map(|_| ms_fb.sqrt()),
                step_norm: Some(z.norm()),
                damping: Some(damping),
                ..record(format!("{stage}-{iteration}"), est, start)
            });
            if z.norm() < config.step_tolerance {
                break;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
