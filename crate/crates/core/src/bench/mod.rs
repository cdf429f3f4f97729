//! Randomized corner-perturbation benchmark: convergence domain, per-step
//! error decay and timing for the method matrix.

mod output;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FastBriefBackend, FeatureBackend};
use crate::geometry::{dlt_homography, warp_point, CornerQuad, GeometryError, HomographyMatrix, PixelPoint};
use crate::image_ops::{GrayImage, ImageError, Rect, TemplateRegion};
use crate::solver::{estimate, Estimate, ReferenceTemplate, SolverConfig, SolverError, SolverFailure, SolverMode};
use crate::synth::warp_image;

pub use output::{
    convergence_rows, rate_labels, rate_rows, timing_rows, write_outputs, ConvergenceRow, RateRow, TimingRow,
};

/// A trial has converged when its final corner RMS error is below this.
pub const CONVERGENCE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("could not draw a convex perturbed quad after {0} attempts")]
    DegenerateQuads(usize),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ESM")]
    Esm,
    #[serde(rename = "IBG")]
    Ibg,
    #[serde(rename = "IBG_P")]
    IbgP,
    #[serde(rename = "FB_ESM")]
    FbEsm,
    #[serde(rename = "UNIF")]
    Unif,
    #[serde(rename = "UNIF_P")]
    UnifP,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Esm, Method::Ibg, Method::IbgP, Method::FbEsm, Method::Unif, Method::UnifP];

    pub fn name(self) -> &'static str {
        match self {
            Method::Esm => "ESM",
            Method::Ibg => "IBG",
            Method::IbgP => "IBG_P",
            Method::FbEsm => "FB_ESM",
            Method::Unif => "UNIF",
            Method::UnifP => "UNIF_P",
        }
    }

    /// `(mode, photometric, predictor)`.
    pub fn flags(self) -> (SolverMode, bool, bool) {
        match self {
            Method::Esm => (SolverMode::IbOnly, false, false),
            Method::Ibg => (SolverMode::IbOnly, true, false),
            Method::IbgP => (SolverMode::IbOnly, true, true),
            Method::FbEsm => (SolverMode::FbOnly, false, false),
            Method::Unif => (SolverMode::Unified, true, false),
            Method::UnifP => (SolverMode::Unified, true, true),
        }
    }

    pub fn solver_config(self, base: &SolverConfig) -> SolverConfig {
        let (mode, photometric, predictor) = self.flags();
        SolverConfig { mode, photometric, predictor, ..base.clone() }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub template: Rect,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    /// Sigma whose converged trials feed the per-step error table. Defaults
    /// to 10 when present, otherwise the largest sigma.
    pub rate_sigma: Option<f64>,
    /// When false, all wall-clock fields are written as zero so outputs are
    /// byte-reproducible.
    pub record_timings: bool,
    pub solver: SolverConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            template: Rect::new(350, 216, 100, 100),
            sigmas: (0..=7).map(|k| 2.0 * k as f64).collect(),
            trials: 100,
            methods: Method::ALL.to_vec(),
            seed: 0,
            threads: 0,
            rate_sigma: None,
            record_timings: true,
            solver: SolverConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self, width: usize, height: usize) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.sigmas.is_empty() || self.methods.is_empty() || self.trials == 0 {
            return bad("need at least one sigma, method and trial".into());
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigmas must be finite and non-negative".into());
        }
        let r = self.template;
        if r.width < 2 || r.height < 2 || !r.fits_in(width, height) {
            return bad(format!("template {r:?} does not fit a {width}x{height} image"));
        }
        let sigma_max = self.sigmas.iter().copied().fold(0.0, f64::max);
        let margin = [r.x, r.y, width - r.x - r.width, height - r.y - r.height].into_iter().min().unwrap_or(0) as f64;
        if margin < 2.0 * sigma_max {
            return bad(format!("template margin {margin} px is below 2 * sigma_max = {}", 2.0 * sigma_max));
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn effective_rate_sigma(&self) -> f64 {
        self.rate_sigma.unwrap_or_else(|| {
            if self.sigmas.contains(&10.0) {
                10.0
            } else {
                self.sigmas.iter().copied().fold(0.0, f64::max)
            }
        })
    }
}

/// One perturbed instance shared by every method.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub sigma: f64,
    pub trial: usize,
    pub homography: HomographyMatrix,
    pub corners: CornerQuad,
    pub perturbed: CornerQuad,
    pub image: GrayImage,
    /// Non-convex draws that were rejected before this one.
    pub resamples: usize,
}

/// Independent stream per `(seed, sigma, trial)`.
pub fn trial_rng(seed: u64, sigma: f64, trial: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&sigma.to_bits().to_le_bytes());
    key[16..24].copy_from_slice(&(trial as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

const MAX_RESAMPLES: usize = 10_000;

/// Perturbs each template corner coordinate with `N(0, sigma^2)` noise, fits
/// the test homography to the four pairs and inverse-warps the reference by
/// it (zero outside).
pub fn generate_test_case<R: Rng>(
    reference: &GrayImage,
    region: &TemplateRegion,
    sigma: f64,
    trial: usize,
    rng: &mut R,
) -> Result<TestCase, BenchError> {
    let corners = region.corners();
    if sigma == 0.0 {
        return Ok(TestCase {
            sigma,
            trial,
            homography: HomographyMatrix::identity(),
            corners,
            perturbed: corners,
            image: reference.clone(),
            resamples: 0,
        });
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    let mut resamples = 0;
    let perturbed = loop {
        let q = CornerQuad(corners.0.map(|c| {
            let du = noise.sample(rng);
            let dv = noise.sample(rng);
            PixelPoint::new(c.u + du, c.v + dv)
        }));
        if q.is_strictly_convex() {
            break q;
        }
        resamples += 1;
        if resamples >= MAX_RESAMPLES {
            return Err(BenchError::DegenerateQuads(resamples));
        }
    };
    let pairs: Vec<_> = corners.0.iter().copied().zip(perturbed.0.iter().copied()).collect();
    let homography = dlt_homography(&pairs)?;
    let image = warp_image(reference, &homography, reference.width(), reference.height(), 0.0);
    Ok(TestCase { sigma, trial, homography, corners, perturbed, image, resamples })
}

/// RMS distance between the corners mapped by `h` and the perturbed corners.
pub fn corner_rms(h: &HomographyMatrix, case: &TestCase) -> f64 {
    let mut sum = 0.0;
    for (c, target) in case.corners.0.iter().zip(&case.perturbed.0) {
        match warp_point(h, *c) {
            Ok(p) => sum += p.distance(target).powi(2),
            Err(_) => return f64::INFINITY,
        }
    }
    (sum / 4.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRms {
    pub label: String,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sigma: f64,
    pub method: Method,
    pub trial: usize,
    pub converged: bool,
    pub initial_rms: f64,
    pub final_rms: f64,
    pub trace: Vec<StepRms>,
    pub wall_time: f64,
    pub resamples: usize,
    pub used_global: bool,
    pub failure: Option<SolverFailure>,
    pub global_error: Option<String>,
}

/// Runs one method from the identity on a test case. Solver problems become
/// a non-converged record.
pub fn run_trial(
    method: Method,
    template: &ReferenceTemplate,
    case: &TestCase,
    base: &SolverConfig,
    backend: &dyn FeatureBackend,
) -> TrialRecord {
    let config = method.solver_config(base);
    let initial_rms = corner_rms(&HomographyMatrix::identity(), case);
    let start = Instant::now();
    let result = estimate(template, &case.image, Estimate::default(), &config, backend);
    let wall_time = start.elapsed().as_secs_f64();
    let mut record = TrialRecord {
        sigma: case.sigma,
        method,
        trial: case.trial,
        converged: false,
        initial_rms,
        final_rms: initial_rms,
        trace: Vec::new(),
        wall_time,
        resamples: case.resamples,
        used_global: false,
        failure: None,
        global_error: None,
    };
    match result {
        Ok(report) => {
            record.trace = report
                .steps
                .iter()
                .map(|s| StepRms { label: s.label.clone(), rms: corner_rms(&s.estimate.homography, case) })
                .collect();
            record.final_rms = corner_rms(&report.estimate.homography, case);
            record.used_global = report.used_global;
            record.global_error = report.global_error;
            record.failure = report.failure;
        }
        Err(e) => {
            record.failure = Some(SolverFailure::from(e));
        }
    }
    record.converged = record.failure.is_none() && record.final_rms < CONVERGENCE_THRESHOLD;
    record
}

/// All trial records of a campaign, ordered by sigma, trial, then method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub records: Vec<TrialRecord>,
}

/// Runs every method on every `(sigma, trial)` case. The result does not
/// depend on the thread count.
pub fn run_campaign(reference: &GrayImage, config: &BenchConfig) -> Result<CampaignResult, BenchError> {
    run_campaign_with_backend(reference, config, &FastBriefBackend::default())
}

pub fn run_campaign_with_backend(
    reference: &GrayImage,
    config: &BenchConfig,
    backend: &dyn FeatureBackend,
) -> Result<CampaignResult, BenchError> {
    config.validate(reference.width(), reference.height())?;
    let region = TemplateRegion { rect: config.template };
    let template = ReferenceTemplate::new(reference, region, config.solver.levels, Some(backend))?;
    let jobs: Vec<(f64, usize)> = config.sigmas.iter().flat_map(|&s| (0..config.trials).map(move |t| (s, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    let per_case: Result<Vec<Vec<TrialRecord>>, BenchError> = pool.install(|| {
        jobs.par_iter()
            .map(|&(sigma, trial)| {
                let mut rng = trial_rng(config.seed, sigma, trial);
                let case = generate_test_case(reference, &region, sigma, trial, &mut rng)?;
                Ok(config
                    .methods
                    .iter()
                    .map(|&m| {
                        let mut r = run_trial(m, &template, &case, &config.solver, backend);
                        if !config.record_timings {
                            r.wall_time = 0.0;
                        }
                        r
                    })
                    .collect())
            })
            .collect()
    });
    Ok(CampaignResult { records: per_case?.into_iter().flatten().collect() })
}
