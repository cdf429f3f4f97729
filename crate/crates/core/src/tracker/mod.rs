//! Frame-by-frame tracking of a planar template with warm starts and
//! recovery through the global feature search.

mod draw;
mod sequence;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FastBriefBackend;
use crate::geometry::HomographyMatrix;
use crate::image_ops::{GrayImage, ImageError, Rect, TemplateRegion};
use crate::solver::{estimate, Estimate, ReferenceTemplate, SearchKind, SolverConfig, SolverError, SolverMode};

pub use draw::{annotate_frame, draw_quad, rasterize_segment};
pub use sequence::{occlusion_sequence, FrameTruth, SyntheticSequence};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("need at least 2 frames, found {0}")]
    TooFewFrames(usize),
    #[error("reference frame {index} out of range for {count} frames")]
    BadReferenceFrame { index: usize, count: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrackerError + '_ {
    move |source| TrackerError::Io { path: path.to_path_buf(), source }
}

/// Solver settings used for tracking: unified mode with gain/bias and the
/// predictor.
pub fn default_tracking_config() -> SolverConfig {
    SolverConfig { mode: SolverMode::Unified, photometric: true, predictor: true, ..Default::default() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub frames: PathBuf,
    pub ref_frame: usize,
    pub template: Rect,
    pub solver: SolverConfig,
    pub out: PathBuf,
    pub annotate: Option<PathBuf>,
    /// When false, wall times are logged as zero so logs are reproducible.
    pub record_timings: bool,
}

/// One line of the tracking log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: usize,
    pub file: String,
    /// Row-major homography from reference to frame pixels.
    pub h: HomographyMatrix,
    pub alpha: f64,
    pub beta: f64,
    /// Template corners warped into the frame, clockwise from top-left.
    pub corners: Option<[[f64; 2]; 4]>,
    pub converged: bool,
    pub used_global: bool,
    pub used_predictor: bool,
    pub search: Option<SearchKind>,
    pub score: Option<f64>,
    pub wall_time: f64,
    pub error: Option<String>,
}

/// Sequential tracker against a fixed reference template.
pub struct Tracker {
    template: ReferenceTemplate,
    config: SolverConfig,
    backend: FastBriefBackend,
    state: Estimate,
    record_timings: bool,
}

impl Tracker {
    pub fn new(reference: &GrayImage, template: Rect, config: SolverConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        let backend = FastBriefBackend::default();
        let template =
            ReferenceTemplate::new(reference, TemplateRegion { rect: template }, config.levels, Some(&backend))?;
        Ok(Self { template, config, backend, state: Estimate::default(), record_timings: true })
    }

    pub fn with_timings(mut self, record: bool) -> Self {
        self.record_timings = record;
        self
    }

    pub fn state(&self) -> &Estimate {
        &self.state
    }

    fn result(&self, frame: usize, file: &str, est: &Estimate) -> FrameResult {
        let corners = self.template.region().corners().warp(&est.homography).ok().map(|q| q.0.map(|p| [p.u, p.v]));
        FrameResult {
            frame,
            file: file.to_string(),
            h: est.homography,
            alpha: est.photometric.alpha,
            beta: est.photometric.beta,
            corners,
            converged: false,
            used_global: false,
            used_predictor: false,
            search: None,
            score: None,
            wall_time: 0.0,
            error: None,
        }
    }

    /// Estimates the pose in `image`, starting from the last converged
    /// estimate. Non-converged frames are reported but do not move the warm
    /// start.
    pub fn process(&mut self, frame: usize, file: &str, image: &GrayImage) -> FrameResult {
        let start = Instant::now();
        let outcome = estimate(&self.template, image, self.state, &self.config, &self.backend);
        let wall_time = if self.record_timings { start.elapsed().as_secs_f64() } else { 0.0 };
        match outcome {
            Ok(report) => {
                let mut r = self.result(frame, file, &report.estimate);
                r.converged = report.converged;
                r.used_global = report.used_global;
                r.used_predictor = report.used_predictor;
                r.search = report.search;
                r.score = report.final_score;
                r.wall_time = wall_time;
                r.error = report.failure.map(|f| f.to_string()).or(report.global_error);
                if report.converged {
                    self.state = report.estimate;
                }
                r
            }
            Err(e) => self.skip(frame, file, e.to_string()),
        }
    }

    /// Records a frame that could not be processed; the state is kept.
    pub fn skip(&mut self, frame: usize, file: &str, error: String) -> FrameResult {
        let mut r = self.result(frame, file, &self.state.clone());
        r.error = Some(error);
        r
    }
}

/// Image files (`png`, `pgm`, `ppm`) in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, TrackerError> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm"))
        })
        .collect();
    frames.sort();
    Ok(frames)
}

/// Tracks every frame of `config.frames`, streaming one JSON line per frame
/// to `config.out` and optionally writing annotated frames.
pub fn track_sequence(config: &TrackerConfig) -> Result<Vec<FrameResult>, TrackerError> {
    let files = list_frames(&config.frames)?;
    if files.len() < 2 {
        return Err(TrackerError::TooFewFrames(files.len()));
    }
    let reference_path = files
        .get(config.ref_frame)
        .ok_or(TrackerError::BadReferenceFrame { index: config.ref_frame, count: files.len() })?;
    let reference = GrayImage::load(reference_path)?;
    let mut tracker =
        Tracker::new(&reference, config.template, config.solver.clone())?.with_timings(config.record_timings);

    if let Some(dir) = &config.annotate {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(&config.out).map_err(io_err(&config.out))?;
    let mut log = BufWriter::new(file);
    let mut results = Vec::with_capacity(files.len());
    for (k, path) in files.iter().enumerate() {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let result = match GrayImage::load(path) {
            Ok(image) => {
                let r = tracker.process(k, &name, &image);
                if let (Some(dir), Some(c)) = (&config.annotate, r.corners) {
                    let out = dir.join(format!("frame_{k:04}.png"));
                    annotate_frame(&image, &c, &out)?;
                }
                r
            }
            Err(e) => tracker.skip(k, &name, e.to_string()),
        };
        serde_json::to_writer(&mut log, &result)?;
        log.write_all(b"\n").map_err(io_err(&config.out))?;
        results.push(result);
    }
    log.flush().map_err(io_err(&config.out))?;
    Ok(results)
}
