//! Tracks a planar template through an image sequence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use unihom::image_ops::Rect;
use unihom::solver::SolverConfig;
use unihom::tracker::{default_tracking_config, track_sequence, TrackerConfig};

/// Tracks the template through every PNG/PGM/PPM frame of a directory (in
/// file name order) and writes one JSON line per frame.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Directory of frames.
    #[arg(long)]
    frames: PathBuf,
    /// Index of the reference frame in name order.
    #[arg(long, default_value_t = 0)]
    ref_frame: usize,
    /// Template rectangle in the reference frame.
    #[arg(long, value_name = "X,Y,W,H")]
    template: Rect,
    /// JSON-lines log.
    #[arg(long, value_name = "LOG.jsonl")]
    out: PathBuf,
    /// Directory for frames with the tracked quadrilateral drawn.
    #[arg(long, value_name = "DIR")]
    annotate: Option<PathBuf>,
    /// Log zero wall times so the log is reproducible.
    #[arg(long)]
    no_timings: bool,
    /// JSON file with solver settings overriding the tracking defaults.
    #[arg(long, value_name = "PATH")]
    solver_config: Option<PathBuf>,
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let solver: SolverConfig = match &args.solver_config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => default_tracking_config(),
    };
    let config = TrackerConfig {
        frames: args.frames,
        ref_frame: args.ref_frame,
        template: args.template,
        solver,
        out: args.out,
        annotate: args.annotate,
        record_timings: !args.no_timings,
    };
    let results = track_sequence(&config)?;
    let converged = results.iter().filter(|r| r.converged).count();
    let recovered = results.iter().filter(|r| r.used_global).count();
    log::info!(
        "{} frames, {converged} converged, {recovered} global recoveries; log at {}",
        results.len(),
        config.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
