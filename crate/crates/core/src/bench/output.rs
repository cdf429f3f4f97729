//! Aggregation of trial records into the three CSV tables and the run
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{BenchConfig, BenchError, CampaignResult, Method, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub sigma: f64,
    pub method: Method,
    pub convergence_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub method: Method,
    pub step: String,
    /// `None` when no trial of the method converged.
    pub mean_rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub sigma: f64,
    pub method: Method,
    pub mean_seconds: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cell<'a>(records: &'a [TrialRecord], sigma: f64, method: Method) -> impl Iterator<Item = &'a TrialRecord> + 'a {
    records.iter().filter(move |r| r.sigma == sigma && r.method == method)
}

pub fn convergence_rows(result: &CampaignResult, config: &BenchConfig) -> Vec<ConvergenceRow> {
    let mut rows = Vec::new();
    for &sigma in &config.sigmas {
        for &method in &config.methods {
            let (total, ok) =
                cell(&result.records, sigma, method).fold((0, 0), |(t, c), r| (t + 1, c + r.converged as usize));
            rows.push(ConvergenceRow {
                sigma,
                method,
                convergence_pct: if total == 0 { 0.0 } else { 100.0 * ok as f64 / total as f64 },
            });
        }
    }
    rows
}

/// `predictor`, `global`, then `<level>-<iteration>` for the configured
/// schedule.
pub fn rate_labels(levels: usize, iterations: usize) -> Vec<String> {
    let mut labels = vec!["predictor".to_string(), "global".to_string()];
    for l in 1..=levels {
        for i in 1..=iterations {
            labels.push(format!("{l}-{i}"));
        }
    }
    labels
}

/// Error after each labelled step. Steps a trial did not take (no
/// predictor, no global search, early stop) carry the previous value
/// forward, starting from the initial error.
pub fn trial_trace(record: &TrialRecord, labels: &[String]) -> Vec<f64> {
    let mut value = record.initial_rms;
    labels
        .iter()
        .map(|label| {
            if let Some(s) = record.trace.iter().find(|s| &s.label == label) {
                value = s.rms;
            }
            value
        })
        .collect()
}

pub fn rate_rows(result: &CampaignResult, config: &BenchConfig) -> Vec<RateRow> {
    let sigma = config.effective_rate_sigma();
    let labels = rate_labels(config.solver.levels, config.solver.iterations_per_level);
    let mut rows = Vec::new();
    for &method in &config.methods {
        let traces: Vec<Vec<f64>> =
            cell(&result.records, sigma, method).filter(|r| r.converged).map(|r| trial_trace(r, &labels)).collect();
        for (k, label) in labels.iter().enumerate() {
            rows.push(RateRow { method, step: label.clone(), mean_rms: mean(traces.iter().map(|t| t[k])) });
        }
    }
    rows
}

pub fn timing_rows(result: &CampaignResult, config: &BenchConfig) -> Vec<TimingRow> {
    let mut rows = Vec::new();
    for &sigma in &config.sigmas {
        for &method in &config.methods {
            rows.push(TimingRow {
                sigma,
                method,
                mean_seconds: mean(cell(&result.records, sigma, method).filter(|r| r.converged).map(|r| r.wall_time)),
            });
        }
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.6}"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), BenchError> {
    fs::write(path, contents).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

#[derive(Serialize)]
struct Manifest<'a> {
    library: &'static str,
    version: &'static str,
    image: Option<&'a str>,
    config: &'a BenchConfig,
    rate_sigma: f64,
    trials_run: usize,
    resamples: usize,
    files: [&'static str; 3],
}

/// Writes `convergence.csv`, `rate.csv`, `timing.csv` and `manifest.json`.
pub fn write_outputs(
    result: &CampaignResult,
    config: &BenchConfig,
    image: Option<&str>,
    dir: &Path,
) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })?;

    let mut csv = String::from("sigma,method,convergence_pct\n");
    for r in convergence_rows(result, config) {
        let _ = writeln!(csv, "{},{},{:.2}", r.sigma, r.method, r.convergence_pct);
    }
    write_file(&dir.join("convergence.csv"), &csv)?;

    let mut csv = String::from("method,step,mean_rms\n");
    for r in rate_rows(result, config) {
        let _ = writeln!(csv, "{},{},{}", r.method, r.step, fmt_opt(r.mean_rms));
    }
    write_file(&dir.join("rate.csv"), &csv)?;

    let mut csv = String::from("sigma,method,mean_seconds\n");
    for r in timing_rows(result, config) {
        let _ = writeln!(csv, "{},{},{}", r.sigma, r.method, fmt_opt(r.mean_seconds));
    }
    write_file(&dir.join("timing.csv"), &csv)?;

    let manifest = Manifest {
        library: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        image,
        config,
        rate_sigma: config.effective_rate_sigma(),
        trials_run: result.records.len(),
        resamples: result.records.iter().filter(|r| r.method == config.methods[0]).map(|r| r.resamples).sum(),
        files: ["convergence.csv", "rate.csv", "timing.csv"],
    };
    write_file(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::StepRms;

    fn record(sigma: f64, method: Method, converged: bool, trace: &[(&str, f64)]) -> TrialRecord {
        TrialRecord {
            sigma,
            method,
            trial: 0,
            converged,
            initial_rms: 9.0,
            final_rms: trace.last().map_or(9.0, |t| t.1),
            trace: trace.iter().map(|&(l, rms)| StepRms { label: l.into(), rms }).collect(),
            wall_time: 0.5,
            resamples: 0,
            used_global: false,
            failure: None,
            global_error: None,
        }
    }

    #[test]
    fn labels_follow_the_schedule() {
        let l = rate_labels(3, 3);
        assert_eq!(l.len(), 11);
        assert_eq!(&l[..4], ["predictor", "global", "1-1", "1-2"]);
        assert_eq!(l[10], "3-3");
    }

    #[test]
    fn trace_carries_values_forward() {
        let r = record(10.0, Method::Esm, true, &[("1-1", 4.0), ("2-1", 1.0), ("2-2", 0.5)]);
        let t = trial_trace(&r, &rate_labels(3, 3));
        assert_eq!(t, vec![9.0, 9.0, 4.0, 4.0, 4.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn aggregation_uses_converged_trials_only() {
        let config = BenchConfig { sigmas: vec![10.0], methods: vec![Method::Esm], ..Default::default() };
        let result = CampaignResult {
            records: vec![
                record(10.0, Method::Esm, true, &[("3-3", 0.2)]),
                record(10.0, Method::Esm, true, &[("3-3", 0.4)]),
                record(10.0, Method::Esm, false, &[("3-3", 7.0)]),
            ],
        };
        let conv = convergence_rows(&result, &config);
        assert!((conv[0].convergence_pct - 200.0 / 3.0).abs() < 1e-12);
        let rate = rate_rows(&result, &config);
        assert_eq!(rate.last().unwrap().mean_rms, Some(0.30000000000000004));
        assert_eq!(timing_rows(&result, &config)[0].mean_seconds, Some(0.5));
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = BenchConfig { sigmas: vec![0.0], methods: vec![Method::Esm], ..Default::default() };
        let result = CampaignResult { records: vec![record(0.0, Method::Esm, true, &[("3-3", 0.0)])] };
        write_outputs(&result, &config, Some("x.png"), dir.path()).unwrap();
        let conv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        assert_eq!(conv, "sigma,method,convergence_pct\n0,ESM,100.00\n");
        let rate = fs::read_to_string(dir.path().join("rate.csv")).unwrap();
        assert!(rate.starts_with("method,step,mean_rms\nESM,predictor,9.000000\n"));
        let timing = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
        assert_eq!(timing, "sigma,method,mean_seconds\n0,ESM,0.500000\n");
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config"]["methods"][0], "ESM");
    }
}
