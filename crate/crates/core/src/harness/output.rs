use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{CurvePoint, RunOutput, TrialRecord};
use crate::error::Result;

#[derive(Serialize)]
struct TrialRow<'a> {
    trial: u64,
    budget: Option<f64>,
    lines: String,
    detected: bool,
    statistic: f64,
    target: &'a str,
    estimated_pattern: &'a str,
    rpp: Option<f64>,
    error: Option<&'a str>,
}

pub fn write_trials_csv<W: Write>(out: W, trials: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in trials {
        w.serialize(TrialRow {
            trial: t.trial,
            budget: t.budget,
            lines: t
                .lines
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            detected: t.detected,
            statistic: t.statistic,
            target: &t.target,
            estimated_pattern: &t.estimated_pattern,
            rpp: t.rpp,
            error: t.error.as_deref(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    budget: Option<f64>,
    detection_probability: f64,
    arpp: f64,
    trials: usize,
    priced: usize,
}

pub fn write_curve_csv<W: Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(CurveRow {
            budget: p.budget,
            detection_probability: p.detection_probability,
            arpp: p.arpp,
            trials: p.trials,
            priced: p.priced,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.json`, `trials.csv`, `curve.csv` and `timing.json`
/// into `dir`. Only `timing.json` depends on the machine.
pub fn write_outputs(dir: &Path, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut results = serde_json::to_string_pretty(&run.result)?;
    results.push('\n');
    fs::write(dir.join("results.json"), results)?;
    write_trials_csv(fs::File::create(dir.join("trials.csv"))?, &run.trials)?;
    write_curve_csv(fs::File::create(dir.join("curve.csv"))?, &run.result.points)?;
    let mut timing = serde_json::to_string_pretty(&run.timing)?;
    timing.push('\n');
    fs::write(dir.join("timing.json"), timing)?;
    Ok(())
}
