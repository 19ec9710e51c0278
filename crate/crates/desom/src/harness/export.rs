//! Output writers: the long-format metrics CSV, the node-trace CSV used for
//! trajectory plots, and the JSON run metadata. Floats are written with
//! Rust's shortest round-trip formatting, so parsing the CSV back recovers
//! bit-identical values.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::harness::runner::{ExperimentResult, TrajectoryRow};
use crate::objective::DynamicLeastSquares;
use crate::{DesomError, Result};

pub const CSV_HEADER: &str = "t,solver,e_t,lyapunov,primal_err,drift,wall_ms";

/// Renders all trajectories as one long-format CSV, grouped by time step so
/// solvers can be compared line by line.
pub fn export_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let steps = result.trajectories.iter().map(|tr| tr.rows.len()).max().unwrap_or(0);
    for idx in 0..steps {
        for traj in &result.trajectories {
            let Some(row) = traj.rows.get(idx) else { continue };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.t, traj.label, row.e_t, row.lyapunov, row.primal_err, row.drift, row.wall_ms
            ));
        }
    }
    out
}

/// Parses a metrics CSV back into `(solver label, row)` pairs. Exact inverse
/// of [`export_csv`] on its own output.
pub fn parse_csv(text: &str) -> Result<Vec<(String, TrajectoryRow)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(DesomError::Parse(format!(
                "bad CSV header: expected {CSV_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(DesomError::Parse(format!(
                "line {}: expected 7 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| DesomError::Parse(format!("line {}: {e}", lineno + 2)))
        };
        rows.push((
            fields[1].to_string(),
            TrajectoryRow {
                t: fields[0]
                    .parse()
                    .map_err(|e| DesomError::Parse(format!("line {}: {e}", lineno + 2)))?,
                e_t: num(fields[2])?,
                lyapunov: num(fields[3])?,
                primal_err: num(fields[4])?,
                drift: num(fields[5])?,
                wall_ms: num(fields[6])?,
            },
        ));
    }
    Ok(rows)
}

/// Trace CSV: per step, the first coordinate of the instantaneous optimum
/// and of node 0's iterate under each solver. Diverged solvers leave their
/// column empty past the divergence step.
pub fn export_trace_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("t,target");
    for traj in &result.trajectories {
        out.push(',');
        out.push_str(&traj.label);
    }
    out.push('\n');
    for (idx, target) in result.target_coord0.iter().enumerate() {
        out.push_str(&format!("{},{}", idx + 1, target));
        for traj in &result.trajectories {
            out.push(',');
            if let Some(v) = traj.node0_coord0.get(idx) {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    config: &'a crate::harness::config::ExperimentConfig,
    gamma: f64,
    bounds: &'a crate::objective::CurvatureBounds,
    edge_count: usize,
    solvers: Vec<serde_json::Value>,
}

/// JSON metadata for a finished run: the fully resolved config, network
/// constants, and per-solver resolved hyperparameters plus divergence info.
pub fn export_metadata(result: &ExperimentResult) -> Result<String> {
    let solvers = result
        .trajectories
        .iter()
        .map(|traj| {
            let mut v = serde_json::to_value(&traj.resolved)?;
            v["diverged_at"] = json!(traj.diverged_at);
            v["recorded_steps"] = json!(traj.rows.len());
            Ok(v)
        })
        .collect::<std::result::Result<Vec<_>, serde_json::Error>>()
        .map_err(|e| DesomError::Config(e.to_string()))?;
    let meta = RunMetadata {
        config: &result.config,
        gamma: result.gamma,
        bounds: &result.bounds,
        edge_count: result.edge_count,
        solvers,
    };
    serde_json::to_string_pretty(&meta).map_err(|e| DesomError::Config(e.to_string()))
}

/// Writes the full output bundle into `out_dir`: `metrics.csv`, `trace.csv`,
/// `metadata.json`, and `instance.json` (the generating parameters of the
/// problem, sufficient to replay it).
pub fn write_outputs(
    result: &ExperimentResult,
    instance: &DynamicLeastSquares,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("metrics.csv"), export_csv(result))?;
    std::fs::write(out_dir.join("trace.csv"), export_trace_csv(result))?;
    std::fs::write(out_dir.join("metadata.json"), export_metadata(result)?)?;
    std::fs::write(out_dir.join("instance.json"), instance.to_json()?)?;
    Ok(())
}
