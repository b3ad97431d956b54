//! Result files: `trace.csv`, `summary.json` and `sweep_<var>.csv`.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use trisnoma_core::optimize::{AoOutcome, IterationTrace};

use crate::sweep::SweepResult;

pub const TRACE_HEADER: [&str; 6] = ["iter", "sum_rate", "p_k", "P_t", "interference", "delta"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub sum_rate: f64,
    pub iterations: usize,
    pub feasible: bool,
    /// Share of the strong user.
    pub p_k: f64,
    pub p_t: f64,
    pub converged: bool,
    pub rate_strong: f64,
    pub rate_weak: f64,
    pub interference: f64,
    pub strong_user: String,
    pub binding_constraint: Option<String>,
}

impl Summary {
    pub fn from_outcome(out: &AoOutcome) -> Self {
        Self {
            sum_rate: out.state.sum_rate,
            iterations: out.iterations,
            feasible: out.feasible,
            p_k: out.state.split.p_k(),
            p_t: out.state.split.p_total(),
            converged: out.converged,
            rate_strong: out.state.rates.0,
            rate_weak: out.state.rates.1,
            interference: out.state.interference,
            strong_user: format!("{:?}", out.state.strong_user),
            binding_constraint: out.infeasibility.map(|r| format!("{:?}", r.binding)),
        }
    }
}

/// Shortest representation that reads back to the same value.
fn num(x: f64) -> String {
    format!("{x}")
}

pub fn trace_csv<W: Write>(writer: W, trace: &[IterationTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            num(t.sum_rate),
            num(t.p_k),
            num(t.p_t),
            num(t.interference),
            num(t.delta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_csv<W: Write>(writer: W, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        result.var.name(),
        "mean_sum_rate",
        "mean_iterations",
        "feasible_fraction",
        "converged_fraction",
        "failures",
    ])?;
    for p in &result.points {
        w.write_record([
            num(p.value),
            num(p.mean_sum_rate),
            num(p.mean_iterations),
            num(p.feasible_fraction),
            num(p.converged_fraction),
            p.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_solve(dir: &Path, out: &AoOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace_path = dir.join("trace.csv");
    let file = std::fs::File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))?;
    trace_csv(file, &out.trace)?;
    let summary_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&Summary::from_outcome(out))?;
    text.push('\n');
    std::fs::write(&summary_path, text)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    Ok(())
}

pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("sweep_{}.csv", result.var.name()));
    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    sweep_csv(file, result)
}
