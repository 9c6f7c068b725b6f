//! Diagnostics and sweep-summary CSV writers (deterministic formatting).

use acre_core::diagnostics::StepDiagnostics;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct ReportError {
    pub path: String,
    pub source: std::io::Error,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ReportError + '_ {
    move |source| ReportError { path: path.display().to_string(), source }
}

pub const DIAGNOSTICS_HEADER: &str = "step,t,mineral_volume,phi_int,delta_phi_int,reaction_integral,conservation_residual,coupling_iters,lscheme_iters_total,newton_iters";

/// Serializes one record as a CSV row matching [`DIAGNOSTICS_HEADER`].
pub fn diagnostics_row(d: &StepDiagnostics) -> String {
    let newton = d.newton_iterations.map(|n| n.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        d.step,
        d.t,
        d.mineral_volume,
        d.phi_int,
        d.delta_phi_int,
        d.reaction_integral,
        d.conservation_residual,
        d.coupling_iterations,
        d.lscheme_iterations_total(),
        newton
    )
}

/// Writes the per-step diagnostics as CSV, one row per step.
pub fn write_diagnostics(history: &[StepDiagnostics], path: &Path) -> Result<(), ReportError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{DIAGNOSTICS_HEADER}").map_err(io_err(path))?;
    for d in history {
        writeln!(w, "{}", diagnostics_row(d)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// One cell of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub dt: f64,
    pub stabilization_label: String,
    pub stabilization: f64,
    pub steps: usize,
    pub mean_lscheme_iters: f64,
    pub mean_coupling_iters: f64,
    pub converged: bool,
}

pub const SWEEP_HEADER: &str =
    "dt,stabilization_label,stabilization,steps,mean_lscheme_iters,mean_coupling_iters,converged";

/// Writes the sweep summary (one row per parameter combination, in input
/// order).
pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<(), ReportError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{SWEEP_HEADER}").map_err(io_err(path))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.dt,
            r.stabilization_label,
            r.stabilization,
            r.steps,
            r.mean_lscheme_iters,
            r.mean_coupling_iters,
            r.converged
        )
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
