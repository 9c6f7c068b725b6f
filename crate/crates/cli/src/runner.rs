//! Shared run orchestration for the CLI subcommands.

use crate::config::{ConfigError, ScenarioConfig, Stabilization};
use crate::report::{self, ReportError, SweepRow};
use crate::scenario::{build_mesh, initial_condition};
use crate::vtk::{self, VtkError};
use acre_core::coupling::{
    DiagnosticsSink, SimState, SimulationDriver, SimulationError,
};
use acre_core::diagnostics::{conservation_audit, ConservationReport, StepDiagnostics};
use acre_core::mesh::Mesh;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Vtk(#[from] VtkError),
    #[error("cannot create output directory {path}: {source}")]
    OutputDir { path: String, source: std::io::Error },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for solver
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Simulation(_) => 3,
            RunError::Report(_) | RunError::Vtk(_) | RunError::OutputDir { .. } => 1,
        }
    }
}

/// Collects history and writes periodic snapshots.
struct RunSink<'a> {
    mesh: &'a Mesh,
    history: Vec<StepDiagnostics>,
    snapshots: Option<SnapshotPlan>,
    error: Option<VtkError>,
}

struct SnapshotPlan {
    dir: PathBuf,
    every: usize,
    times: Vec<f64>,
    half_step: f64,
}

impl SnapshotPlan {
    fn due(&mut self, state: &SimState) -> bool {
        let periodic = self.every > 0 && state.step % self.every == 0;
        let mut timed = false;
        self.times.retain(|&t| {
            if (state.t - t).abs() <= self.half_step {
                timed = true;
                false
            } else {
                true
            }
        });
        periodic || timed
    }
}

impl DiagnosticsSink for RunSink<'_> {
    fn record(&mut self, state: &SimState, diagnostics: &StepDiagnostics) {
        self.history.push(diagnostics.clone());
        if self.error.is_some() {
            return;
        }
        if let Some(plan) = self.snapshots.as_mut() {
            if plan.due(state) {
                let path = plan.dir.join(format!("fields_{:06}.vtk", state.step));
                if let Err(e) = vtk::write_fields(state, self.mesh, &path) {
                    self.error = Some(e);
                }
            }
        }
    }
}

pub struct RunOutcome {
    pub mesh: Mesh,
    pub final_state: SimState,
    pub history: Vec<StepDiagnostics>,
    pub audit: ConservationReport,
    pub warnings: Vec<String>,
}

/// Runs the configured simulation. When `out_dir` is given, writes the
/// diagnostics CSV, the initial and final snapshots and the periodic
/// snapshots there.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunOutcome, RunError> {
    let warnings = cfg.validate()?;
    let mesh = build_mesh(cfg)?;
    let initial = initial_condition(cfg, &mesh)?;
    let solver_cfg = cfg.solver_config()?;
    let mut driver = SimulationDriver::new(
        &mesh,
        cfg.model_params(),
        cfg.rate(),
        solver_cfg,
    )?;

    let snapshots = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| RunError::OutputDir {
                path: dir.display().to_string(),
                source,
            })?;
            vtk::write_fields(&initial, &mesh, &dir.join("fields_000000.vtk"))?;
            Some(SnapshotPlan {
                dir: dir.to_path_buf(),
                every: cfg.output.snapshot_every,
                times: cfg.output.snapshot_times.clone(),
                half_step: 0.5 * cfg.solver.dt,
            })
        }
        None => None,
    };
    let mut sink = RunSink { mesh: &mesh, history: Vec::new(), snapshots, error: None };
    let run_result = driver.run(initial, &mut sink);
    let RunSink { history, error, .. } = sink;

    // Always persist the diagnostics gathered so far.
    if let Some(dir) = out_dir {
        report::write_diagnostics(&history, &dir.join("diagnostics.csv"))?;
    }
    let final_state = run_result?;
    if let Some(e) = error {
        return Err(e.into());
    }
    if let Some(dir) = out_dir {
        let path = dir.join(format!("fields_{:06}.vtk", final_state.step));
        if !path.exists() {
            vtk::write_fields(&final_state, &mesh, &path)?;
        }
    }
    let audit = conservation_audit(&history);
    Ok(RunOutcome { mesh, final_state, history, audit, warnings })
}

/// Number of worker threads for sweeps: `ACRE_THREADS` if set, otherwise
/// the available parallelism.
fn sweep_threads(jobs: usize) -> usize {
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("ACRE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(default);
    cap.min(jobs).max(1)
}

/// Runs the full Cartesian sweep of time-step sizes and stabilization
/// choices. Each combination runs independently (parallel up to
/// `ACRE_THREADS`); results are reported in input order, grouped by
/// stabilization. Returns the rows and whether every cell converged.
pub fn run_sweep(
    cfg: &ScenarioConfig,
    dt_list: &[f64],
    l_list: &[Stabilization],
) -> Result<(Vec<SweepRow>, bool), RunError> {
    cfg.validate()?;
    let bound = cfg.stabilization_bound()?;
    let mut jobs = Vec::new();
    for l in l_list {
        for &dt in dt_list {
            jobs.push((*l, dt));
        }
    }
    let n_jobs = jobs.len();
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; n_jobs]);
    let next_job = AtomicUsize::new(0);
    let threads = sweep_threads(n_jobs);

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let index = next_job.fetch_add(1, Ordering::Relaxed);
                if index >= n_jobs {
                    break;
                }
                let (l, dt) = jobs[index];
                let mut run_cfg = cfg.clone();
                run_cfg.solver.dt = dt;
                run_cfg.solver.stabilization = l;
                let row = sweep_cell(&run_cfg, bound, l, dt);
                results.lock().unwrap()[index] = Some(row);
            });
        }
    });

    let rows: Vec<SweepRow> =
        results.into_inner().unwrap().into_iter().map(|r| r.expect("job completed")).collect();
    let all_converged = rows.iter().all(|r| r.converged);
    Ok((rows, all_converged))
}

fn sweep_cell(cfg: &ScenarioConfig, bound: f64, l: Stabilization, dt: f64) -> SweepRow {
    let stabilization = l.resolve(bound);
    let mut row = SweepRow {
        dt,
        stabilization_label: l.label(),
        stabilization,
        steps: 0,
        mean_lscheme_iters: 0.0,
        mean_coupling_iters: 0.0,
        converged: false,
    };
    let Ok(mesh) = build_mesh(cfg) else {
        return row;
    };
    let Ok(initial) = initial_condition(cfg, &mesh) else {
        return row;
    };
    let Ok(solver_cfg) = cfg.solver_config() else {
        return row;
    };
    let Ok(mut driver) = SimulationDriver::new(&mesh, cfg.model_params(), cfg.rate(), solver_cfg)
    else {
        return row;
    };
    let mut history: Vec<StepDiagnostics> = Vec::new();
    let outcome = driver.run(initial, &mut history);
    let audit = conservation_audit(&history);
    row.steps = audit.steps;
    row.mean_lscheme_iters = audit.mean_lscheme_iterations;
    row.mean_coupling_iters = audit.mean_coupling_iterations;
    row.converged = outcome.is_ok();
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, ScenarioKind};

    #[test]
    fn short_circle_run_produces_outputs() {
        let mut cfg = ScenarioConfig::preset(ScenarioKind::Circle);
        cfg.mesh.nx = 24;
        cfg.mesh.ny = 24;
        cfg.solver.t_end = 5e-4; // 5 steps
        cfg.output.snapshot_every = 2;
        cfg.output.snapshot_times = vec![];
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_scenario(&cfg, Some(dir.path())).unwrap();
        assert_eq!(outcome.history.len(), 5);
        assert!(dir.path().join("diagnostics.csv").exists());
        assert!(dir.path().join("fields_000000.vtk").exists());
        assert!(dir.path().join("fields_000002.vtk").exists());
        assert!(dir.path().join("fields_000004.vtk").exists());
        assert!(dir.path().join("fields_000005.vtk").exists());
        let csv = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn identical_configs_give_byte_identical_diagnostics() {
        let text = r#"
scenario = "channel"
[mesh]
nx = 40
ny = 40
[solver]
t_end = 4e-3
"#;
        let cfg = parse_config(text, "inline").unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_scenario(&cfg, Some(dir_a.path())).unwrap();
        run_scenario(&cfg, Some(dir_b.path())).unwrap();
        let a = std::fs::read(dir_a.path().join("diagnostics.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("diagnostics.csv")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_reports_rows_in_input_order() {
        let text = r#"
scenario = "circle"
[mesh]
nx = 20
ny = 20
[params]
interface_diffusion = 0.1
[reaction]
kind = "constant"
value = -0.1
[solver]
t_end = 5e-3
"#;
        let cfg = parse_config(text, "inline").unwrap();
        let dts = [1e-3, 2.5e-3];
        let ls = [Stabilization::BoundFraction(1.0), Stabilization::BoundFraction(4.0)];
        let (rows, all_converged) = run_sweep(&cfg, &dts, &ls).unwrap();
        assert!(all_converged);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].stabilization_label, "MG");
        assert_eq!(rows[0].dt, 1e-3);
        assert_eq!(rows[1].dt, 2.5e-3);
        assert_eq!(rows[2].stabilization_label, "MG/4");
        assert!((rows[0].stabilization - 968.0).abs() < 1e-9);
        assert!((rows[2].stabilization - 242.0).abs() < 1e-9);
        assert!(rows.iter().all(|r| r.steps > 0 && r.mean_lscheme_iters > 0.0));
    }
}
