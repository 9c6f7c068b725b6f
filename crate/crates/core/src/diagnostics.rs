//! Conservation audits and iteration bookkeeping.
//!
//! For the conservative phase field the change of the phase integral over a
//! step must balance the integrated reaction term; the per-step residual of
//! that balance is the primary conservation diagnostic. Reductions use a
//! fixed summation order so repeated runs are bit-identical.

use crate::chemistry::{ChemistryError, ModelParams, ReactionRate};
use crate::mesh::{Field, Mesh};

/// Per-time-step record emitted by the simulation driver.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// Completed step count (1-based).
    pub step: usize,
    /// Time after the step.
    pub t: f64,
    /// `sum_K |K| (1 - phi_K)` after the step.
    pub mineral_volume: f64,
    /// `sum_K |K| phi_K` after the step.
    pub phi_int: f64,
    /// Change of the phase integral over the step.
    pub delta_phi_int: f64,
    /// Explicit reaction integral at the start of the step,
    /// `dt * sum_K |K| (-4/lambda) phi (1 - phi) f(T, c) / m_m`.
    pub reaction_integral: f64,
    /// `|delta_phi_int - reaction_integral|`.
    pub conservation_residual: f64,
    /// Coupling iterations in the step (0 for phase-only runs).
    pub coupling_iterations: usize,
    /// Nonlinear iterations per coupling iteration (single entry for
    /// phase-only runs using the stabilized scheme).
    pub lscheme_iterations: Vec<usize>,
    /// Newton iterations for the fully implicit approaches.
    pub newton_iterations: Option<usize>,
}

impl StepDiagnostics {
    pub fn lscheme_iterations_total(&self) -> usize {
        self.lscheme_iterations.iter().sum()
    }
}

/// Mineral volume `sum_K |K| (1 - phi_K)`.
pub fn mineral_volume(mesh: &Mesh, phi: &Field) -> f64 {
    let sum: f64 = phi.values().iter().map(|v| 1.0 - v).sum();
    sum * mesh.cell_measure()
}

/// Phase integral `sum_K |K| phi_K` (the fluid volume).
pub fn phase_integral(mesh: &Mesh, phi: &Field) -> f64 {
    let sum: f64 = phi.values().iter().sum();
    sum * mesh.cell_measure()
}

/// Explicit reaction integral over one step of length `dt`, evaluated with
/// midpoint quadrature at the supplied (start-of-step) fields.
pub fn reaction_integral(
    mesh: &Mesh,
    phi: &Field,
    temperature: &Field,
    concentration: &Field,
    params: &ModelParams,
    rate: &ReactionRate,
    dt: f64,
) -> Result<f64, ChemistryError> {
    let lam = params.interface_width;
    let m_m = params.mineral_molar_density;
    let mut sum = 0.0;
    for k in 0..mesh.n_cells() {
        let f = rate.eval(params, temperature[k], concentration[k])?;
        sum += -(4.0 / lam) * phi[k] * (1.0 - phi[k]) * f / m_m;
    }
    Ok(dt * sum * mesh.cell_measure())
}

/// Summary statistics over a simulation history.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    pub steps: usize,
    /// Maximum per-step conservation residual.
    pub max_residual: f64,
    pub mean_coupling_iterations: f64,
    /// Mean of the per-step nonlinear iteration totals.
    pub mean_lscheme_iterations: f64,
    pub mean_newton_iterations: Option<f64>,
    /// Mean nonlinear iterations per coupling-iteration index
    /// (first, second, ... coupling pass).
    pub mean_lscheme_per_coupling_index: Vec<f64>,
}

/// Aggregates per-step records into the table-style means and the maximum
/// conservation residual.
pub fn conservation_audit(history: &[StepDiagnostics]) -> ConservationReport {
    let steps = history.len();
    let mut max_residual = 0.0_f64;
    let mut coupling_sum = 0usize;
    let mut lscheme_sum = 0usize;
    let mut newton_sum = 0usize;
    let mut newton_count = 0usize;
    let mut per_index_sum: Vec<usize> = Vec::new();
    let mut per_index_count: Vec<usize> = Vec::new();

    for d in history {
        max_residual = max_residual.max(d.conservation_residual);
        coupling_sum += d.coupling_iterations;
        lscheme_sum += d.lscheme_iterations_total();
        if let Some(n) = d.newton_iterations {
            newton_sum += n;
            newton_count += 1;
        }
        for (i, &n) in d.lscheme_iterations.iter().enumerate() {
            if per_index_sum.len() <= i {
                per_index_sum.push(0);
                per_index_count.push(0);
            }
            per_index_sum[i] += n;
            per_index_count[i] += 1;
        }
    }
    let denom = steps.max(1) as f64;
    ConservationReport {
        steps,
        max_residual,
        mean_coupling_iterations: coupling_sum as f64 / denom,
        mean_lscheme_iterations: lscheme_sum as f64 / denom,
        mean_newton_iterations: if newton_count > 0 {
            Some(newton_sum as f64 / newton_count as f64)
        } else {
            None
        },
        mean_lscheme_per_coupling_index: per_index_sum
            .iter()
            .zip(&per_index_count)
            .map(|(&s, &c)| s as f64 / c.max(1) as f64)
            .collect(),
    }
}
