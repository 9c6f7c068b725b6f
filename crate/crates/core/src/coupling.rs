//! Time-stepping driver and the iterative multiphysics coupling scheme.
//!
//! Within a time step the three equations are solved sequentially: first
//! the phase field (stabilized L-scheme with an extra coupling term
//! anchored at the previous coupling iterate), then solute, then heat, both
//! restarted from the time-level-`n` state with the freshly computed phase
//! field. Iterations stop when the `L^2` increment of the phase field drops
//! below the coupling tolerance; the solute and temperature errors are
//! slaved to the phase-field error, so no separate test is needed.
//!
//! The same driver also runs the phase-field-only benchmark modes where
//! solute and temperature stay frozen and the phase equation is advanced by
//! one of the three solution approaches.

use crate::allen_cahn::{
    AcVariant, LSchemeConfig, LSchemeSolver, NewtonSolver, NonlinearReport, SolverError,
};
use crate::chemistry::{ModelParams, ReactionRate};
use crate::diagnostics::{
    mineral_volume, phase_integral, reaction_integral, StepDiagnostics,
};
use crate::mesh::{l2_norm, Field, Mesh};
use crate::transport::{heat_step, solute_step};
use thiserror::Error;

/// Which solution path advances the phase field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    /// Fully implicit original Allen-Cahn, Newton iterations.
    NewtonOriginal,
    /// Fully implicit conservative Allen-Cahn, Newton iterations.
    NewtonConservative,
    /// Semi-implicit split conservative Allen-Cahn, stabilized iterations.
    LScheme,
}

/// Solver configuration for a full simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub approach: Approach,
    /// Whether solute and heat are solved and coupled per step.
    pub coupled: bool,
    /// Stabilization parameter of the phase-field iterations.
    pub stabilization: f64,
    /// Additional stabilization anchored at the previous coupling iterate.
    pub coupling_stabilization: f64,
    /// `L^2` tolerance for the phase-field iterations.
    pub lscheme_tolerance: f64,
    pub max_lscheme_iters: usize,
    /// `L^2` tolerance on the phase-field increment between coupling passes.
    pub coupling_tolerance: f64,
    pub max_coupling_iters: usize,
    pub newton_tolerance: f64,
    pub max_newton_iters: usize,
    /// Relative tolerance of the iterative linear fallback solver.
    pub linear_rel_tol: f64,
    /// Optional floor bounding the effective phase field away from zero in
    /// the transport solves (0 disables it).
    pub phase_floor: f64,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(SimulationError::InvalidConfig("dt must be positive and t_end nonnegative"));
        }
        if self.coupled && self.approach != Approach::LScheme {
            return Err(SimulationError::InvalidConfig(
                "coupled runs use the stabilized (L-scheme) phase solver",
            ));
        }
        if !self.coupled && self.coupling_stabilization > 0.0 {
            return Err(SimulationError::InvalidConfig(
                "coupling stabilization must be zero for uncoupled runs",
            ));
        }
        if !(self.lscheme_tolerance > 0.0) || self.max_lscheme_iters == 0 {
            return Err(SimulationError::InvalidConfig("invalid L-scheme tolerance or cap"));
        }
        if self.coupled && (!(self.coupling_tolerance > 0.0) || self.max_coupling_iters == 0) {
            return Err(SimulationError::InvalidConfig("invalid coupling tolerance or cap"));
        }
        Ok(())
    }
}

/// Full simulation state at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    pub phi: Field,
    pub concentration: Field,
    pub temperature: Field,
}

/// Outcome of the coupling iterations of one time step.
#[derive(Debug, Clone)]
pub struct CouplingReport {
    pub coupling_iterations: usize,
    pub lscheme_iterations_per_coupling: Vec<usize>,
    pub converged: bool,
    pub final_increment: f64,
    /// Phase-field increment after each coupling pass.
    pub increments: Vec<f64>,
    /// Final-pass concentration increment in the fluid-weighted norm
    /// `sqrt(sum_K |K| phi_K dc_K^2)`. Concentration in cells without fluid
    /// carries no ion content and is unconstrained by the equations, so the
    /// plain norm would be dominated by those meaningless values.
    pub final_concentration_increment: f64,
    /// Final-pass temperature increment (plain `L^2`; the heat equation
    /// never degenerates).
    pub final_temperature_increment: f64,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: SolverError,
    },
    #[error("step {step}: {scheme} iterations did not converge within {max_iters} (increment {increment:e})")]
    NonConvergence { step: usize, scheme: &'static str, max_iters: usize, increment: f64 },
}

/// Receives the per-step records during a run.
pub trait DiagnosticsSink {
    fn record(&mut self, state: &SimState, diagnostics: &StepDiagnostics);
}

impl DiagnosticsSink for Vec<StepDiagnostics> {
    fn record(&mut self, _state: &SimState, diagnostics: &StepDiagnostics) {
        self.push(diagnostics.clone());
    }
}

/// Sink that drops everything.
pub struct NullSink;

impl DiagnosticsSink for NullSink {
    fn record(&mut self, _state: &SimState, _diagnostics: &StepDiagnostics) {}
}

enum PhaseSolver {
    LScheme(LSchemeSolver),
    Newton(NewtonSolver),
}

/// Owns the sub-solvers and advances a simulation step by step.
pub struct SimulationDriver {
    mesh: Mesh,
    params: ModelParams,
    rate: ReactionRate,
    cfg: SolverConfig,
    phase: PhaseSolver,
}

impl SimulationDriver {
    pub fn new(
        mesh: &Mesh,
        params: ModelParams,
        rate: ReactionRate,
        cfg: SolverConfig,
    ) -> Result<Self, SimulationError> {
        cfg.validate()?;
        let phase = match cfg.approach {
            Approach::LScheme => PhaseSolver::LScheme(
                LSchemeSolver::new(
                    mesh,
                    params,
                    LSchemeConfig {
                        stabilization: cfg.stabilization,
                        coupling_stabilization: if cfg.coupled {
                            cfg.coupling_stabilization
                        } else {
                            0.0
                        },
                        tolerance: cfg.lscheme_tolerance,
                        max_iters: cfg.max_lscheme_iters,
                    },
                    cfg.dt,
                    cfg.linear_rel_tol,
                )
                .map_err(|source| SimulationError::Step { step: 0, source })?,
            ),
            Approach::NewtonOriginal | Approach::NewtonConservative => {
                let variant = if cfg.approach == Approach::NewtonOriginal {
                    AcVariant::Original
                } else {
                    AcVariant::Conservative
                };
                PhaseSolver::Newton(
                    NewtonSolver::new(
                        mesh,
                        params,
                        variant,
                        cfg.dt,
                        cfg.newton_tolerance,
                        cfg.max_newton_iters,
                        cfg.linear_rel_tol,
                    )
                    .map_err(|source| SimulationError::Step { step: 0, source })?,
                )
            }
        };
        Ok(Self { mesh: mesh.clone(), params, rate, cfg, phase })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn set_dt(&mut self, dt: f64, step: usize) -> Result<(), SimulationError> {
        match &mut self.phase {
            PhaseSolver::LScheme(s) => {
                s.set_dt(dt).map_err(|source| SimulationError::Step { step, source })?
            }
            PhaseSolver::Newton(s) => s.set_dt(dt),
        }
        self.cfg.dt = dt;
        Ok(())
    }

    /// One step of the iterative coupling scheme: phase field, then solute,
    /// then heat, repeated until the phase-field increment is below the
    /// coupling tolerance. The iteration starts from the previous time-step
    /// solution.
    pub fn coupled_step(
        &mut self,
        state: &SimState,
    ) -> Result<(SimState, CouplingReport), SimulationError> {
        let step = state.step + 1;
        let lscheme = match &mut self.phase {
            PhaseSolver::LScheme(s) => s,
            PhaseSolver::Newton(_) => {
                return Err(SimulationError::InvalidConfig(
                    "coupled runs use the stabilized (L-scheme) phase solver",
                ))
            }
        };

        let mut phi_iter = state.phi.clone();
        let mut c_iter = state.concentration.clone();
        let mut t_iter = state.temperature.clone();
        let mut lscheme_counts = Vec::new();
        let mut increments: Vec<f64> = Vec::new();
        let mut converged = false;
        let mut final_increment = f64::INFINITY;
        let mut final_c_increment = 0.0;
        let mut final_t_increment = 0.0;
        // The implicit/explicit assignment is a per-time-step choice: it is
        // derived freely during the first coupling pass and kept for the
        // remaining passes of the same step. A cell on the classification
        // boundary would otherwise land on opposite sides of the split in
        // consecutive passes and lock the phase increment into a two-cycle
        // just above the tolerance. Any fixed split is conservative.
        let mut pinned_mask: Option<crate::allen_cahn::SplitMask> = None;

        for _ in 0..self.cfg.max_coupling_iters {
            let (phi_next, report) = match &pinned_mask {
                Some(mask) => lscheme
                    .step_with_pinned_mask(&state.phi, &t_iter, &c_iter, &self.rate, Some(&phi_iter), mask)
                    .map_err(|source| SimulationError::Step { step, source })?,
                None => lscheme
                    .step(&state.phi, &t_iter, &c_iter, &self.rate, Some(&phi_iter))
                    .map_err(|source| SimulationError::Step { step, source })?,
            };
            if pinned_mask.is_none() {
                pinned_mask = report.final_mask.clone();
            }
            if !report.converged {
                return Err(SimulationError::NonConvergence {
                    step,
                    scheme: "L-scheme",
                    max_iters: self.cfg.max_lscheme_iters,
                    increment: report.final_increment,
                });
            }
            lscheme_counts.push(report.iterations);

            let c_next = solute_step(
                &self.mesh,
                &phi_next,
                &state.phi,
                &state.concentration,
                &self.params,
                self.cfg.dt,
                self.cfg.phase_floor,
                self.cfg.linear_rel_tol,
            )
            .map_err(|source| SimulationError::Step { step, source })?;
            let t_next = heat_step(
                &self.mesh,
                &phi_next,
                &state.phi,
                &state.temperature,
                &self.params,
                self.cfg.dt,
                self.cfg.linear_rel_tol,
            )
            .map_err(|source| SimulationError::Step { step, source })?;

            let diff: Vec<f64> = phi_next
                .values()
                .iter()
                .zip(phi_iter.values())
                .map(|(a, b)| a - b)
                .collect();
            let increment = l2_norm(&self.mesh, &diff);
            increments.push(increment);
            let mut weighted_c2 = 0.0;
            let mut t2 = 0.0;
            for k in 0..self.mesh.n_cells() {
                let dc = c_next[k] - c_iter[k];
                weighted_c2 += phi_next[k].max(0.0) * dc * dc;
                let dt_k = t_next[k] - t_iter[k];
                t2 += dt_k * dt_k;
            }
            final_c_increment = (self.mesh.cell_measure() * weighted_c2).sqrt();
            final_t_increment = (self.mesh.cell_measure() * t2).sqrt();

            phi_iter = phi_next;
            c_iter = c_next;
            t_iter = t_next;
            final_increment = increment;

            if increment <= self.cfg.coupling_tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SimulationError::NonConvergence {
                step,
                scheme: "coupling",
                max_iters: self.cfg.max_coupling_iters,
                increment: final_increment,
            });
        }

        let next = SimState {
            t: state.t + self.cfg.dt,
            step,
            phi: phi_iter,
            concentration: c_iter,
            temperature: t_iter,
        };
        let report = CouplingReport {
            coupling_iterations: lscheme_counts.len(),
            lscheme_iterations_per_coupling: lscheme_counts,
            converged,
            final_increment,
            increments,
            final_concentration_increment: final_c_increment,
            final_temperature_increment: final_t_increment,
        };
        Ok((next, report))
    }

    /// One phase-field-only step; solute and temperature stay frozen.
    pub fn phase_only_step(
        &mut self,
        state: &SimState,
    ) -> Result<(SimState, NonlinearReport), SimulationError> {
        let step = state.step + 1;
        let (phi_next, report) = match &mut self.phase {
            PhaseSolver::LScheme(s) => s
                .step(&state.phi, &state.temperature, &state.concentration, &self.rate, None)
                .map_err(|source| SimulationError::Step { step, source })?,
            PhaseSolver::Newton(s) => s
                .step(&state.phi, &state.temperature, &state.concentration, &self.rate)
                .map_err(|source| SimulationError::Step { step, source })?,
        };
        if !report.converged {
            let scheme = match self.cfg.approach {
                Approach::LScheme => "L-scheme",
                _ => "Newton",
            };
            let max_iters = match self.cfg.approach {
                Approach::LScheme => self.cfg.max_lscheme_iters,
                _ => self.cfg.max_newton_iters,
            };
            return Err(SimulationError::NonConvergence {
                step,
                scheme,
                max_iters,
                increment: report.final_increment,
            });
        }
        let next = SimState {
            t: state.t + self.cfg.dt,
            step,
            phi: phi_next,
            concentration: state.concentration.clone(),
            temperature: state.temperature.clone(),
        };
        Ok((next, report))
    }

    /// Advances one step (coupled or phase-only) and assembles the
    /// per-step diagnostics.
    pub fn step(
        &mut self,
        state: &SimState,
    ) -> Result<(SimState, StepDiagnostics), SimulationError> {
        let step = state.step + 1;
        let phi_int_before = phase_integral(&self.mesh, &state.phi);
        let reaction = reaction_integral(
            &self.mesh,
            &state.phi,
            &state.temperature,
            &state.concentration,
            &self.params,
            &self.rate,
            self.cfg.dt,
        )
        .map_err(|e| SimulationError::Step { step, source: SolverError::Chemistry(e) })?;

        let (next, coupling_iterations, lscheme_iterations, newton_iterations) = if self.cfg.coupled
        {
            let (next, report) = self.coupled_step(state)?;
            (next, report.coupling_iterations, report.lscheme_iterations_per_coupling, None)
        } else {
            let (next, report) = self.phase_only_step(state)?;
            match self.cfg.approach {
                Approach::LScheme => (next, 0, vec![report.iterations], None),
                _ => (next, 0, Vec::new(), Some(report.iterations)),
            }
        };

        let phi_int_after = phase_integral(&self.mesh, &next.phi);
        let delta_phi_int = phi_int_after - phi_int_before;
        let diagnostics = StepDiagnostics {
            step: next.step,
            t: next.t,
            mineral_volume: mineral_volume(&self.mesh, &next.phi),
            phi_int: phi_int_after,
            delta_phi_int,
            reaction_integral: reaction,
            conservation_residual: (delta_phi_int - reaction).abs(),
            coupling_iterations,
            lscheme_iterations,
            newton_iterations,
        };
        Ok((next, diagnostics))
    }

    /// Runs from `initial` until the configured end time, emitting one
    /// diagnostics record per step. A final partial step is taken with a
    /// truncated time step size if the end time is not a multiple of `dt`.
    pub fn run(
        &mut self,
        initial: SimState,
        sink: &mut dyn DiagnosticsSink,
    ) -> Result<SimState, SimulationError> {
        let dt = self.cfg.dt;
        let mut state = initial;
        let t_end = self.cfg.t_end;
        loop {
            let remaining = t_end - state.t;
            if remaining <= dt * 1e-9 {
                break;
            }
            if remaining < dt {
                self.set_dt(remaining, state.step + 1)?;
            }
            let (next, diagnostics) = self.step(&state)?;
            sink.record(&next, &diagnostics);
            state = next;
        }
        if self.cfg.dt != dt {
            self.set_dt(dt, state.step)?;
        }
        Ok(state)
    }
}

/// Human-readable record of the theoretical time-step and stabilization
/// restrictions for the coupling iterations. The constants involved are not
/// computable from the discrete data, so they are listed symbolically; the
/// supplied nonlinearity bound is substituted as a stand-in where that gives
/// a concrete number.
pub fn dt_guidance(params: &ModelParams, nonlinearity_bound: f64, dt: Option<f64>) -> String {
    let mg = nonlinearity_bound;
    let mut out = String::new();
    out.push_str("Coupling-iteration convergence restrictions (not checked at runtime):\n");
    out.push_str("  time step:      dt < 1 / (MGc * (5 + Ec/2 + ET/2))\n");
    out.push_str("  stabilization:  L_coup > max{0, 10*MGc - 2/dt}\n");
    out.push_str("with symbolic constants:\n");
    out.push_str(
        "  MGc  = max over the admissible (phi, T, c) box of the partial\n         derivatives of the phase-field nonlinearity (all three arguments)\n",
    );
    out.push_str("  Ec   = (2*dt/phi_m) * (D*Cc^2/(2*phi_m) + m_m^2/(2*phi_m*dt))\n");
    out.push_str(
        "  ET   = (2*dt/(cpf*phi_m + cpm*(1-phi_M))) * (k-contrast and T_M terms)\n",
    );
    out.push_str(
        "  Cc, CT = gradient bounds of concentration and temperature;\n  phi_m, phi_M = phase-field bounds away from 0 and 1; T_M = temperature bound.\n",
    );
    out.push_str(&format!(
        "These cannot be evaluated from the discrete data; using the one-sided\nphase-derivative bound {mg} as a stand-in for MGc:\n",
    ));
    match dt {
        Some(dt) => {
            let threshold = 10.0 * mg - 2.0 / dt;
            out.push_str(&format!(
                "  L_coup > max{{0, 10*{mg} - 2/{dt}}} = max{{0, {threshold}}}\n",
            ));
            if threshold < 0.0 {
                out.push_str(&format!(
                    "  10*{mg} - 2/{dt} = {threshold} < 0, so any L_coup > 0 is admissible\n  provided MGc <= {mg}.\n",
                ));
            }
        }
        None => {
            out.push_str(&format!("  L_coup > max{{0, 10*{mg} - 2/dt}}\n"));
        }
    }
    let _ = params;
    out
}
