//! Implicit finite-volume solves for solute concentration and temperature.
//!
//! Both equations are linear once the phase field is known:
//!
//! ```text
//! (phi c + (1 - phi) m_m)_t = D div(phi grad c)
//! ((cp rho)_phi T)_t        = div(k_phi grad T)
//! ```
//!
//! with `(cp rho)_phi` and `k_phi` interpolated linearly between the fluid
//! and mineral values. The time term is discretized so that the summed
//! conserved quantities (total ions, total energy) change only through the
//! boundary fluxes, which vanish for pure Neumann data.

use crate::allen_cahn::SolverError;
use crate::chemistry::ModelParams;
use crate::mesh::{assemble_diffusion, Coefficient, Field, Mesh, MeshError, SpdSolver, SystemDiagonal};

/// Solute concentration and temperature on the same mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub concentration: Field,
    pub temperature: Field,
}

/// Undershoot below this is treated as a genuine negative phase value
/// instead of nonlinear-iteration roundoff.
const PHASE_UNDERSHOOT_LIMIT: f64 = -1e-6;

/// Floors the phase field at `max(phase_floor, 0)`, rejecting values that
/// are negative beyond iteration roundoff.
fn sanitized_phase(phi: &Field, phase_floor: f64) -> Result<Vec<f64>, SolverError> {
    let floor = phase_floor.max(0.0);
    phi.values()
        .iter()
        .enumerate()
        .map(|(cell, &v)| {
            if v < PHASE_UNDERSHOOT_LIMIT {
                Err(SolverError::Mesh(MeshError::NegativeCoefficient { cell, value: v }))
            } else {
                Ok(v.max(floor))
            }
        })
        .collect()
}

/// Advances the solute concentration one implicit step given the phase
/// field before and after the step. Dissolved ions bound in the mineral
/// (`(1 - phi) m_m`) enter the time term, so the total ion content is
/// conserved under Neumann conditions regardless of how `phi` moved.
///
/// `phase_floor` (default 0) bounds the effective phase field away from
/// zero; nonlinear-iteration undershoot below zero is floored either way.
pub fn solute_step(
    mesh: &Mesh,
    phi_new: &Field,
    phi_old: &Field,
    c_old: &Field,
    params: &ModelParams,
    dt: f64,
    phase_floor: f64,
    linear_rel_tol: f64,
) -> Result<Field, SolverError> {
    assert!(dt > 0.0);
    let n = mesh.n_cells();
    let phi_new_v = sanitized_phase(phi_new, phase_floor)?;
    let phi_old_v = sanitized_phase(phi_old, phase_floor)?;
    let op = assemble_diffusion(mesh, Coefficient::PerCell(&phi_new_v), c_old.bc())?;
    let inv_dt = 1.0 / dt;
    let m_m = params.mineral_molar_density;
    if phi_new_v.iter().all(|&v| v == 0.0) && c_old.bc().is_pure_neumann() {
        return Err(SolverError::Mesh(MeshError::Linear(
            crate::linalg::LinalgError::NotPositiveDefinite { row: 0 },
        )));
    }
    // Cells without fluid decouple: every incident edge coefficient is the
    // harmonic mean with zero. Their concentration carries no ion content
    // (weight phi = 0), so carry the previous value through an identity row.
    let diag: Vec<f64> = (0..n)
        .map(|k| if phi_new_v[k] == 0.0 { inv_dt } else { inv_dt * phi_new_v[k] })
        .collect();
    let solver = SpdSolver::new(
        &op,
        SystemDiagonal::PerCell(diag),
        params.solute_diffusivity,
        linear_rel_tol,
    )
    .map_err(singular_hint)?;
    let mut rhs: Vec<f64> = (0..n)
        .map(|k| {
            if phi_new_v[k] == 0.0 {
                inv_dt * c_old[k]
            } else {
                inv_dt * (phi_old_v[k] * c_old[k] + (phi_new_v[k] - phi_old_v[k]) * m_m)
                    + params.solute_diffusivity * op.bc_rhs()[k]
            }
        })
        .collect();
    solver.solve_in_place(&mut rhs).map_err(SolverError::Mesh)?;
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteIterate { iterations: 1 });
    }
    Ok(c_old.with_values(rhs))
}

/// Advances the temperature one implicit step with phase-dependent heat
/// capacity and conductivity.
pub fn heat_step(
    mesh: &Mesh,
    phi_new: &Field,
    phi_old: &Field,
    t_old: &Field,
    params: &ModelParams,
    dt: f64,
    linear_rel_tol: f64,
) -> Result<Field, SolverError> {
    assert!(dt > 0.0);
    let n = mesh.n_cells();
    let conductivity: Vec<f64> = (0..n).map(|k| params.conductivity_at(phi_new[k])).collect();
    let op = assemble_diffusion(mesh, Coefficient::PerCell(&conductivity), t_old.bc())?;
    let inv_dt = 1.0 / dt;
    let diag: Vec<f64> = (0..n).map(|k| inv_dt * params.heat_capacity_at(phi_new[k])).collect();
    let solver = SpdSolver::new(&op, SystemDiagonal::PerCell(diag), 1.0, linear_rel_tol)
        .map_err(singular_hint)?;
    let mut rhs: Vec<f64> = (0..n)
        .map(|k| inv_dt * params.heat_capacity_at(phi_old[k]) * t_old[k] + op.bc_rhs()[k])
        .collect();
    solver.solve_in_place(&mut rhs).map_err(SolverError::Mesh)?;
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteIterate { iterations: 1 });
    }
    Ok(t_old.with_values(rhs))
}

fn singular_hint(err: MeshError) -> SolverError {
    SolverError::Mesh(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryCondition, FieldBc};

    fn params() -> ModelParams {
        ModelParams {
            interface_width: 0.05,
            interface_diffusion: 0.01,
            rate_constant: 1.0,
            activation_temperature: 1.0,
            equilibrium_concentration: 0.5,
            mineral_molar_density: 1.0,
            solute_diffusivity: 1.0,
            fluid_heat_capacity: 1.0,
            mineral_heat_capacity: 1.0,
            fluid_conductivity: 1.0,
            mineral_conductivity: 2.0,
        }
    }

    #[test]
    fn solute_equilibrium_states_are_fixed_points() {
        let mesh = Mesh::unit_square(8, 8).unwrap();
        let bc = FieldBc::all_neumann();
        let p = params();
        // All fluid, uniform concentration.
        let phi = Field::constant(&mesh, 1.0, bc);
        let c0 = Field::constant(&mesh, 0.37, bc);
        let c1 = solute_step(&mesh, &phi, &phi, &c0, &p, 1e-3, 0.0, 1e-13).unwrap();
        for k in 0..mesh.n_cells() {
            assert!((c1[k] - 0.37).abs() < 1e-12);
        }
        // Static diffuse interface, concentration at equilibrium.
        let phi = Field::from_fn(&mesh, bc, |_, y| 1.0 / (1.0 + (4.0 * (0.25 - y) / 0.05).exp()));
        let ceq = Field::constant(&mesh, 0.5, bc);
        let c1 = solute_step(&mesh, &phi, &phi, &ceq, &p, 1e-3, 0.0, 1e-13).unwrap();
        for k in 0..mesh.n_cells() {
            assert!((c1[k] - 0.5).abs() < 1e-11);
        }
    }

    #[test]
    fn solute_single_cell_algebraic_oracle() {
        // One cell, Neumann: phi_new c_new + (1-phi_new) m_m must equal
        // phi_old c_old + (1-phi_old) m_m, so
        // c_new = (phi_old c_old + (phi_new - phi_old) m_m) / phi_new.
        let mesh = Mesh::unit_square(1, 1).unwrap();
        let bc = FieldBc::all_neumann();
        let p = params();
        for (phi_old_v, phi_new_v, c_old_v) in
            [(1.0, 0.9, 0.2), (1.0, 0.999, 0.8), (0.5, 0.7, 0.4)]
        {
            let phi_new = Field::constant(&mesh, phi_new_v, bc);
            let phi_old = Field::constant(&mesh, phi_old_v, bc);
            let c_old = Field::constant(&mesh, c_old_v, bc);
            let c_new = solute_step(&mesh, &phi_new, &phi_old, &c_old, &p, 1e-3, 0.0, 1e-13).unwrap();
            let expected = (phi_old_v * c_old_v + (phi_new_v - phi_old_v) * 1.0) / phi_new_v;
            assert!((c_new[0] - expected).abs() < 1e-13, "{} vs {expected}", c_new[0]);
            // Dissolution (phi increasing) raises c when c_old < m_m.
            if phi_new_v > phi_old_v && c_old_v < 1.0 {
                assert!(c_new[0] > c_old_v);
            }
        }
    }

    #[test]
    fn solute_rejects_all_mineral_neumann_system() {
        let mesh = Mesh::unit_square(4, 4).unwrap();
        let bc = FieldBc::all_neumann();
        let p = params();
        let phi = Field::constant(&mesh, 0.0, bc);
        let c = Field::constant(&mesh, 0.5, bc);
        assert!(solute_step(&mesh, &phi, &phi, &c, &p, 1e-3, 0.0, 1e-13).is_err());
    }

    #[test]
    fn total_ions_conserved_for_evolving_phase_field() {
        let mesh = Mesh::unit_square(20, 20).unwrap();
        let bc = FieldBc::all_neumann();
        let p = params();
        let phi_old = Field::from_fn(&mesh, bc, |_, y| 1.0 / (1.0 + (4.0 * (0.25 - y) / 0.05).exp()));
        // Move the interface up a little between the time levels.
        let phi_new = Field::from_fn(&mesh, bc, |_, y| 1.0 / (1.0 + (4.0 * (0.27 - y) / 0.05).exp()));
        let c_old = Field::from_fn(&mesh, bc, |x, _| 0.4 + 0.1 * x);
        let c_new = solute_step(&mesh, &phi_new, &phi_old, &c_old, &p, 1e-3, 0.0, 1e-13).unwrap();
        let measure = mesh.cell_measure();
        let total = |phi: &Field, c: &Field| -> f64 {
            (0..mesh.n_cells())
                .map(|k| measure * (phi[k] * c[k] + (1.0 - phi[k]) * p.mineral_molar_density))
                .sum()
        };
        let before = total(&phi_old, &c_old);
        let after = total(&phi_new, &c_new);
        assert!((after - before).abs() < 1e-10, "ion drift {:e}", after - before);
    }

    #[test]
    fn heat_identical_materials_make_temperature_independent_of_phase() {
        let mesh = Mesh::unit_square(10, 10).unwrap();
        let bc = FieldBc::all_neumann();
        let mut p = params();
        p.mineral_conductivity = p.fluid_conductivity;
        p.mineral_heat_capacity = p.fluid_heat_capacity;
        let phi_old = Field::from_fn(&mesh, bc, |x, _| x.clamp(0.1, 1.0));
        let phi_new = Field::from_fn(&mesh, bc, |x, _| (x * x).clamp(0.1, 1.0));
        let t_old = Field::constant(&mesh, 0.8, bc);
        let t_new = heat_step(&mesh, &phi_new, &phi_old, &t_old, &p, 1e-3, 1e-13).unwrap();
        for k in 0..mesh.n_cells() {
            assert!((t_new[k] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_single_cell_capacity_ratio_oracle() {
        // One cell, Neumann: T_new = (cp_old / cp_new) T_old.
        let mesh = Mesh::unit_square(1, 1).unwrap();
        let bc = FieldBc::all_neumann();
        let mut p = params();
        p.fluid_heat_capacity = 1.0;
        p.mineral_heat_capacity = 2.0;
        let phi_old = Field::constant(&mesh, 1.0, bc);
        let phi_new = Field::constant(&mesh, 0.5, bc);
        let t_old = Field::constant(&mesh, 0.9, bc);
        let t_new = heat_step(&mesh, &phi_new, &phi_old, &t_old, &p, 1e-3, 1e-13).unwrap();
        assert!((t_new[0] - 0.9 * 2.0 / 3.0).abs() < 1e-14, "{}", t_new[0]);
    }

    #[test]
    fn heat_relaxes_to_dirichlet_value_with_max_principle() {
        // 1-D fluid column, Dirichlet 0.9 on the left: T decreases
        // monotonically toward the boundary value and never leaves the
        // range of the data.
        let mesh = Mesh::unit_square(50, 1).unwrap();
        let bc = FieldBc {
            left: BoundaryCondition::Dirichlet(0.9),
            right: BoundaryCondition::HomogeneousNeumann,
            bottom: BoundaryCondition::HomogeneousNeumann,
            top: BoundaryCondition::HomogeneousNeumann,
        };
        let p = params();
        let phi = Field::constant(&mesh, 1.0, FieldBc::all_neumann());
        let mut t = Field::constant(&mesh, 1.0, bc);
        let mut prev_mean = 1.0;
        for _ in 0..500 {
            t = heat_step(&mesh, &phi, &phi, &t, &p, 1e-3, 1e-13).unwrap();
            assert!(t.min() >= 0.9 - 1e-10 && t.max() <= 1.0 + 1e-10);
            let mean: f64 = t.values().iter().sum::<f64>() / mesh.n_cells() as f64;
            assert!(mean <= prev_mean + 1e-12);
            prev_mean = mean;
        }
        assert!((prev_mean - 0.9).abs() < 0.05, "mean {prev_mean} has not relaxed");
    }

    #[test]
    fn total_energy_conserved_under_neumann() {
        let mesh = Mesh::unit_square(16, 16).unwrap();
        let bc = FieldBc::all_neumann();
        let p = params();
        let phi = Field::from_fn(&mesh, bc, |_, y| 1.0 / (1.0 + (4.0 * (0.25 - y) / 0.05).exp()));
        let t_old = Field::from_fn(&mesh, bc, |x, y| 0.9 + 0.05 * (x + y));
        let t_new = heat_step(&mesh, &phi, &phi, &t_old, &p, 1e-3, 1e-13).unwrap();
        let measure = mesh.cell_measure();
        let energy = |t: &Field| -> f64 {
            (0..mesh.n_cells()).map(|k| measure * p.heat_capacity_at(phi[k]) * t[k]).sum()
        };
        let drift = energy(&t_new) - energy(&t_old);
        assert!(drift.abs() < 1e-10, "energy drift {drift:e}");
    }

    #[test]
    fn solute_maximum_principle_no_source() {
        let mesh = Mesh::unit_square(15, 15).unwrap();
        let bc = FieldBc {
            left: BoundaryCondition::Dirichlet(0.25),
            right: BoundaryCondition::HomogeneousNeumann,
            bottom: BoundaryCondition::HomogeneousNeumann,
            top: BoundaryCondition::HomogeneousNeumann,
        };
        let p = params();
        let phi = Field::from_fn(&mesh, FieldBc::all_neumann(), |_, y| {
            (0.3 + y).clamp(0.3, 1.0)
        });
        let mut c = Field::constant(&mesh, 0.5, bc);
        for _ in 0..50 {
            c = solute_step(&mesh, &phi, &phi, &c, &p, 1e-3, 0.0, 1e-13).unwrap();
            assert!(c.min() >= 0.25 - 1e-10 && c.max() <= 0.5 + 1e-10);
        }
    }
}
