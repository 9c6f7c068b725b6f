//! Initial states for the scenario presets.

use crate::config::{ConfigError, InitialKind, ScenarioConfig};
use acre_core::coupling::SimState;
use acre_core::mesh::{Field, Mesh};

/// Builds the mesh described by the config.
pub fn build_mesh(cfg: &ScenarioConfig) -> Result<Mesh, ConfigError> {
    Mesh::new(cfg.mesh.nx, cfg.mesh.ny, (cfg.mesh.lx, cfg.mesh.ly)).map_err(|e| {
        ConfigError::Invalid { field: "mesh".into(), problem: e.to_string() }
    })
}

/// Diffuse interface profile across the signed distance `d` (positive on
/// the mineral side): 1 in the fluid, 0 in the mineral, transition of
/// width proportional to `interface_width`.
fn diffuse_profile(signed_distance: f64, interface_width: f64) -> f64 {
    1.0 / (1.0 + (4.0 * signed_distance / interface_width).exp())
}

/// Initial phase field, temperature and concentration for the configured
/// scenario geometry.
pub fn initial_condition(cfg: &ScenarioConfig, mesh: &Mesh) -> Result<SimState, ConfigError> {
    cfg.validate()?;
    let lam = cfg.params.interface_width;
    let phi_bc = cfg.bc.phi.to_field_bc();
    let phi = match cfg.initial.kind {
        InitialKind::Circle => {
            let [cx, cy] = cfg.initial.circle_center;
            let radius = cfg.initial.circle_radius;
            Field::from_fn(mesh, phi_bc, |x, y| {
                let dist = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                diffuse_profile(radius - dist, lam)
            })
        }
        InitialKind::Square => {
            // Sharp square: phi = 0 inside, 1 outside.
            let half = 0.5 * cfg.initial.square_side;
            let (cx, cy) = (0.5 * cfg.mesh.lx, 0.5 * cfg.mesh.ly);
            Field::from_fn(mesh, phi_bc, |x, y| {
                if (x - cx).abs() < half && (y - cy).abs() < half {
                    0.0
                } else {
                    1.0
                }
            })
        }
        InitialKind::Layer => {
            let y0 = cfg.initial.layer_height;
            Field::from_fn(mesh, phi_bc, |_, y| diffuse_profile(y0 - y, lam))
        }
        InitialKind::Uniform => Field::constant(mesh, 1.0, phi_bc),
    };
    let temperature =
        Field::constant(mesh, cfg.initial.temperature, cfg.bc.temperature.to_field_bc());
    let concentration =
        Field::constant(mesh, cfg.initial.concentration, cfg.bc.concentration.to_field_bc());
    Ok(SimState { t: 0.0, step: 0, phi, concentration, temperature })
}
