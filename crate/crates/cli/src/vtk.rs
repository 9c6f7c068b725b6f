//! Legacy-VTK ASCII snapshots (structured points, cell-center samples as
//! point data).
//!
//! Four scalar arrays are written: `phi`, `c`, `T` and `phi_c` (the solute
//! content of the fluid, the quantity usually visualized). Values carry 17
//! significant digits so a reload is bit-exact.

use acre_core::coupling::SimState;
use acre_core::mesh::Mesh;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VtkError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed snapshot {path}: {problem}")]
    Malformed { path: String, problem: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> VtkError + '_ {
    move |source| VtkError::Io { path: path.display().to_string(), source }
}

/// Writes the state as a legacy-VTK ASCII structured-points file.
pub fn write_fields(state: &SimState, mesh: &Mesh, path: &Path) -> Result<(), VtkError> {
    let (hx, hy) = mesh.spacing();
    let n = mesh.n_cells();
    let mut text = String::new();
    text.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(text, "phase-field snapshot step={} t={:.17e}", state.step, state.t);
    text.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(text, "DIMENSIONS {} {} 1", mesh.nx(), mesh.ny());
    let _ = writeln!(text, "ORIGIN {:.17e} {:.17e} 0", 0.5 * hx, 0.5 * hy);
    let _ = writeln!(text, "SPACING {hx:.17e} {hy:.17e} 1");
    let _ = writeln!(text, "POINT_DATA {n}");

    let mut array = |name: &str, values: &dyn Fn(usize) -> f64| {
        let _ = writeln!(text, "SCALARS {name} double 1");
        text.push_str("LOOKUP_TABLE default\n");
        for k in 0..n {
            let _ = writeln!(text, "{:.17e}", values(k));
        }
    };
    array("phi", &|k| state.phi[k]);
    array("c", &|k| state.concentration[k]);
    array("T", &|k| state.temperature[k]);
    array("phi_c", &|k| state.phi[k] * state.concentration[k]);

    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut writer = std::io::BufWriter::new(file);
    writer.write_all(text.as_bytes()).map_err(io_err(path))?;
    writer.flush().map_err(io_err(path))
}

/// Parsed snapshot: dimensions and the named point-data arrays.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub dimensions: (usize, usize),
    pub arrays: BTreeMap<String, Vec<f64>>,
}

/// Reads a snapshot previously written by [`write_fields`].
pub fn read_fields(path: &Path) -> Result<Snapshot, VtkError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |problem: &str| VtkError::Malformed {
        path: path.display().to_string(),
        problem: problem.to_string(),
    };
    let mut dimensions = None;
    let mut arrays = BTreeMap::new();
    let mut current: Option<(String, Vec<f64>)> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("DIMENSIONS ") {
            let dims: Vec<usize> =
                rest.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            if dims.len() != 3 {
                return Err(malformed("DIMENSIONS needs three entries"));
            }
            dimensions = Some((dims[0], dims[1]));
        } else if let Some(rest) = line.strip_prefix("SCALARS ") {
            if let Some((name, values)) = current.take() {
                arrays.insert(name, values);
            }
            let name = rest.split_whitespace().next().ok_or_else(|| malformed("SCALARS"))?;
            current = Some((name.to_string(), Vec::new()));
        } else if line.starts_with("LOOKUP_TABLE") {
            continue;
        } else if let Some((_, values)) = current.as_mut() {
            if let Ok(v) = line.parse::<f64>() {
                values.push(v);
            }
        }
    }
    if let Some((name, values)) = current.take() {
        arrays.insert(name, values);
    }
    let dimensions = dimensions.ok_or_else(|| malformed("missing DIMENSIONS"))?;
    Ok(Snapshot { dimensions, arrays })
}

#[cfg(test)]
mod tests {
    use super::*;
    use acre_core::mesh::{Field, FieldBc};

    fn tiny_state() -> (Mesh, SimState) {
        let mesh = Mesh::unit_square(2, 2).unwrap();
        let bc = FieldBc::all_neumann();
        let state = SimState {
            t: 0.125,
            step: 3,
            phi: Field::new(&mesh, vec![0.1, 0.25, 1.0 / 3.0, 0.99], bc).unwrap(),
            concentration: Field::new(&mesh, vec![0.5, 0.25, 0.4999999, 0.3], bc).unwrap(),
            temperature: Field::new(&mesh, vec![1.0, 0.9, 0.95, 1.0], bc).unwrap(),
        };
        (mesh, state)
    }

    #[test]
    fn snapshot_has_header_and_rows() {
        let (mesh, state) = tiny_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.vtk");
        write_fields(&state, &mesh, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("STRUCTURED_POINTS"));
        assert!(text.contains("DIMENSIONS 2 2 1"));
        for name in ["phi", "c", "T", "phi_c"] {
            assert!(text.contains(&format!("SCALARS {name} double 1")), "{name} missing");
        }
        // 4 data rows per array.
        let rows = text
            .lines()
            .filter(|l| l.ends_with("e0") || l.contains("e-") || l.contains("e1"))
            .count();
        assert!(rows >= 16, "expected at least 16 data rows, found {rows}");
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (mesh, state) = tiny_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.vtk");
        write_fields(&state, &mesh, &path).unwrap();
        let snapshot = read_fields(&path).unwrap();
        assert_eq!(snapshot.dimensions, (2, 2));
        assert_eq!(snapshot.arrays["phi"], state.phi.values());
        assert_eq!(snapshot.arrays["c"], state.concentration.values());
        assert_eq!(snapshot.arrays["T"], state.temperature.values());
        let phi_c: Vec<f64> =
            (0..4).map(|k| state.phi[k] * state.concentration[k]).collect();
        assert_eq!(snapshot.arrays["phi_c"], phi_c);
    }
}
