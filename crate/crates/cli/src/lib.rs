//! Configuration, scenario presets, output writers and run orchestration
//! for the reactive-transport phase-field engine.

pub mod config;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod vtk;

pub use config::{load_config, parse_config, write_config, ScenarioConfig, ScenarioKind};
pub use runner::{run_scenario, run_sweep, RunError, RunOutcome};
