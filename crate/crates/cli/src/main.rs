use acre::config::{
    self, ApproachLabel, ConfigError, ScenarioConfig, ScenarioKind, Stabilization,
};
use acre::report;
use acre::runner::{self, RunError};
use acre_core::coupling::dt_guidance;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "acre",
    version,
    about = "Finite-volume reactive-transport simulations with a conservative phase field"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named scenario preset with optional overrides.
    Scenario {
        /// circle | square | channel
        name: ScenarioKind,
        /// Phase-field solution approach: i | ii | iii.
        #[arg(long)]
        approach: Option<ApproachLabel>,
        /// Time step size.
        #[arg(long)]
        dt: Option<f64>,
        /// Stabilization parameter: a number or MG, MG/2, MG/4, MG/8.
        #[arg(long = "lscheme-l")]
        lscheme_l: Option<Stabilization>,
        /// Coupling stabilization parameter.
        #[arg(long)]
        lcoup: Option<f64>,
        /// Cells per axis (square grid).
        #[arg(long)]
        grid: Option<usize>,
        /// Nonlinear-iteration tolerance.
        #[arg(long = "tol-l")]
        tol_l: Option<f64>,
        /// Coupling-iteration tolerance.
        #[arg(long = "tol-coup")]
        tol_coup: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Field snapshot every K steps (0 disables).
        #[arg(long = "snapshot-every")]
        snapshot_every: Option<usize>,
    },
    /// Run a Cartesian sweep over time-step sizes and stabilization
    /// parameters, writing a summary CSV.
    Sweep {
        config: PathBuf,
        /// Comma-separated time-step sizes.
        #[arg(long = "dt-list", value_delimiter = ',', required = true)]
        dt_list: Vec<f64>,
        /// Comma-separated stabilization values (numbers or MG fractions).
        #[arg(long = "l-list", value_delimiter = ',', required = true)]
        l_list: Vec<Stabilization>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a config and print the solver guidance without running.
    Check { config: PathBuf },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run_and_report(cfg: &ScenarioConfig, out: Option<PathBuf>) -> Result<(), RunError> {
    let warnings = cfg.validate()?;
    print_warnings(&warnings);
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let outcome = runner::run_scenario(cfg, Some(&out_dir))?;
    let audit = &outcome.audit;
    println!("completed {} steps to t = {}", audit.steps, outcome.final_state.t);
    println!(
        "  mineral volume: {}",
        outcome.history.last().map_or(f64::NAN, |d| d.mineral_volume)
    );
    println!("  max conservation residual: {:e}", audit.max_residual);
    if cfg.solver.coupled {
        println!("  mean coupling iterations: {:.4}", audit.mean_coupling_iterations);
        println!(
            "  mean nonlinear iterations per coupling pass: {:?}",
            audit
                .mean_lscheme_per_coupling_index
                .iter()
                .map(|m| (m * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        );
    } else if let Some(newton) = audit.mean_newton_iterations {
        println!("  mean Newton iterations: {newton:.4}");
    } else {
        println!("  mean nonlinear iterations: {:.4}", audit.mean_lscheme_iterations);
    }
    println!("  diagnostics: {}", out_dir.join("diagnostics.csv").display());
    Ok(())
}

fn dispatch() -> Result<(), RunError> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let cfg = config::load_config(&config)?;
            run_and_report(&cfg, out)
        }
        Command::Scenario {
            name,
            approach,
            dt,
            lscheme_l,
            lcoup,
            grid,
            tol_l,
            tol_coup,
            out,
            snapshot_every,
        } => {
            if name == ScenarioKind::Custom {
                return Err(ConfigError::Invalid {
                    field: "scenario".into(),
                    problem: "`custom` needs a config file; use `acre run`".into(),
                }
                .into());
            }
            let mut cfg = ScenarioConfig::preset(name);
            if let Some(a) = approach {
                cfg.solver.approach = a;
            }
            if let Some(dt) = dt {
                cfg.solver.dt = dt;
            }
            if let Some(l) = lscheme_l {
                cfg.solver.stabilization = l;
            }
            if let Some(lcoup) = lcoup {
                cfg.solver.coupling_stabilization = lcoup;
            }
            if let Some(n) = grid {
                cfg.mesh.nx = n;
                cfg.mesh.ny = n;
            }
            if let Some(tol) = tol_l {
                cfg.solver.lscheme_tolerance = tol;
                cfg.solver.newton_tolerance = tol;
            }
            if let Some(tol) = tol_coup {
                cfg.solver.coupling_tolerance = tol;
            }
            if let Some(every) = snapshot_every {
                cfg.output.snapshot_every = every;
            }
            run_and_report(&cfg, out)
        }
        Command::Sweep { config, dt_list, l_list, out } => {
            let cfg = config::load_config(&config)?;
            let warnings = cfg.validate()?;
            print_warnings(&warnings);
            let (rows, all_converged) = runner::run_sweep(&cfg, &dt_list, &l_list)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            std::fs::create_dir_all(&out_dir).map_err(|source| RunError::OutputDir {
                path: out_dir.display().to_string(),
                source,
            })?;
            let path = out_dir.join("summary.csv");
            report::write_sweep(&rows, &path)?;
            println!("{}", report::SWEEP_HEADER);
            for row in &rows {
                println!(
                    "{},{},{},{},{},{},{}",
                    row.dt,
                    row.stabilization_label,
                    row.stabilization,
                    row.steps,
                    row.mean_lscheme_iters,
                    row.mean_coupling_iters,
                    row.converged
                );
            }
            println!("summary: {}", path.display());
            if !all_converged {
                return Err(RunError::Simulation(
                    acre_core::coupling::SimulationError::NonConvergence {
                        step: 0,
                        scheme: "sweep (one or more cells)",
                        max_iters: cfg.solver.max_lscheme_iters,
                        increment: f64::NAN,
                    },
                ));
            }
            Ok(())
        }
        Command::Check { config } => {
            let cfg = config::load_config(&config)?;
            let warnings = cfg.validate()?;
            println!("configuration is valid");
            println!("scenario: {}", cfg.scenario);
            println!(
                "mesh: {}x{} over {}x{} (cell size {}x{})",
                cfg.mesh.nx,
                cfg.mesh.ny,
                cfg.mesh.lx,
                cfg.mesh.ly,
                cfg.mesh.lx / cfg.mesh.nx as f64,
                cfg.mesh.ly / cfg.mesh.ny as f64
            );
            let params = cfg.model_params();
            let lhs = 4.0 * params.interface_diffusion;
            let rhs = params.interface_width * params.rate_constant / params.mineral_molar_density;
            if lhs <= rhs {
                println!("gamma constraint: satisfied ({lhs} <= {rhs})");
            } else {
                println!("gamma constraint: violated ({lhs} > {rhs})");
            }
            let bound = cfg.stabilization_bound()?;
            println!("nonlinearity bound (default stabilization): {bound}");
            println!(
                "resolved stabilization {} = {}",
                cfg.solver.stabilization.label(),
                cfg.solver.stabilization.resolve(bound)
            );
            print_warnings(&warnings);
            println!();
            print!("{}", dt_guidance(&params, bound, Some(cfg.solver.dt)));
            Ok(())
        }
    }
}
