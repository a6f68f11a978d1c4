//! Run configuration, problem setup, output and the command-line driver.

pub mod config;
pub mod output;
pub mod problem;

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use log::{error, info};

pub use config::{OutputFormat, ProblemKind, RunConfig};
pub use problem::{build_problem, init_sedov, Problem, SedovDeposit};

use crate::diagnostics::{conservation_report, shock_front_radius, ConservationReport};
use crate::error::{HydroError, Result};
use crate::integrator;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: usize,
    pub rejections: usize,
    pub initial: ConservationReport,
    pub last: ConservationReport,
    pub shock_radius: Option<f64>,
    pub wall_seconds: f64,
    pub history: Option<PathBuf>,
}

/// Shock radius of the current state, if the problem has a ray fan.
pub fn current_shock_radius(problem: &Problem) -> Option<f64> {
    problem
        .fan
        .as_ref()
        .and_then(|fan| shock_front_radius(&problem.disc, &problem.state, fan).radius())
}

/// Advance `problem` to `cfg.t_final`, writing history rows every
/// `cfg.output_every` steps (and at both ends) into `out_dir` if given.
pub fn simulate(problem: &mut Problem, cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    let start = Instant::now();
    let dim = problem.disc.dim();
    let csv = cfg.formats.contains(&OutputFormat::Csv);
    let vtk = cfg.formats.contains(&OutputFormat::Vtk);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let history_path = out_dir.filter(|_| csv).map(|d| d.join("history.csv"));
    let mut history = match &history_path {
        Some(p) => Some(output::HistoryWriter::new(BufWriter::new(File::create(p)?), dim)?),
        None => None,
    };
    let initial = conservation_report(&problem.disc, &problem.state)?;
    let mut emit = |problem: &Problem, rep: &ConservationReport| -> Result<()> {
        if let Some(h) = history.as_mut() {
            h.write_row(&problem.state, rep, current_shock_radius(problem))?;
        }
        if let (true, Some(dir)) = (vtk, out_dir) {
            let path = dir.join(format!("state_{:06}.vtk", problem.state.step_count));
            output::write_vtk(&path, &problem.disc, &problem.state)?;
        }
        Ok(())
    };
    emit(problem, &initial)?;

    let mut stepper = integrator::Stepper::new(&problem.disc, cfg.step_controls())?;
    let mut rejections = 0;
    let mut last = initial.clone();
    let mut last_written = 0;
    while problem.state.t < cfg.t_final {
        let info = stepper.step(&problem.disc, &mut problem.state)?;
        rejections += info.rejections;
        let n = problem.state.step_count;
        let done = problem.state.t >= cfg.t_final;
        if n % cfg.output_every == 0 || done {
            last = conservation_report(&problem.disc, &problem.state)?;
            info!(
                "step {n} t = {:.6e} dt = {:.3e} E = {:.12e}",
                problem.state.t, info.dt, last.total_energy
            );
            emit(problem, &last)?;
            last_written = n;
        }
    }
    if last_written != problem.state.step_count {
        last = conservation_report(&problem.disc, &problem.state)?;
    }
    if let Some(h) = history {
        h.finish()?;
    }
    Ok(RunSummary {
        steps: problem.state.step_count,
        rejections,
        initial,
        last,
        shock_radius: current_shock_radius(problem),
        wall_seconds: start.elapsed().as_secs_f64(),
        history: history_path,
    })
}

/// Command-line arguments of the `hydro` binary.
#[derive(Parser, Debug)]
#[command(name = "hydro", version, about = "High-order Lagrangian point-blast solver")]
pub struct Cli {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    /// Polynomial order k of the kinematic space.
    #[arg(long)]
    pub order: Option<usize>,
    /// Mesh resolution.
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub tfinal: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Validate the configuration and print it without running.
    #[arg(long, value_name = "MODE", num_args = 0..=1, default_missing_value = "only")]
    pub validate_config: Option<String>,
}

impl Cli {
    /// Merge defaults, the configuration file and command-line flags.
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HydroError::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        if let Some(p) = &self.problem {
            cfg.set("problem", p)?;
        }
        if let Some(k) = self.order {
            cfg.order = k;
        }
        if let Some(r) = self.res {
            cfg.res = r;
        }
        if let Some(t) = self.tfinal {
            cfg.t_final = t;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| HydroError::Config(format!("override '{o}' is not KEY=VALUE")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HYDRO_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| HydroError::Config(format!("HYDRO_THREADS = '{v}' is not a thread count")))?;
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Entry point of the `hydro` binary; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let setup = init_threads().and_then(|_| cli.to_config());
    let cfg = match setup {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(mode) = &cli.validate_config {
        if mode != "only" {
            error!("configuration error: unknown --validate-config mode '{mode}'");
            return EXIT_CONFIG;
        }
        return match problem::build_mesh(&cfg).and_then(|m| m.check_valid(&m.node_coords)) {
            Ok(()) => {
                print!("{}", cfg.serialize());
                EXIT_OK
            }
            Err(e) => {
                error!("{e}");
                EXIT_CONFIG
            }
        };
    }
    let mut problem = match build_problem(&cfg) {
        Ok(p) => p,
        Err(e) => {
            error!("{e}");
            return EXIT_CONFIG;
        }
    };
    info!(
        "{}: k = {}, {} elements, {} kinematic dofs, {} thermodynamic dofs",
        cfg.problem.name(),
        cfg.order,
        problem.disc.mesh.elem_count(),
        problem.disc.kin.vector_len(),
        problem.disc.thermo.n_dofs
    );
    let written = std::fs::create_dir_all(&cfg.output_dir)
        .map_err(HydroError::from)
        .and_then(|_| std::fs::write(cfg.output_dir.join("config.txt"), cfg.serialize()).map_err(HydroError::from));
    if let Err(e) = written {
        error!("cannot write to {}: {e}", cfg.output_dir.display());
        return EXIT_RUNTIME;
    }
    match simulate(&mut problem, &cfg, Some(&cfg.output_dir)) {
        Ok(s) => {
            let drift = (s.last.total_energy - s.initial.total_energy).abs() / s.initial.total_energy.abs();
            println!(
                "steps {} rejections {} t {:.6e} energy drift {:.3e} shock radius {} wall {:.2}s",
                s.steps,
                s.rejections,
                problem.state.t,
                drift,
                s.shock_radius.map_or("n/a".into(), |r| format!("{r:.4}")),
                s.wall_seconds
            );
            EXIT_OK
        }
        Err(e) => {
            error!("run failed at t = {:.6e}: {e}", problem.state.t);
            EXIT_RUNTIME
        }
    }
}
