//! `mlm`: batch driver for the background-state solver.
//!
//! Exit codes: 0 success, 1 input error, 2 dual solver did not converge,
//! 3 a verification check failed.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mlm_core::harness::{gradcheck, stability, GradcheckOptions};
use mlm_core::oracle::{brute_force_surface, compare};
use mlm_core::{extract_state, solve, DiscreteMeasure, DualState, Error, ExtendedProblem, MlmState};
use serde::Serialize;

mod config;

use config::{RawConfig, SolveConfig};

#[derive(Parser)]
#[command(name = "mlm", version, about = "Energy-minimising MLM background states via semi-discrete transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, then write surface.csv, cells.csv and report.json.
    Solve,
    /// Re-solve under shrinking perturbations of the target measure.
    Stability,
    /// Compare the analytic dual gradient with finite differences.
    Gradcheck,
    /// Compare the solver energy with a brute-force piecewise-constant surface.
    Oracle,
    /// Solve and write cells.svg only.
    Plot,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Target measure (CSV with z,theta,mass or JSON).
    #[arg(long, global = true)]
    nu: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Number of quadrature columns.
    #[arg(long, global = true)]
    ns: Option<usize>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Seed for perturbation directions and gradient-check samples.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated descending perturbation sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Perturbation mode: mass or position.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Oracle surface columns.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Oracle height mesh size.
    #[arg(long, global = true)]
    mesh_m: Option<usize>,
    /// Also write cells.svg when solving.
    #[arg(long, global = true)]
    svg: bool,
    /// Write the solver iteration trace to trace.csv.
    #[arg(long, global = true)]
    trace: bool,
    /// Export a state even when the extraction checks fail.
    #[arg(long, global = true)]
    force: bool,
}

impl Common {
    fn overrides(&self) -> RawConfig {
        RawConfig {
            nu: self.nu.clone(),
            out: self.out.clone(),
            tol: self.tol,
            ns: self.ns,
            max_iter: self.max_iter,
            seed: self.seed,
            deltas: self.deltas.clone(),
            mode: self.mode.clone(),
            k: self.k,
            mesh_m: self.mesh_m,
            svg: self.svg.then_some(true),
            trace: self.trace.then_some(true),
            ..Default::default()
        }
    }
}

/// A finished command that did not succeed.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    NotConverged(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::NotConverged(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
            Some(Error::NotConverged { .. }) => Failure::NotConverged(format!("{e:#}")),
            Some(Error::InvalidState(_)) => Failure::Verification(format!("{e:#}")),
            _ => Failure::Input(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MLM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Input(e) => eprintln!("error: {e:#}"),
                Failure::NotConverged(msg) => eprintln!("not converged: {msg}"),
                Failure::Verification(msg) => eprintln!("verification failed: {msg}"),
            }
            ExitCode::from(failure.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let file = match &cli.common.config {
        Some(path) => RawConfig::from_path(path)?,
        None => RawConfig::default(),
    };
    let (cfg, nu) = SolveConfig::resolve(file.merge(cli.common.overrides()))?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    match cli.command {
        Command::Solve => cmd_solve(&cfg, nu, cli.common.force, false),
        Command::Plot => cmd_solve(&cfg, nu, cli.common.force, true),
        Command::Stability => cmd_stability(&cfg, &nu),
        Command::Gradcheck => cmd_gradcheck(&cfg, nu),
        Command::Oracle => cmd_oracle(&cfg, nu, cli.common.force),
    }
}

fn problem(cfg: &SolveConfig, nu: DiscreteMeasure) -> Result<ExtendedProblem, Failure> {
    Ok(ExtendedProblem::new(cfg.build_cost()?, nu)?)
}

fn write_trace(cfg: &SolveConfig, dual: &DualState) -> Result<(), Failure> {
    if cfg.trace {
        let path = cfg.out.join("trace.csv");
        dual.write_trace(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    Ok(())
}

/// Solves and extracts the state. A non-converged run still exports a
/// flagged state before failing.
fn solved_state(cfg: &SolveConfig, problem: &ExtendedProblem, force: bool, plot: bool) -> Result<MlmState, Failure> {
    let opts = cfg.solve_options();
    let dual = solve(problem, &opts)?;
    write_trace(cfg, &dual)?;
    if !dual.converged {
        let state = extract_state(&dual, problem, true)?;
        export(cfg, &state, plot)?;
        return Err(Failure::NotConverged(format!(
            "{} iterations, residual {:.3e} > tol {:.1e}; flagged report written to {}",
            dual.iterations,
            dual.residual,
            cfg.tol,
            cfg.out.display()
        )));
    }
    log::info!("converged in {} iterations, residual {:.3e}", dual.iterations, dual.residual);
    Ok(extract_state(&dual, problem, force)?)
}

fn export(cfg: &SolveConfig, state: &MlmState, plot: bool) -> Result<(), Failure> {
    if plot {
        let path = cfg.out.join("cells.svg");
        fs::write(&path, state.svg()).with_context(|| format!("writing {}", path.display()))?;
    } else {
        state.export(&cfg.out, &cfg.echo(), &cfg.solve_options(), cfg.svg)?;
    }
    Ok(())
}

fn cmd_solve(cfg: &SolveConfig, nu: DiscreteMeasure, force: bool, plot: bool) -> Result<(), Failure> {
    let problem = problem(cfg, nu)?;
    let state = solved_state(cfg, &problem, force, plot)?;
    export(cfg, &state, plot)?;
    println!(
        "energy {:.12e}  dual gap {:.3e}  iterations {}  output {}",
        state.energy,
        (state.primal_energy - state.dual_value).abs(),
        state.iterations,
        cfg.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: serde_json::Value,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(cfg: &SolveConfig, name: &str, body: &T) -> Result<(), Failure> {
    let path = cfg.out.join(name);
    let mut text = serde_json::to_string_pretty(&Envelope { config: cfg.echo(), body }).context("serialising report")?;
    text.push('\n');
    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    std::io::stdout().write_all(text.as_bytes()).context("writing to stdout")?;
    Ok(())
}

fn cmd_stability(cfg: &SolveConfig, nu: &DiscreteMeasure) -> Result<(), Failure> {
    let cost = cfg.build_cost()?;
    let report = stability(&cost, nu, &cfg.deltas, cfg.mode, cfg.seed, &cfg.solve_options())?;
    let path = cfg.out.join("stability.csv");
    let mut table = String::from("delta,sup_norm,iterations\n");
    for row in &report.rows {
        table.push_str(&format!("{:.16e},{:.16e},{}\n", row.delta, row.sup_norm, row.iterations));
    }
    fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    write_json(cfg, "stability.json", &report)?;
    if !report.non_increasing {
        return Err(Failure::Verification("sup-norm deviations grow as delta shrinks".into()));
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &SolveConfig, nu: DiscreteMeasure) -> Result<(), Failure> {
    let problem = problem(cfg, nu)?;
    let opts = GradcheckOptions { n_s: cfg.ns, gradient_n_s: None, samples: cfg.samples, seed: cfg.seed, threshold: 1e-5 };
    let report = gradcheck(&problem, &opts)?;
    write_json(cfg, "gradcheck.json", &report)?;
    if !report.pass {
        return Err(Failure::Verification(format!(
            "max relative gradient error {:.3e} exceeds {:.1e}",
            report.max_rel_error, report.threshold
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    #[serde(flatten)]
    comparison: mlm_core::oracle::CompareReport,
    heights: Vec<f64>,
    candidates: usize,
    k: usize,
    mesh_m: usize,
}

fn cmd_oracle(cfg: &SolveConfig, nu: DiscreteMeasure, force: bool) -> Result<(), Failure> {
    let problem = problem(cfg, nu)?;
    // Size limits are checked before the solve so that oversize requests fail fast.
    let oracle = brute_force_surface(problem.cost(), problem.nu(), cfg.k, cfg.mesh_m)?;
    let opts = cfg.solve_options();
    let dual = solve(&problem, &opts)?;
    if !dual.converged {
        return Err(Error::NotConverged { iterations: dual.iterations, residual: dual.residual }.into());
    }
    let state = extract_state(&dual, &problem, force)?;
    let comparison = compare(state.energy, &oracle);
    let pass = comparison.pass;
    let report = OracleReport {
        comparison,
        heights: oracle.heights,
        candidates: oracle.candidates,
        k: oracle.columns,
        mesh_m: oracle.mesh_m,
    };
    write_json(cfg, "oracle.json", &report)?;
    if !pass {
        return Err(Failure::Verification(
            "solver energy is not a lower bound within the allowance of the oracle cost".into(),
        ));
    }
    Ok(())
}
