//! Command-line front end: `run` an experiment from a TOML config,
//! `validate` the generated topology/weights/problem, `sweep` hyperparameter
//! grids on the static problem, and `replay` a run against a serialized
//! instance. On failure a machine-readable JSON error line is written to
//! stderr and the exit code is nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use desom::harness::runner::{initial_iterate, run_experiment_on_instance};
use desom::harness::sweep::run_sweep;
use desom::harness::{export, ExperimentConfig};
use desom::objective::{estimate_bounds, DynamicLeastSquares, DynamicObjective};
use desom::topology::{NetworkTopology, WeightMatrix};
use desom::{DesomError, Result};

#[derive(Parser)]
#[command(name = "desom", about = "Decentralized dynamic optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override every seed in the config with N, N+1, N+2.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated solver labels to keep (e.g. "esom-0,extra").
    #[arg(long, value_delimiter = ',')]
    solvers: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write the output bundle.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for metrics.csv, trace.csv, metadata.json,
        /// instance.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check topology, weight matrix, and problem conditioning, then exit.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Grid-sweep solver hyperparameters on the static problem.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Truncation levels to sweep for the series solver.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2])]
        k: Vec<usize>,
        /// Where to write the sweep CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run solvers against a previously serialized instance.
    Replay {
        #[command(flatten)]
        common: CommonArgs,
        /// instance.json from an earlier run.
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "out-replay")]
        out: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds.graph = seed;
        config.seeds.problem = seed + 1;
        config.seeds.init = seed + 2;
    }
    if !common.solvers.is_empty() {
        config.filter_solvers(&common.solvers)?;
    }
    config.validate()?;
    Ok(config)
}

fn build_instance(config: &ExperimentConfig) -> Result<DynamicLeastSquares> {
    let pc = &config.problem;
    DynamicLeastSquares::make_with_noise(
        pc.n,
        pc.p,
        pc.horizon + 1,
        pc.change_period,
        pc.trajectory_scale,
        config.seeds.problem,
        pc.noise_std,
    )
}

fn cmd_run(common: &CommonArgs, out: &PathBuf) -> Result<()> {
    let config = load_config(common)?;
    let instance = build_instance(&config)?;
    let result = run_experiment_on_instance(&config, &instance)?;
    export::write_outputs(&result, &instance, out)?;
    for traj in &result.trajectories {
        let status = match traj.diverged_at {
            Some(t) => format!("diverged at t={t}"),
            None => format!("{} steps", traj.rows.len()),
        };
        let last = traj.rows.last().map_or(f64::NAN, |r| r.e_t);
        println!("{:<10} {status}, final e_t = {last:.3e}", traj.label);
    }
    println!("outputs written to {}", out.display());
    Ok(())
}

fn cmd_validate(common: &CommonArgs) -> Result<()> {
    let config = load_config(common)?;
    let instance = build_instance(&config)?;
    let g = NetworkTopology::generate_random(instance.n(), config.problem.r_c, config.seeds.graph)?;
    let w = WeightMatrix::metropolis(&g);
    let report = w.validate(&g)?;
    println!("graph: n={}, edges={}, connected={}", g.n(), g.edges().len(), g.is_connected());
    println!("{report}");
    println!("gamma: {:.6e}", w.gamma()?);
    let bounds = estimate_bounds(&instance, &[0], 2, config.seeds.problem)?;
    println!(
        "curvature: m={:.6e}, M={:.6e}, L={:.6e}",
        bounds.m, bounds.big_m, bounds.l
    );
    if !report.pass() {
        return Err(DesomError::DegenerateWeights("validation failed".into()));
    }
    println!("validation: pass");
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, ks: &[usize], out: Option<&PathBuf>) -> Result<()> {
    let config = load_config(common)?;
    let instance = build_instance(&config)?;
    let g = NetworkTopology::generate_random(instance.n(), config.problem.r_c, config.seeds.graph)?;
    let w = WeightMatrix::metropolis(&g);
    let target0 = instance.target(0);
    let x0: DVector<f64> =
        initial_iterate(&target0, instance.n(), config.problem.init_distance, config.seeds.init);
    let rows = run_sweep(&instance, &g, &w, ks, &x0, 0)?;
    let mut text = String::from("solver,k,alpha,epsilon,step,final_primal_err\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for row in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.solver,
            row.k.map_or(String::new(), |k| k.to_string()),
            opt(row.alpha),
            opt(row.epsilon),
            opt(row.step),
            row.final_primal_err
        ));
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_replay(common: &CommonArgs, instance_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let config = load_config(common)?;
    let instance = DynamicLeastSquares::from_json(&std::fs::read_to_string(instance_path)?)?;
    let result = run_experiment_on_instance(&config, &instance)?;
    export::write_outputs(&result, &instance, out)?;
    println!("replayed {} solvers, outputs in {}", result.trajectories.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, out } => cmd_run(common, out),
        Command::Validate { common } => cmd_validate(common),
        Command::Sweep { common, k, out } => cmd_sweep(common, k, out.as_ref()),
        Command::Replay { common, instance, out } => cmd_replay(common, instance, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "kind": error_kind(&e) })
            );
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &DesomError) -> &'static str {
    match e {
        DesomError::InvalidParameter(_) => "invalid_parameter",
        DesomError::RetryLimitExceeded { .. } => "retry_limit_exceeded",
        DesomError::DimensionMismatch { .. } => "dimension_mismatch",
        DesomError::DegenerateWeights(_) => "degenerate_weights",
        DesomError::NotPositiveDefinite(_) => "not_positive_definite",
        DesomError::DenseSizeLimit { .. } => "dense_size_limit",
        DesomError::NonConvergence(_) => "non_convergence",
        DesomError::LostStrongConvexity(_) => "lost_strong_convexity",
        DesomError::NotContracting(_) => "not_contracting",
        DesomError::UnknownSolver(_) => "unknown_solver",
        DesomError::Config(_) => "config",
        DesomError::Parse(_) => "parse",
        DesomError::Io(_) => "io",
    }
}
