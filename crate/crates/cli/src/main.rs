//! Command-line surface: simulate models, run filters, compute stability
//! series, print diagnostics, and reproduce the full verification table.
//!
//! Exit codes: 0 success, 1 configuration/validation error (the message
//! names the offending field), 2 runtime failure (degenerate run, failed
//! verification). Human-readable summaries go to stdout, diagnostics to
//! stderr, machine-readable data only to files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use filterlab::filter::{likelihood_ratio, run_filter};
use filterlab::harness::{
    run_experiment, worker_count, write_trajectory_csv, ExperimentConfig, RunStatus,
};
use filterlab::models::{simulate_path, ObservationChannel, StochasticMatrix};
use filterlab::reproduce::{format_table, reproduce, validate_canned};
use filterlab::series::StabilityProblem;
use filterlab::stability::{check_conditions, mixing_constants, solve_g};
use filterlab::Error;

/// Flag precedence: command line > config file > built-in defaults.
#[derive(Parser)]
#[command(
    name = "filterlab",
    version,
    about = "Nonlinear filter stability laboratory",
    after_help = "Flag precedence: command line > config file > built-in defaults.",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for trial-parallel runs (also FILTERLAB_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Chattier diagnostics on stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the horizon.
    #[arg(long)]
    nmax: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(nmax) = self.nmax {
            cfg.n_max = nmax;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one signal/observation path and write it as CSV.
    Simulate(ConfigArgs),
    /// Run the true- and wrong-prior filters on one simulated path and
    /// export both trajectories.
    Filter(ConfigArgs),
    /// Run the configured experiment: all requested metric series plus the
    /// run manifest.
    Stability(ConfigArgs),
    /// Print the mixing constants of a row-stochastic kernel matrix.
    Mixing {
        /// Rows separated by ';', entries by ',' — e.g. "0.7,0.3;0.3,0.7".
        #[arg(long)]
        matrix: String,
    },
    /// Report the checkable stability hypotheses for a configured model,
    /// prior pair and function g.
    Conditions(ConfigArgs),
    /// Solve f = Γ g on a finite observation alphabet (least squares).
    SolveG {
        /// Channel matrix γ(state, letter), rows ';', entries ','.
        #[arg(long)]
        gamma: String,
        /// Values of f per state, comma-separated.
        #[arg(long, value_delimiter = ',')]
        f: Vec<f64>,
        /// Letter values (defaults to 0, 1, 2, ...).
        #[arg(long, value_delimiter = ',')]
        letters: Option<Vec<f64>>,
    },
    /// Run every canned experiment and print the verification table.
    Reproduce {
        /// Output root for the experiment directories.
        #[arg(long, default_value = "runs/reproduce")]
        out: PathBuf,
        /// Validate the canned configs without computing.
        #[arg(long)]
        dry_run: bool,
        /// Skip the byte-identity second pass.
        #[arg(long)]
        skip_second_pass: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ConfigInvalid { .. }
                | Error::BadStochasticMatrix(_)
                | Error::Io(_)
                | Error::Json(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode, Error> {
    let workers = worker_count(cli.workers);
    match &cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let (model, _) = cfg.build()?;
            let path = simulate_path(&model, cfg.n_max, cfg.seed)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let out = cfg.out_dir.join("path.csv");
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["step", "state", "observation"])?;
            for (k, &x) in path.states.iter().enumerate() {
                let y = if k == 0 {
                    String::new()
                } else {
                    format!("{}", path.observations[k - 1])
                };
                w.write_record([k.to_string(), format!("{x}"), y])?;
            }
            w.flush()?;
            println!(
                "simulated {} steps of `{}` (seed {}) -> {}",
                cfg.n_max,
                cfg.name,
                cfg.seed,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Filter(args) => {
            let cfg = args.load()?;
            let (model, wrong) = cfg.build()?;
            let prob = StabilityProblem::new(&model, &wrong, cfg.grid.as_ref())?;
            let path = simulate_path(&model, cfg.n_max, cfg.seed)?;
            let traj_true =
                run_filter(prob.filter_model(), prob.init_true(), &path.observations)?;
            let traj_wrong =
                run_filter(prob.filter_model(), prob.init_wrong(), &path.observations)?;
            let rho = likelihood_ratio(&traj_true, &traj_wrong)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let p_true = cfg.out_dir.join("trajectory_true.csv");
            let p_wrong = cfg.out_dir.join("trajectory_wrong.csv");
            write_trajectory_csv(&p_true, &traj_true, Some(&rho))?;
            write_trajectory_csv(&p_wrong, &traj_wrong, Some(&rho))?;
            println!(
                "filtered {} steps of `{}`; trajectories in {} and {}",
                cfg.n_max,
                cfg.name,
                p_true.display(),
                p_wrong.display()
            );
            if cli.verbose {
                eprintln!(
                    "log-likelihood true prior: {:.6}, wrong prior: {:.6}, final log rho: {:.6}",
                    traj_true.log_likelihood(),
                    traj_wrong.log_likelihood(),
                    rho.log_values().last().copied().unwrap_or(0.0)
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stability(args) => {
            let cfg = args.load()?;
            let manifest = run_experiment(&cfg, workers)?;
            match &manifest.status {
                RunStatus::Completed => {
                    println!(
                        "run `{}` completed: {} metric file(s) in {} ({} ms, {} of {} trials failed)",
                        cfg.name,
                        manifest.outputs.len(),
                        cfg.out_dir.display(),
                        manifest.wall_ms,
                        manifest.failed_trials,
                        manifest.total_trials
                    );
                    Ok(ExitCode::SUCCESS)
                }
                RunStatus::Rejected { witness } => {
                    eprintln!("run `{}` REJECTED: {witness}", cfg.name);
                    Ok(ExitCode::from(2))
                }
                RunStatus::Failed { reason } => {
                    eprintln!("run `{}` FAILED: {reason}", cfg.name);
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Mixing { matrix } => {
            let rows = parse_matrix(matrix)?;
            let kernel = StochasticMatrix::new(rows)?;
            let r = mixing_constants(&kernel);
            let circ = r
                .lambda_circ
                .map_or("n/a (no stationary law)".to_string(), |v| format!("{v}"));
            let rate_circ = r
                .rate_circ
                .map_or("n/a".to_string(), |v| format!("{v:.6}"));
            println!(
                "lambda_* = {}  lambda^* = {}  lambda_o = {circ}",
                r.lambda_star, r.lambda_sup
            );
            println!("rate_* = {:.6}  rate_o = {rate_circ}", r.rate_star);
            Ok(ExitCode::SUCCESS)
        }
        Command::Conditions(args) => {
            let cfg = args.load()?;
            let g = cfg.g.clone().ok_or_else(|| Error::ConfigInvalid {
                field: "g".into(),
                reason: "the conditions report needs a function g".into(),
            })?;
            let (model, wrong) = cfg.build()?;
            let prob = StabilityProblem::new(&model, &wrong, cfg.grid.as_ref())?;
            let report = check_conditions(&prob, &g, cfg.n_max.min(64), 2.0)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let out = cfg.out_dir.join("condition_report.json");
            std::fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
            println!(
                "g bounded: {} (bound {}{})",
                report.g_bounded,
                report.g_bound,
                if report.g_bound_exact { "" } else { ", estimate only" }
            );
            println!(
                "density ratio bounded: {} (sup {}{})",
                report.ratio_bounded,
                report.ratio_sup,
                if report.ratio_sup_exact { "" } else { ", estimate only" }
            );
            if let Some((p, v)) = report.ratio_p_norm {
                println!("E-bar (dnu/dnubar)^{p} = {v}");
            }
            match &report.g_ui_moment {
                Some(ui) => println!(
                    "sup_n E-bar |g(Y_n)|^{} over n <= {}: {}{}",
                    ui.q,
                    ui.horizon,
                    ui.sup_moment,
                    if ui.exact { "" } else { " (estimate only)" }
                ),
                None => println!(
                    "moment surrogate unavailable: {}",
                    report.g_ui_note.as_deref().unwrap_or("unknown")
                ),
            }
            println!("report written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveG { gamma, f, letters } => {
            let rows = parse_matrix(gamma)?;
            let k = rows.first().map_or(0, Vec::len);
            let letters = letters
                .clone()
                .unwrap_or_else(|| (0..k).map(|i| i as f64).collect());
            let channel = ObservationChannel::FiniteAlphabet {
                letters,
                gamma: rows.clone(),
            };
            let states: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
            if f.len() != states.len() {
                return Err(Error::ConfigInvalid {
                    field: "f".into(),
                    reason: format!("{} values for {} states", f.len(), states.len()),
                });
            }
            let fv = f.clone();
            let result = solve_g(&channel, &states, move |x| fv[x as usize])?;
            let gs = result
                .g_values
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(", ");
            println!("g = ({gs})");
            println!(
                "residual = {} ({})",
                result.residual,
                if result.has_bounded_solution() {
                    "bounded solution"
                } else {
                    "no bounded solution at this tolerance"
                }
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Reproduce { out, dry_run, skip_second_pass } => {
            if *dry_run {
                let names = validate_canned(out)?;
                println!("all canned configs valid: {}", names.join(", "));
                return Ok(ExitCode::SUCCESS);
            }
            let report = reproduce(out, workers, !skip_second_pass)?;
            print!("{}", format_table(&report));
            if report.all_passed {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>, Error> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| Error::ConfigInvalid {
                        field: "matrix".into(),
                        reason: format!("`{v}` is not a number"),
                    })
                })
                .collect()
        })
        .collect()
}
