use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccplan::execution::validate;
use ccplan::experiment::{self, ExperimentOptions, ExperimentReport};
use ccplan::planner::{PlanResult, PlanStatus};
use ccplan::report;
use ccplan::scenario::{load_scenario, Overrides, Scenario};
use ccplan::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_INTERNAL: u8 = 1;

/// Chance-constrained motion planning for planar arms.
#[derive(Parser)]
#[command(name = "ccplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a scenario and write trajectory.csv, risks.csv and trajectory.svg.
    Plan {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run noisy executions of a trajectory file against a scenario.
    Validate {
        scenario: PathBuf,
        /// Trajectory CSV as written by `plan`.
        #[arg(long)]
        trajectory: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Plan with both planners, validate both and write results.csv.
    Experiment {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        timing: Timing,
    },
    /// Run `experiment` on every *.toml in a directory and aggregate.
    Sweep {
        directory: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        timing: Timing,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    output: PathBuf,
    /// Base seed for validation runs.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of validation runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Quadrature nodes per dimension inside the planning loop.
    #[arg(long)]
    nodes_per_dim: Option<usize>,
    /// Outer planning iteration limit.
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args)]
struct Timing {
    /// Record wall-clock planning time (results are then not byte-reproducible).
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            runs: self.runs,
            nodes_per_dim: self.nodes_per_dim,
            max_iterations: self.max_iterations,
        }
    }

    fn load(&self, path: &Path) -> Result<Scenario, Error> {
        load_scenario(path)?.with_overrides(&self.overrides())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Validation { .. } | Error::InvalidArgument(_) => EXIT_INPUT,
        Error::Io { .. } => EXIT_IO,
        Error::NumericalFailure { .. } | Error::InvalidState(_) => EXIT_INTERNAL,
    }
}

fn describe_plan(plan: &PlanResult) {
    println!("status: {}", plan.status.as_str());
    if let Some(reason) = &plan.reason {
        println!("reason: {reason}");
    }
    println!("iterations: {}", plan.iterations_used);
    if !plan.risks.is_empty() {
        let total: f64 = plan.risks.iter().sum();
        let worst = plan.risks.iter().cloned().fold(0.0, f64::max);
        println!(
            "risk sum: {}  max waypoint risk: {}",
            report::num(total),
            report::num(worst)
        );
    }
}

fn describe_experiment(r: &ExperimentReport) {
    for row in r.rows() {
        println!(
            "{:<14} {:<16} continuous {:>5}  discrete {:>5}  path {:>7}",
            row.variant,
            row.status,
            report::opt_num(row.continuous_rate),
            report::opt_num(row.discrete_rate),
            row.path_length_rad
                .map(|l| format!("{l:.3}"))
                .unwrap_or_else(|| "NA".into()),
        );
    }
    if let Some(d) = r.risk_reduction() {
        println!("risk reduction: {}", report::num(d));
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Plan { scenario, common } => {
            let s = common.load(&scenario)?;
            let plan = experiment::plan_scenario(&s)?;
            experiment::write_plan(&common.output, &s, &plan, None)?;
            describe_plan(&plan);
            Ok(if plan.status == PlanStatus::Infeasible {
                EXIT_INFEASIBLE
            } else {
                0
            })
        }
        Command::Validate {
            scenario,
            trajectory,
            common,
        } => {
            let s = common.load(&scenario)?;
            let text = std::fs::read_to_string(&trajectory).map_err(|source| Error::Io {
                path: trajectory.display().to_string(),
                source,
            })?;
            let traj = report::parse_trajectory_csv(&text, &trajectory.display().to_string())?;
            let env = s.environment()?;
            if traj.n_joints() != env.n_joints() {
                return Err(Error::Validation {
                    field: "trajectory".into(),
                    message: format!(
                        "has {} joints, scenario arm has {}",
                        traj.n_joints(),
                        env.n_joints()
                    ),
                });
            }
            let stats = validate(
                &traj,
                &env,
                &s.noise,
                &s.planner.controller,
                &s.validation_config(),
            )?;
            experiment::create_dir(&common.output)?;
            let path = common.output.join("validation.csv");
            std::fs::write(&path, report::validation_csv(&stats)?).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            println!(
                "runs {}  continuous {} ({})  discrete {} ({})",
                stats.runs,
                report::num(stats.continuous_rate),
                if stats.satisfied_continuous {
                    "satisfied"
                } else {
                    "violated"
                },
                report::num(stats.discrete_rate),
                if stats.satisfied_discrete {
                    "satisfied"
                } else {
                    "violated"
                },
            );
            Ok(0)
        }
        Command::Experiment {
            scenario,
            common,
            timing,
        } => {
            let s = common.load(&scenario)?;
            let options = ExperimentOptions {
                record_wall_time: timing.timing,
            };
            let r = experiment::run_experiment(&s, &options)?;
            experiment::write_experiment(&common.output, &s, &r)?;
            describe_experiment(&r);
            Ok(if r.infeasible() { EXIT_INFEASIBLE } else { 0 })
        }
        Command::Sweep {
            directory,
            common,
            timing,
        } => {
            let suite = experiment::load_suite(&directory)?
                .into_iter()
                .map(|s| s.with_overrides(&common.overrides()))
                .collect::<Result<Vec<_>, _>>()?;
            if suite.is_empty() {
                return Err(Error::Validation {
                    field: "directory".into(),
                    message: format!("no scenario files in {}", directory.display()),
                });
            }
            let options = ExperimentOptions {
                record_wall_time: timing.timing,
            };
            let reports = experiment::run_suite(&suite, &options)?;
            experiment::write_suite(&common.output, &suite, &reports)?;
            for r in &reports {
                println!("== {}", r.scenario);
                describe_experiment(r);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
