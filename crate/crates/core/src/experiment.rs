//! The experiment protocol: plan a scenario with the chance-constrained
//! planner and with the deterministic baseline, validate both on the same
//! noise seeds, and report.

use std::path::Path;
use std::time::Instant;

use crate::allocation::{risk_test, uniform_allocation};
use crate::error::{Error, Result};
use crate::execution::{validate, ValidationStats};
use crate::lqg::{apriori_distributions_with, GaussianBelief};
use crate::planner::{plan_chance_constrained, plan_deterministic, PlanResult, PlanStatus};
use crate::report::{self, Figure, ResultRow};
use crate::risk::waypoint_risks;
use crate::scenario::Scenario;
use crate::trajectory::NominalTrajectory;

pub const PCHEKOV: &str = "p-chekov";
pub const BASELINE: &str = "deterministic";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExperimentOptions {
    /// Record wall-clock planning time. Off by default because it makes
    /// results.csv differ between otherwise identical runs.
    pub record_wall_time: bool,
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub status: String,
    pub planning_time_s: Option<f64>,
    pub trajectory: Option<NominalTrajectory>,
    pub beliefs: Vec<GaussianBelief>,
    pub risks: Vec<f64>,
    pub validation: Option<ValidationStats>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub scenario: String,
    pub plan: PlanResult,
    pub pchekov: VariantOutcome,
    pub baseline: VariantOutcome,
}

impl ExperimentReport {
    pub fn infeasible(&self) -> bool {
        self.plan.status == PlanStatus::Infeasible
    }

    /// Baseline continuous collision rate minus the chance-constrained one.
    pub fn risk_reduction(&self) -> Option<f64> {
        let p = self.pchekov.validation.as_ref()?;
        let b = self.baseline.validation.as_ref()?;
        Some(b.continuous_rate - p.continuous_rate)
    }

    pub fn rows(&self) -> Vec<ResultRow> {
        let row = |variant: &str, v: &VariantOutcome, reduction: Option<f64>| ResultRow {
            scenario: self.scenario.clone(),
            variant: variant.to_string(),
            status: v.status.clone(),
            planning_time_s: v.planning_time_s,
            path_length_rad: v.trajectory.as_ref().map(|t| t.path_length()),
            discrete_rate: v.validation.as_ref().map(|s| s.discrete_rate),
            continuous_rate: v.validation.as_ref().map(|s| s.continuous_rate),
            satisfied_discrete: v.validation.as_ref().map(|s| s.satisfied_discrete),
            satisfied_continuous: v.validation.as_ref().map(|s| s.satisfied_continuous),
            risk_reduction: reduction,
        };
        let baseline_reduction = self.baseline.validation.as_ref().map(|_| 0.0);
        vec![
            row(PCHEKOV, &self.pchekov, self.risk_reduction()),
            row(BASELINE, &self.baseline, baseline_reduction),
        ]
    }
}

fn timed<T>(on: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    // No clock unless asked: Instant is unavailable on wasm32.
    let start = on.then(Instant::now);
    let out = f();
    (out, start.map(|t| t.elapsed().as_secs_f64()))
}

/// Plans with the chance-constrained loop only.
pub fn plan_scenario(scenario: &Scenario) -> Result<PlanResult> {
    let env = scenario.environment()?;
    plan_chance_constrained(
        &scenario.query.start,
        &scenario.query.goal,
        &env,
        &scenario.noise,
        &scenario.planner,
    )
}

pub fn run_experiment(
    scenario: &Scenario,
    options: &ExperimentOptions,
) -> Result<ExperimentReport> {
    scenario.validate()?;
    let env = scenario.environment()?;
    let params = &scenario.planner;
    let config = scenario.validation_config();

    let (plan, time) = timed(options.record_wall_time, || plan_scenario(scenario));
    let plan = plan?;
    let pchekov = match &plan.trajectory {
        Some(traj) => VariantOutcome {
            status: plan.status.as_str().to_string(),
            planning_time_s: time,
            trajectory: Some(traj.clone()),
            beliefs: plan.beliefs.clone(),
            risks: plan.risks.clone(),
            validation: Some(validate(
                traj,
                &env,
                &scenario.noise,
                &params.controller,
                &config,
            )?),
        },
        None => VariantOutcome {
            status: plan.status.as_str().to_string(),
            planning_time_s: time,
            trajectory: None,
            beliefs: Vec::new(),
            risks: Vec::new(),
            validation: None,
        },
    };

    let (baseline, time) = timed(options.record_wall_time, || {
        plan_deterministic(&scenario.query.start, &scenario.query.goal, &env, params)
    });
    let baseline = match baseline {
        Ok(traj) => {
            let beliefs =
                apriori_distributions_with(&traj, &env.arm, &scenario.noise, &params.controller)?;
            let risks = waypoint_risks(&beliefs, &env, params.validation_nodes_per_dim)?;
            let allocation = uniform_allocation(params.chance_constraint, risks.len())?;
            let status = if risk_test(&risks, &allocation)?.violation {
                "violated"
            } else {
                "satisfied"
            };
            VariantOutcome {
                status: status.into(),
                planning_time_s: time,
                validation: Some(validate(
                    &traj,
                    &env,
                    &scenario.noise,
                    &params.controller,
                    &config,
                )?),
                trajectory: Some(traj),
                beliefs,
                risks,
            }
        }
        Err(Error::InvalidArgument(_)) => VariantOutcome {
            status: PlanStatus::Infeasible.as_str().into(),
            planning_time_s: time,
            trajectory: None,
            beliefs: Vec::new(),
            risks: Vec::new(),
            validation: None,
        },
        Err(e) => return Err(e),
    };

    Ok(ExperimentReport {
        scenario: scenario.name.clone(),
        plan,
        pchekov,
        baseline,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// risks.csv content for a plan; empty body when no trajectory was found.
pub fn plan_risks_csv(plan: &PlanResult) -> Result<String> {
    match &plan.allocation {
        Some(a) => report::risks_csv(&plan.risks, &a.bounds, &plan.hit_in_distances),
        None => report::risks_csv(&[], &[], &[]),
    }
}

/// Writes the plan-only outputs: trajectory.csv (when planned), risks.csv,
/// trajectory.svg and the effective scenario.
pub fn write_plan(
    dir: &Path,
    scenario: &Scenario,
    plan: &PlanResult,
    baseline: Option<&NominalTrajectory>,
) -> Result<()> {
    create_dir(dir)?;
    write(dir, "scenario.toml", &scenario.to_toml()?)?;
    write(dir, "risks.csv", &plan_risks_csv(plan)?)?;
    if let Some(traj) = &plan.trajectory {
        write(dir, "trajectory.csv", &report::trajectory_csv(traj)?)?;
    }
    let env = scenario.environment()?;
    let svg = report::trajectory_svg(&Figure {
        title: &scenario.name,
        env: &env,
        trajectory: plan.trajectory.as_ref(),
        beliefs: &plan.beliefs,
        baseline,
    })?;
    write(dir, "trajectory.svg", &svg)
}

pub fn write_experiment(dir: &Path, scenario: &Scenario, report: &ExperimentReport) -> Result<()> {
    write_plan(
        dir,
        scenario,
        &report.plan,
        report.baseline.trajectory.as_ref(),
    )?;
    if let Some(traj) = &report.baseline.trajectory {
        write(
            dir,
            "baseline_trajectory.csv",
            &report::trajectory_csv(traj)?,
        )?;
    }
    write(dir, "results.csv", &report::results_csv(&report.rows())?)
}

/// Loads every `*.toml` file in `dir`, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<Scenario>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "toml") {
            paths.push(path);
        }
    }
    paths.sort();
    let scenarios = paths
        .iter()
        .map(crate::scenario::load_scenario)
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation {
            field: "name".into(),
            message: format!(
                "scenario name `{}` is used more than once in {}",
                w[0],
                dir.display()
            ),
        });
    }
    Ok(scenarios)
}

/// Runs every scenario, concurrently when the `parallel` feature is on.
/// Reports come back in input order.
pub fn run_suite(
    scenarios: &[Scenario],
    options: &ExperimentOptions,
) -> Result<Vec<ExperimentReport>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        scenarios
            .par_iter()
            .map(|s| run_experiment(s, options))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scenarios
            .iter()
            .map(|s| run_experiment(s, options))
            .collect()
    }
}

pub const SUMMARY_HEADER: &str = "metric,subset,value";

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregate over a suite:
/// planning time, overall collision rate and path length per planner, then
/// satisfaction rates and per-subset averages for the chance-constrained
/// planner. Collision rates are continuous-time unless the subset says
/// otherwise; planning times are NA unless wall time was recorded.
pub fn summary_csv(reports: &[ExperimentReport]) -> Result<String> {
    let mut rows: Vec<(String, String, Option<f64>)> = Vec::new();
    fn variant(r: &ExperimentReport, baseline: bool) -> &VariantOutcome {
        if baseline {
            &r.baseline
        } else {
            &r.pchekov
        }
    }
    for (metric, f) in [
        (
            "planning_time_s",
            (|v: &VariantOutcome| v.planning_time_s) as fn(&VariantOutcome) -> Option<f64>,
        ),
        ("overall_collision_rate", |v| {
            v.validation.as_ref().map(|s| s.continuous_rate)
        }),
        ("path_length_rad", |v| {
            v.trajectory.as_ref().map(|t| t.path_length())
        }),
    ] {
        for (name, is_baseline) in [(BASELINE, true), (PCHEKOV, false)] {
            let values: Vec<f64> = reports
                .iter()
                .filter_map(|r| f(variant(r, is_baseline)))
                .collect();
            let value = if values.len() == reports.len() {
                mean(values.into_iter())
            } else {
                None
            };
            rows.push((metric.into(), name.into(), value));
        }
    }

    let planned: Vec<&ExperimentReport> = reports
        .iter()
        .filter(|r| r.pchekov.validation.is_some())
        .collect();
    for (kind, pick) in [
        (
            "continuous",
            (|s: &ValidationStats| (s.satisfied_continuous, s.continuous_rate))
                as fn(&ValidationStats) -> (bool, f64),
        ),
        ("discrete", |s| (s.satisfied_discrete, s.discrete_rate)),
    ] {
        let ok = |r: &ExperimentReport| pick(r.pchekov.validation.as_ref().expect("validated")).0;
        let rate = mean(planned.iter().map(|r| if ok(r) { 1.0 } else { 0.0 }));
        rows.push((format!("{kind}_satisfaction_rate"), "all".into(), rate));
        for (subset, want) in [("satisfied", true), ("violated", false)] {
            let group: Vec<&&ExperimentReport> = planned.iter().filter(|r| ok(r) == want).collect();
            let label = format!("{kind}_{subset}");
            let times: Vec<f64> = group
                .iter()
                .filter_map(|r| r.pchekov.planning_time_s)
                .collect();
            let time = if times.len() == group.len() {
                mean(times.into_iter())
            } else {
                None
            };
            rows.push(("average_planning_time_s".into(), label.clone(), time));
            rows.push((
                "average_collision_rate".into(),
                label.clone(),
                mean(
                    group
                        .iter()
                        .map(|r| pick(r.pchekov.validation.as_ref().expect("validated")).1),
                ),
            ));
            rows.push((
                "average_risk_reduction".into(),
                label,
                mean(group.iter().filter_map(|r| r.risk_reduction())),
            ));
        }
    }
    rows.push(("scenarios".into(), "all".into(), Some(reports.len() as f64)));
    rows.push((
        "infeasible".into(),
        PCHEKOV.into(),
        Some(reports.iter().filter(|r| r.infeasible()).count() as f64),
    ));

    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let fail = |e: csv::Error| Error::InvalidState(format!("csv encoding failed: {e}"));
    w.write_record(SUMMARY_HEADER.split(',')).map_err(fail)?;
    for (metric, subset, value) in rows {
        w.write_record([metric, subset, report::opt_num(value)])
            .map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidState(format!("csv encoding failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidState(e.to_string()))
}

/// Writes one directory per scenario plus the combined results.csv and
/// summary.csv at the top level.
pub fn write_suite(dir: &Path, scenarios: &[Scenario], reports: &[ExperimentReport]) -> Result<()> {
    create_dir(dir)?;
    let mut rows = Vec::new();
    for (s, r) in scenarios.iter().zip(reports) {
        write_experiment(&dir.join(&s.name), s, r)?;
        rows.extend(r.rows());
    }
    write(dir, "results.csv", &report::results_csv(&rows)?)?;
    write(dir, "summary.csv", &summary_csv(reports)?)
}
