//! Deterministic penalty-method trajectory optimizer and the outer
//! chance-constrained planning loop.
//!
//! The outer loop alternates between optimizing a nominal trajectory,
//! predicting its a-priori beliefs, estimating per-waypoint risks and
//! testing them against the current risk allocation. Each violating
//! waypoint has its penalty hit-in distance raised and its configuration
//! added to the repulsion list before the allocation is rebalanced and the
//! trajectory re-optimized.

use serde::{Deserialize, Serialize};

use crate::allocation::{reallocate, risk_test, uniform_allocation, RiskAllocation, DEFAULT_RATE};
use crate::collision::{in_collision, min_clearance, Environment};
use crate::error::{invalid, Result};
use crate::lqg::{apriori_distributions_with, ControllerWeights, GaussianBelief, NoiseModel};
use crate::risk::{
    collision_probability_quadrature, waypoint_risks, PLANNING_NODES, VALIDATION_NODES,
};
pub use crate::trajectory::NominalTrajectory;

/// A configuration the optimizer is pushed away from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedConfig {
    pub positions: Vec<f64>,
    pub radius: f64,
}

/// Inner optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Penalty weights tried in order until every waypoint clears its
    /// hit-in distance.
    pub penalty_schedule: Vec<f64>,
    /// Gradient steps per penalty weight.
    pub max_steps: usize,
    /// Central-difference step for penalty gradients, radians.
    pub gradient_step: f64,
    /// Minimum interior points per segment included in the collision
    /// penalty.
    pub edge_samples: usize,
    /// Longer segments get extra samples so that consecutive samples are
    /// at most this far apart in joint space, radians.
    pub edge_resolution: f64,
    /// Perturbed reseeds tried when the straight-line seed optimizes into
    /// a colliding path.
    pub restarts: usize,
    /// Peak joint offset of the first perturbation, radians.
    pub restart_amplitude: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            penalty_schedule: vec![1.0, 10.0, 100.0, 1000.0],
            max_steps: 200,
            gradient_step: 1e-5,
            edge_samples: 3,
            edge_resolution: 0.03,
            restarts: 8,
            restart_amplitude: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Number of control steps `T`; the trajectory has `T + 1` waypoints.
    pub horizon: usize,
    pub dt: f64,
    /// Penalty hit-in distance per waypoint (meters). Empty means zeros.
    pub hit_in_distances: Vec<f64>,
    pub penalized_configs: Vec<PenalizedConfig>,
    /// Hit-in distance increment per violation, meters.
    pub d_step: f64,
    pub max_iterations: usize,
    /// Stop an inner optimization once the objective improves by less.
    pub convergence_tolerance: f64,
    pub chance_constraint: f64,
    /// Allowed execution time; `horizon · dt` must not exceed it.
    pub time_budget: f64,
    /// Base clearance margin added to every hit-in distance, meters.
    pub safety_margin: f64,
    /// Radius of the repulsion ball around penalized configurations, radians.
    pub penalized_radius: f64,
    pub risk_rate: f64,
    /// Risk tolerance `η`; defaults to 5% of the uniform share.
    pub risk_tolerance: Option<f64>,
    pub nodes_per_dim: usize,
    pub validation_nodes_per_dim: usize,
    pub controller: ControllerWeights,
    pub optimizer: OptimizerSettings,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: 30,
            dt: crate::dynamics::DEFAULT_DT,
            hit_in_distances: Vec::new(),
            penalized_configs: Vec::new(),
            d_step: 0.02,
            max_iterations: 50,
            convergence_tolerance: 1e-9,
            chance_constraint: 0.1,
            time_budget: 10.0,
            safety_margin: 0.01,
            penalized_radius: 0.1,
            risk_rate: DEFAULT_RATE,
            risk_tolerance: None,
            nodes_per_dim: PLANNING_NODES,
            validation_nodes_per_dim: VALIDATION_NODES,
            controller: ControllerWeights::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl PlannerParams {
    pub fn waypoint_count(&self) -> usize {
        self.horizon + 1
    }

    /// Fills defaulted per-waypoint fields so that every value is explicit.
    pub fn resolved(mut self) -> Self {
        if self.hit_in_distances.is_empty() {
            self.hit_in_distances = vec![0.0; self.waypoint_count()];
        }
        if self.risk_tolerance.is_none() {
            self.risk_tolerance = Some(
                crate::allocation::DEFAULT_TOLERANCE_FRACTION * self.chance_constraint
                    / self.waypoint_count() as f64,
            );
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::field_error;
        if self.horizon == 0 {
            return Err(field_error("planner.horizon", "must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(field_error("planner.dt", "must be positive"));
        }
        if !self.hit_in_distances.is_empty() {
            if self.hit_in_distances.len() != self.waypoint_count() {
                return Err(field_error(
                    "planner.hit_in_distances",
                    format!(
                        "expected {} entries (horizon + 1), got {}",
                        self.waypoint_count(),
                        self.hit_in_distances.len()
                    ),
                ));
            }
            if let Some(i) = self.hit_in_distances.iter().position(|d| !(*d >= 0.0)) {
                return Err(field_error(
                    format!("planner.hit_in_distances[{i}]"),
                    "must be non-negative",
                ));
            }
        }
        if !(self.d_step > 0.0) {
            return Err(field_error("planner.d_step", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(field_error("planner.max_iterations", "must be at least 1"));
        }
        if !(self.chance_constraint > 0.0 && self.chance_constraint < 1.0) {
            return Err(field_error(
                "planner.chance_constraint",
                "must lie in (0, 1)",
            ));
        }
        if self.horizon as f64 * self.dt > self.time_budget + 1e-12 {
            return Err(field_error(
                "planner.time_budget",
                format!(
                    "horizon · dt = {} exceeds the time budget {}",
                    self.horizon as f64 * self.dt,
                    self.time_budget
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.risk_rate) {
            return Err(field_error("planner.risk_rate", "must lie in [0, 1)"));
        }
        if matches!(self.risk_tolerance, Some(eta) if !(eta >= 0.0)) {
            return Err(field_error(
                "planner.risk_tolerance",
                "must be non-negative",
            ));
        }
        for (name, n) in [
            ("planner.nodes_per_dim", self.nodes_per_dim),
            (
                "planner.validation_nodes_per_dim",
                self.validation_nodes_per_dim,
            ),
        ] {
            if n == 0 || n > crate::risk::MAX_HERMITE_NODES {
                return Err(field_error(name, "must be in 1..=30"));
            }
        }
        if !(self.optimizer.edge_resolution > 0.0) {
            return Err(field_error(
                "planner.optimizer.edge_resolution",
                "must be positive",
            ));
        }
        if self.optimizer.penalty_schedule.is_empty()
            || self.optimizer.penalty_schedule.iter().any(|w| !(*w > 0.0))
        {
            return Err(field_error(
                "planner.optimizer.penalty_schedule",
                "needs positive weights",
            ));
        }
        if !(self.safety_margin >= 0.0) {
            return Err(field_error("planner.safety_margin", "must be non-negative"));
        }
        if !(self.penalized_radius > 0.0) {
            return Err(field_error("planner.penalized_radius", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStatus {
    Satisfied,
    IterationLimit,
    Infeasible,
}

impl PlanStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanStatus::Satisfied => "satisfied",
            PlanStatus::IterationLimit => "iteration-limit",
            PlanStatus::Infeasible => "infeasible",
        }
    }
}

/// One pass of the risk test inside the planning loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub violated: Vec<usize>,
    pub max_excess: f64,
    pub hit_in_distances: Vec<f64>,
    pub penalized_count: usize,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectory: Option<NominalTrajectory>,
    pub beliefs: Vec<GaussianBelief>,
    pub risks: Vec<f64>,
    pub allocation: Option<RiskAllocation>,
    pub hit_in_distances: Vec<f64>,
    pub penalized_configs: Vec<PenalizedConfig>,
    pub iterations_used: usize,
    pub status: PlanStatus,
    pub reason: Option<String>,
    pub history: Vec<IterationRecord>,
}

impl PlanResult {
    fn infeasible(reason: String) -> Self {
        Self {
            trajectory: None,
            beliefs: Vec::new(),
            risks: Vec::new(),
            allocation: None,
            hit_in_distances: Vec::new(),
            penalized_configs: Vec::new(),
            iterations_used: 0,
            status: PlanStatus::Infeasible,
            reason: Some(reason),
            history: Vec::new(),
        }
    }
}

/// Linear joint-space interpolation from `start` to `goal` over `horizon`
/// steps.
pub fn straight_line_seed(
    start: &[f64],
    goal: &[f64],
    horizon: usize,
    dt: f64,
    env: &Environment,
) -> Result<NominalTrajectory> {
    let arm = &env.arm;
    arm.check_dims(start)?;
    arm.check_dims(goal)?;
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if !arm.within_limits(start) {
        return Err(invalid("start configuration violates joint limits"));
    }
    if !arm.within_limits(goal) {
        return Err(invalid("goal configuration violates joint limits"));
    }
    let positions: Vec<Vec<f64>> = (0..=horizon)
        .map(|t| {
            let s = t as f64 / horizon as f64;
            start
                .iter()
                .zip(goal)
                .map(|(a, b)| if t == horizon { *b } else { a + s * (b - a) })
                .collect()
        })
        .collect();
    NominalTrajectory::from_positions(&positions, dt)
}

struct PenaltyProblem<'a> {
    env: &'a Environment,
    hit_in: Vec<f64>,
    penalized: &'a [PenalizedConfig],
    margin: f64,
    edge_samples: usize,
    edge_resolution: f64,
}

impl PenaltyProblem<'_> {
    fn collision_term(&self, threshold: f64, q: &[f64], weight: f64) -> f64 {
        weight * (threshold - min_clearance(q, self.env)).max(0.0)
    }

    /// Collision and repulsion penalty at waypoint `t`.
    fn waypoint_penalty(&self, t: usize, q: &[f64], weight: f64) -> f64 {
        let mut total = 0.0;
        if !self.env.obstacles.is_empty() {
            total += self.collision_term(self.margin + self.hit_in[t], q, weight);
        }
        for pc in self.penalized {
            let d = q
                .iter()
                .zip(&pc.positions)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let h = (pc.radius - d).max(0.0);
            total += weight * h * h;
        }
        total
    }

    /// Collision penalty at evenly spaced interior points of segment
    /// `t → t + 1`, against the larger of the two hit-in distances.
    fn edge_penalty(&self, t: usize, a: &[f64], b: &[f64], weight: f64) -> f64 {
        self.edge_penalty_with(self.margin, t, a, b, weight)
    }

    fn edge_penalty_with(&self, margin: f64, t: usize, a: &[f64], b: &[f64], weight: f64) -> f64 {
        if self.env.obstacles.is_empty() || self.edge_samples == 0 {
            return 0.0;
        }
        let threshold = margin + self.hit_in[t].max(self.hit_in[t + 1]);
        let length = a
            .iter()
            .zip(b)
            .map(|(x, y)| (y - x) * (y - x))
            .sum::<f64>()
            .sqrt();
        let k = (self.edge_samples + 1).max((length / self.edge_resolution).ceil() as usize);
        let mut q = vec![0.0; a.len()];
        (1..k)
            .map(|i| {
                let s = i as f64 / k as f64;
                for (j, v) in q.iter_mut().enumerate() {
                    *v = a[j] + s * (b[j] - a[j]);
                }
                self.collision_term(threshold, &q, weight)
            })
            .sum()
    }

    fn objective(&self, path: &[Vec<f64>], weight: f64) -> f64 {
        let smooth: f64 = path
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(a, b)| (b - a) * (b - a))
                    .sum::<f64>()
            })
            .sum();
        let points: f64 = (1..path.len() - 1)
            .map(|t| self.waypoint_penalty(t, &path[t], weight))
            .sum();
        let edges: f64 = (0..path.len() - 1)
            .map(|t| self.edge_penalty(t, &path[t], &path[t + 1], weight))
            .sum();
        smooth + points + edges
    }

    /// Every penalty term that depends on waypoint `t`.
    fn local_penalty(&self, path: &[Vec<f64>], t: usize, q: &[f64], weight: f64) -> f64 {
        self.waypoint_penalty(t, q, weight)
            + self.edge_penalty(t - 1, &path[t - 1], q, weight)
            + self.edge_penalty(t, q, &path[t + 1], weight)
    }

    fn gradient(&self, path: &[Vec<f64>], weight: f64, h: f64) -> Vec<Vec<f64>> {
        let n = path[0].len();
        let last = path.len() - 1;
        let mut grad = vec![vec![0.0; n]; path.len()];
        for t in 1..last {
            let mut q = path[t].clone();
            for j in 0..n {
                // Path-energy term: ∂/∂q_t Σ‖q_{k+1} − q_k‖².
                grad[t][j] = 2.0 * (2.0 * path[t][j] - path[t - 1][j] - path[t + 1][j]);
                let orig = q[j];
                q[j] = orig + h;
                let up = self.local_penalty(path, t, &q, weight);
                q[j] = orig - h;
                let down = self.local_penalty(path, t, &q, weight);
                q[j] = orig;
                grad[t][j] += (up - down) / (2.0 * h);
            }
        }
        grad
    }

    /// True when every waypoint and edge sample clears its hit-in distance.
    fn clearances_met(&self, path: &[Vec<f64>]) -> bool {
        if self.env.obstacles.is_empty() {
            return true;
        }
        let points =
            (1..path.len() - 1).all(|t| min_clearance(&path[t], self.env) >= self.hit_in[t]);
        points
            && (0..path.len() - 1)
                .all(|t| self.edge_penalty_with(0.0, t, &path[t], &path[t + 1], 1.0) == 0.0)
    }
}

fn project_to_limits(q: &mut [f64], env: &Environment) {
    for (v, [lo, hi]) in q.iter_mut().zip(&env.arm.joint_limits) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Locally minimizes squared joint-space path energy plus clearance and
/// repulsion penalties, with fixed endpoints. Penalty weights follow the
/// schedule in `params.optimizer` until every interior waypoint clears its
/// hit-in distance.
pub fn optimize_trajectory(
    seed: &NominalTrajectory,
    env: &Environment,
    params: &PlannerParams,
) -> Result<NominalTrajectory> {
    seed.validate()?;
    let waypoints = seed.waypoints.len();
    let hit_in = if params.hit_in_distances.is_empty() {
        vec![0.0; waypoints]
    } else if params.hit_in_distances.len() == waypoints {
        params.hit_in_distances.clone()
    } else {
        return Err(invalid(format!(
            "{} hit-in distances for {waypoints} waypoints",
            params.hit_in_distances.len()
        )));
    };
    let problem = PenaltyProblem {
        env,
        hit_in,
        penalized: &params.penalized_configs,
        margin: params.safety_margin,
        edge_samples: params.optimizer.edge_samples,
        edge_resolution: params.optimizer.edge_resolution,
    };
    let settings = &params.optimizer;
    let mut path = seed.positions();
    if waypoints > 2 {
        for &weight in &settings.penalty_schedule {
            descend(
                &problem,
                &mut path,
                weight,
                settings,
                params.convergence_tolerance,
            );
            if problem.clearances_met(&path) {
                break;
            }
        }
    }
    NominalTrajectory::from_positions(&path, seed.dt)
}

/// Projected gradient descent with Armijo backtracking on the interior
/// waypoints.
fn descend(
    problem: &PenaltyProblem<'_>,
    path: &mut [Vec<f64>],
    weight: f64,
    settings: &OptimizerSettings,
    tolerance: f64,
) {
    let mut value = problem.objective(path, weight);
    let mut step: f64 = 0.25;
    let mut candidate = path.to_vec();
    for _ in 0..settings.max_steps {
        let grad = problem.gradient(path, weight, settings.gradient_step);
        let norm2: f64 = grad.iter().flatten().map(|g| g * g).sum();
        if norm2 < 1e-24 {
            return;
        }
        let mut accepted = None;
        let mut trial = (step * 2.0).min(1.0);
        for _ in 0..40 {
            for t in 1..path.len() - 1 {
                for j in 0..path[t].len() {
                    candidate[t][j] = path[t][j] - trial * grad[t][j];
                }
                project_to_limits(&mut candidate[t], problem.env);
            }
            let v = problem.objective(&candidate, weight);
            if v <= value - 1e-4 * trial * norm2 {
                accepted = Some(v);
                break;
            }
            trial *= 0.5;
        }
        let Some(v) = accepted else {
            return;
        };
        for t in 1..path.len() - 1 {
            path[t].copy_from_slice(&candidate[t]);
        }
        step = trial;
        let improvement = value - v;
        value = v;
        if improvement < tolerance {
            return;
        }
    }
}

/// Deepest penetration along the path, 0 when clear. Edges are sampled at
/// `resolution` rad so a path that jumps through an obstacle between
/// waypoints counts as colliding.
fn collision_deficit(traj: &NominalTrajectory, env: &Environment, resolution: f64) -> f64 {
    let path = traj.positions();
    let mut worst = 0.0f64;
    let mut q = vec![0.0; traj.n_joints()];
    for pair in path.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let len = a
            .iter()
            .zip(b)
            .map(|(x, y)| (y - x).powi(2))
            .sum::<f64>()
            .sqrt();
        let k = ((len / resolution).ceil() as usize).max(1);
        for i in 0..=k {
            let s = i as f64 / k as f64;
            for (j, v) in q.iter_mut().enumerate() {
                *v = a[j] + s * (b[j] - a[j]);
            }
            worst = worst.max(-min_clearance(&q, env));
        }
    }
    worst
}

/// Adds a half-sine bump to one joint of the seed. Restart `k` (from 1)
/// cycles through joints, then signs, then grows the amplitude.
fn perturbed_seed(
    seed: &NominalTrajectory,
    k: usize,
    amplitude: f64,
    env: &Environment,
) -> Result<NominalTrajectory> {
    let n = seed.n_joints();
    let joint = (k - 1) % n;
    let sign = if ((k - 1) / n).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    let scale = amplitude * (1 + (k - 1) / (2 * n)) as f64;
    let last = seed.waypoints.len() - 1;
    let mut positions = seed.positions();
    for (t, q) in positions.iter_mut().enumerate().take(last).skip(1) {
        let s = t as f64 / last as f64;
        q[joint] += sign * scale * (std::f64::consts::PI * s).sin();
        project_to_limits(q, env);
    }
    NominalTrajectory::from_positions(&positions, seed.dt)
}

/// Optimizes the seed and, if any waypoint is left in collision, retries
/// from deterministically perturbed copies of it. Returns the first
/// collision-free result, or the one with the smallest penetration.
pub fn optimize_with_restarts(
    seed: &NominalTrajectory,
    env: &Environment,
    params: &PlannerParams,
) -> Result<NominalTrajectory> {
    let resolution = params.optimizer.edge_resolution;
    let mut best = optimize_trajectory(seed, env, params)?;
    let mut best_deficit = collision_deficit(&best, env, resolution);
    if best_deficit == 0.0 || seed.waypoints.len() <= 2 {
        return Ok(best);
    }
    for k in 1..=params.optimizer.restarts {
        let start = perturbed_seed(seed, k, params.optimizer.restart_amplitude, env)?;
        let candidate = optimize_trajectory(&start, env, params)?;
        let deficit = collision_deficit(&candidate, env, resolution);
        if deficit == 0.0 {
            return Ok(candidate);
        }
        if deficit < best_deficit {
            best = candidate;
            best_deficit = deficit;
        }
    }
    Ok(best)
}

struct RiskEvaluation {
    beliefs: Vec<GaussianBelief>,
    risks: Vec<f64>,
}

fn evaluate(
    traj: &NominalTrajectory,
    env: &Environment,
    noise: &NoiseModel,
    params: &PlannerParams,
    nodes: usize,
) -> Result<RiskEvaluation> {
    let beliefs = apriori_distributions_with(traj, &env.arm, noise, &params.controller)?;
    let risks = waypoint_risks(&beliefs, env, nodes)?;
    Ok(RiskEvaluation { beliefs, risks })
}

/// Plans a trajectory whose estimated per-waypoint collision risks respect
/// a risk allocation of the joint chance constraint.
///
/// Risks inside the loop use `params.nodes_per_dim`. A pass at that node
/// count is confirmed at `params.validation_nodes_per_dim`; if the
/// confirmation fails the loop continues on the validation-grade risks, so
/// a satisfied result always holds at the reported node count.
pub fn plan_chance_constrained(
    start: &[f64],
    goal: &[f64],
    env: &Environment,
    noise: &NoiseModel,
    params: &PlannerParams,
) -> Result<PlanResult> {
    params.validate()?;
    env.validate()?;
    noise.validate(env.n_joints())?;
    let params = params.clone().resolved();
    let delta = params.chance_constraint;

    for (name, q) in [("start", start), ("goal", goal)] {
        env.arm.check_dims(q)?;
        if in_collision(q, env) {
            return Ok(PlanResult::infeasible(format!(
                "{name} configuration is in collision"
            )));
        }
        let point = GaussianBelief::new(
            nalgebra::DVector::from_column_slice(q),
            noise.initial_position_covariance(),
        )?;
        let risk = collision_probability_quadrature(&point, env, params.validation_nodes_per_dim)?;
        if risk > 1.5 * delta {
            return Ok(PlanResult::infeasible(format!(
                "{name} risk {risk:.4} exceeds 150% of the chance constraint"
            )));
        }
    }

    let seed = match straight_line_seed(start, goal, params.horizon, params.dt, env) {
        Ok(seed) => seed,
        Err(e) => return Ok(PlanResult::infeasible(format!("no seed trajectory: {e}"))),
    };

    let mut working = params.clone();
    let mut allocation = uniform_allocation(delta, params.waypoint_count())?
        .with_rate(params.risk_rate)?
        .with_tolerance(params.risk_tolerance.unwrap_or_default())?;
    let mut traj = optimize_with_restarts(&seed, env, &working)?;
    let mut nodes = params.nodes_per_dim;
    let mut eval = evaluate(&traj, env, noise, &working, nodes)?;
    let mut history = Vec::new();
    let mut iterations = 0;

    let status = loop {
        let mut report = risk_test(&eval.risks, &allocation)?;
        if !report.violation && nodes != params.validation_nodes_per_dim {
            // Confirm at validation grade before declaring success.
            nodes = params.validation_nodes_per_dim;
            eval = evaluate(&traj, env, noise, &working, nodes)?;
            report = risk_test(&eval.risks, &allocation)?;
        }
        let violated: Vec<usize> = report.violated().collect();
        history.push(IterationRecord {
            max_excess: report
                .risks
                .iter()
                .zip(&allocation.bounds)
                .map(|(r, d)| r - d)
                .fold(f64::NEG_INFINITY, f64::max),
            violated: violated.clone(),
            hit_in_distances: working.hit_in_distances.clone(),
            penalized_count: working.penalized_configs.len(),
        });
        if violated.is_empty() {
            break PlanStatus::Satisfied;
        }
        if iterations >= params.max_iterations {
            break PlanStatus::IterationLimit;
        }
        iterations += 1;
        for &i in &violated {
            working.penalized_configs.push(PenalizedConfig {
                positions: traj.waypoints[i].positions.clone(),
                radius: params.penalized_radius,
            });
            working.hit_in_distances[i] += params.d_step;
        }
        allocation = reallocate(&report.risks, &allocation)?;
        traj = optimize_trajectory(&traj, env, &working)?;
        eval = evaluate(&traj, env, noise, &working, nodes)?;
    };

    // Reported risks are always validation grade.
    if nodes != params.validation_nodes_per_dim {
        eval = evaluate(&traj, env, noise, &working, params.validation_nodes_per_dim)?;
    }
    Ok(PlanResult {
        trajectory: Some(traj),
        beliefs: eval.beliefs,
        risks: eval.risks,
        allocation: Some(allocation),
        hit_in_distances: working.hit_in_distances,
        penalized_configs: working.penalized_configs,
        iterations_used: iterations,
        status,
        reason: None,
        history,
    })
}

/// The deterministic baseline: the same optimizer from the same seed with
/// zero hit-in distances, no repulsion and no risk loop.
pub fn plan_deterministic(
    start: &[f64],
    goal: &[f64],
    env: &Environment,
    params: &PlannerParams,
) -> Result<NominalTrajectory> {
    let seed = straight_line_seed(start, goal, params.horizon, params.dt, env)?;
    let baseline = PlannerParams {
        hit_in_distances: Vec::new(),
        penalized_configs: Vec::new(),
        ..params.clone()
    };
    optimize_with_restarts(&seed, env, &baseline)
}
