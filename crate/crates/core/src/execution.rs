//! Monte Carlo execution of a nominal trajectory under LQG control.
//!
//! Each run draws an initial deviation, process noise and observation noise
//! from a seeded generator, closes the loop with the same gains used for
//! belief prediction, and records whether the realized configurations hit
//! anything at the waypoints (discrete) or along the joint-space segments
//! between them (continuous).

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{edge_in_collision, in_collision, Environment, DEFAULT_EDGE_SUBSTEPS};
use crate::dynamics::sample_process_noise;
use crate::error::{invalid, Result};
use crate::kinematics::forward_kinematics;
use crate::linalg::{psd_factor, sample_gaussian};
use crate::lqg::{ClosedLoop, ControllerWeights, NoiseModel};
use crate::trajectory::NominalTrajectory;

/// How the simulated sensor measures the end effector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Forward kinematics of the true configuration, relative to the
    /// nominal end-effector position.
    #[default]
    Kinematic,
    /// The Jacobian linearization the filter was designed with.
    Linearized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionSettings {
    pub observation: ObservationMode,
    /// Interpolation substeps per segment for the continuous check.
    pub edge_substeps: usize,
}

impl Default for ExecutionSettings {
    fn default() -> Self {
        Self {
            observation: ObservationMode::Kinematic,
            edge_substeps: DEFAULT_EDGE_SUBSTEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    /// Realized joint positions at waypoints `0 … T`.
    pub positions: Vec<Vec<f64>>,
    pub discrete_collision: bool,
    pub continuous_collision: bool,
    /// First waypoint found in collision, if any.
    pub first_collision: Option<usize>,
}

/// Simulates one execution.
pub fn simulate_execution<R: rand::Rng + ?Sized>(
    traj: &NominalTrajectory,
    env: &Environment,
    noise: &NoiseModel,
    controller: &ClosedLoop,
    settings: &ExecutionSettings,
    rng: &mut R,
) -> Result<ExecutionResult> {
    let n = traj.n_joints();
    if controller.n_joints != n || controller.horizon() != traj.horizon() {
        return Err(invalid(
            "controller was designed for a different trajectory",
        ));
    }
    if env.n_joints() != n {
        return Err(invalid(format!(
            "trajectory has {n} joints, environment arm has {}",
            env.n_joints()
        )));
    }
    let d = 2 * n;
    let obs_factor = psd_factor(&controller.obs_noise);
    let init_factor = psd_factor(&controller.initial);

    let mut x = sample_gaussian(&init_factor, rng);
    let mut est = DVector::zeros(d);
    let mut positions = Vec::with_capacity(traj.waypoints.len());
    let true_positions = |x: &DVector<f64>, t: usize| -> Vec<f64> {
        traj.waypoints[t]
            .positions
            .iter()
            .enumerate()
            .map(|(j, q)| q + x[j])
            .collect()
    };
    positions.push(true_positions(&x, 0));

    for t in 1..=traj.horizon() {
        let l = &controller.gains.feedback_gains[t - 1];
        let k = &controller.gains.kalman_gains[t - 1];
        let feedback = -(l * &est);

        let w = sample_process_noise(noise.process_at(t)?, rng)?;
        let mut m = DVector::zeros(d);
        for (j, pair) in w.iter().enumerate() {
            m[j] = pair[0];
            m[n + j] = pair[1];
        }
        x = &controller.a * &x + &controller.b * &feedback + m;
        let predicted = &controller.a * &est + &controller.b * &feedback;

        let meas_noise = &controller.scaling * sample_gaussian(&obs_factor, rng);
        let h = &controller.observation[t];
        let q = true_positions(&x, t);
        let z = match settings.observation {
            ObservationMode::Linearized => h * &x + meas_noise,
            ObservationMode::Kinematic => {
                let actual = forward_kinematics(&q, &env.arm)?.end_effector();
                let nominal =
                    forward_kinematics(&traj.waypoints[t].positions, &env.arm)?.end_effector();
                DVector::from_column_slice((actual - nominal).as_slice()) + meas_noise
            }
        };
        est = &predicted + k * (z - h * &predicted);
        positions.push(q);
    }

    let first_collision = positions.iter().position(|q| in_collision(q, env));
    let continuous_collision = first_collision.is_some()
        || positions
            .windows(2)
            .any(|w| edge_in_collision(&w[0], &w[1], env, settings.edge_substeps));
    Ok(ExecutionResult {
        positions,
        discrete_collision: first_collision.is_some(),
        continuous_collision,
        first_collision,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationStats {
    pub runs: usize,
    pub discrete_collisions: usize,
    pub continuous_collisions: usize,
    pub discrete_rate: f64,
    pub continuous_rate: f64,
    pub chance_constraint: f64,
    pub satisfied_discrete: bool,
    pub satisfied_continuous: bool,
}

/// Relative slack on the chance constraint used when judging empirical
/// collision rates.
pub const SATISFACTION_SLACK: f64 = 1.5;

pub fn satisfies(rate: f64, chance_constraint: f64) -> bool {
    rate <= SATISFACTION_SLACK * chance_constraint
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub runs: usize,
    pub base_seed: u64,
    pub chance_constraint: f64,
    pub execution: ExecutionSettings,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            base_seed: 0,
            chance_constraint: 0.1,
            execution: ExecutionSettings::default(),
        }
    }
}

/// Runs `config.runs` executions with seeds `base_seed + k` and tallies
/// collision rates.
pub fn validate(
    traj: &NominalTrajectory,
    env: &Environment,
    noise: &NoiseModel,
    weights: &ControllerWeights,
    config: &ValidationConfig,
) -> Result<ValidationStats> {
    let ValidationConfig {
        runs,
        base_seed,
        chance_constraint,
        execution: ref settings,
    } = *config;
    if runs == 0 {
        return Err(invalid("validation needs at least one run"));
    }
    let controller = ClosedLoop::design(traj, &env.arm, noise, weights)?;
    let run = |k: usize| -> Result<(bool, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(k as u64));
        let r = simulate_execution(traj, env, noise, &controller, settings, &mut rng)?;
        Ok((r.discrete_collision, r.continuous_collision))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<(bool, bool)> = {
        use rayon::prelude::*;
        (0..runs).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<(bool, bool)> = (0..runs).map(run).collect::<Result<_>>()?;

    let discrete_collisions = outcomes.iter().filter(|o| o.0).count();
    let continuous_collisions = outcomes.iter().filter(|o| o.1).count();
    let discrete_rate = discrete_collisions as f64 / runs as f64;
    let continuous_rate = continuous_collisions as f64 / runs as f64;
    Ok(ValidationStats {
        runs,
        discrete_collisions,
        continuous_collisions,
        discrete_rate,
        continuous_rate,
        chance_constraint,
        satisfied_discrete: satisfies(discrete_rate, chance_constraint),
        satisfied_continuous: satisfies(continuous_rate, chance_constraint),
    })
}

/// `P(X ≤ k)` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("probability must lie in [0, 1], got {p}")));
    }
    if k >= n || p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    let log_odds = p.ln() - (-p).ln_1p();
    let mut log_term = n as f64 * (-p).ln_1p();
    let mut total = log_term.exp();
    for i in 0..k {
        log_term += ((n - i) as f64).ln() - ((i + 1) as f64).ln() + log_odds;
        total += log_term.exp();
    }
    Ok(total.min(1.0))
}
