use crate::dynamics::{propagate_nominal, ControlInput, JointState};
use crate::error::{invalid, Result};

/// Per-coordinate tolerance for the waypoint/dynamics consistency check.
pub const DYNAMICS_TOL: f64 = 1e-8;

/// Noiseless planned sequence `x*_0, u*_0, …, u*_{T−1}, x*_T` at a fixed
/// time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory {
    pub waypoints: Vec<JointState>,
    pub inputs: Vec<ControlInput>,
    pub dt: f64,
}

impl NominalTrajectory {
    pub fn new(waypoints: Vec<JointState>, inputs: Vec<ControlInput>, dt: f64) -> Result<Self> {
        let traj = Self {
            waypoints,
            inputs,
            dt,
        };
        traj.validate()?;
        Ok(traj)
    }

    /// Builds a dynamically consistent trajectory through the given
    /// positions. The initial velocity is the forward difference of the
    /// first segment; every input is then the constant acceleration that
    /// lands exactly on the next waypoint, which fixes the next velocity.
    pub fn from_positions(positions: &[Vec<f64>], dt: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(invalid("a trajectory needs at least two waypoints"));
        }
        if !(dt > 0.0) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let n = positions[0].len();
        if positions.iter().any(|p| p.len() != n) {
            return Err(invalid("waypoints have inconsistent joint counts"));
        }
        let mut velocity: Vec<f64> = positions[0]
            .iter()
            .zip(&positions[1])
            .map(|(a, b)| (b - a) / dt)
            .collect();
        let mut waypoints = Vec::with_capacity(positions.len());
        let mut inputs = Vec::with_capacity(positions.len() - 1);
        for t in 0..positions.len() - 1 {
            let (q, next) = (&positions[t], &positions[t + 1]);
            let accel: Vec<f64> = (0..n)
                .map(|j| 2.0 * (next[j] - q[j] - velocity[j] * dt) / (dt * dt))
                .collect();
            waypoints.push(JointState::new(q.clone(), velocity.clone())?);
            for j in 0..n {
                velocity[j] += accel[j] * dt;
            }
            inputs.push(ControlInput::new(accel)?);
        }
        waypoints.push(JointState::new(
            positions[positions.len() - 1].clone(),
            velocity,
        )?);
        Self::new(waypoints, inputs, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(invalid("a trajectory needs at least two waypoints"));
        }
        if self.inputs.len() + 1 != self.waypoints.len() {
            return Err(invalid(format!(
                "{} waypoints need {} inputs, got {}",
                self.waypoints.len(),
                self.waypoints.len() - 1,
                self.inputs.len()
            )));
        }
        let residual = self.dynamics_residual()?;
        if residual > DYNAMICS_TOL {
            return Err(invalid(format!(
                "waypoints violate the nominal dynamics by {residual:e}"
            )));
        }
        Ok(())
    }

    /// Largest per-coordinate mismatch between each waypoint and the
    /// propagation of its predecessor.
    pub fn dynamics_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (t, u) in self.inputs.iter().enumerate() {
            let pred = propagate_nominal(&self.waypoints[t], u, self.dt)?;
            let next = &self.waypoints[t + 1];
            if next.n_joints() != pred.n_joints() {
                return Err(invalid(format!(
                    "waypoint {} has the wrong joint count",
                    t + 1
                )));
            }
            for (a, b) in pred
                .positions
                .iter()
                .chain(&pred.velocities)
                .zip(next.positions.iter().chain(&next.velocities))
            {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }

    /// Number of control steps `T`.
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_joints(&self) -> usize {
        self.waypoints[0].n_joints()
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.waypoints.iter().map(|w| w.positions.clone()).collect()
    }

    pub fn start(&self) -> &[f64] {
        &self.waypoints[0].positions
    }

    pub fn goal(&self) -> &[f64] {
        &self.waypoints[self.waypoints.len() - 1].positions
    }

    /// Joint-space path length in radians.
    pub fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| {
                w[0].positions
                    .iter()
                    .zip(&w[1].positions)
                    .map(|(a, b)| (b - a) * (b - a))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstruction_is_consistent() {
        let positions = vec![
            vec![0.0, 0.1],
            vec![0.2, 0.0],
            vec![0.1, -0.4],
            vec![0.5, 0.3],
            vec![0.5, 0.3],
        ];
        let traj = NominalTrajectory::from_positions(&positions, 0.1).unwrap();
        assert!(traj.dynamics_residual().unwrap() < 1e-12);
        assert_eq!(traj.positions(), positions);
    }

    #[test]
    fn straight_line_has_constant_velocity() {
        let positions: Vec<Vec<f64>> = (0..=4).map(|t| vec![0.25 * t as f64]).collect();
        let traj = NominalTrajectory::from_positions(&positions, 0.5).unwrap();
        assert!(traj.inputs.iter().all(|u| u.accelerations[0].abs() < 1e-12));
        assert!((traj.path_length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_trajectory_rejected() {
        let w = vec![
            JointState::at_rest(vec![0.0]).unwrap(),
            JointState::at_rest(vec![1.0]).unwrap(),
        ];
        assert!(NominalTrajectory::new(w, vec![ControlInput::zeros(1)], 0.1).is_err());
    }
}
