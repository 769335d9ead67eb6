//! Per-joint double-integrator dynamics in deviation coordinates.
//!
//! Every joint carries a (position, velocity) pair driven by an acceleration
//! input. Joints evolve independently, so the full system is block-diagonal
//! when written per joint. The stacked full-state layout used by the filter
//! and the simulator is `[q_1..q_n, v_1..v_n]`.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;

/// Symmetry / eigenvalue tolerance for user-supplied covariance blocks.
pub const COVARIANCE_TOL: f64 = 1e-12;

/// Default control period in seconds.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl JointState {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("joint state needs at least one joint"));
        }
        if positions.len() != velocities.len() {
            return Err(invalid(format!(
                "positions ({}) and velocities ({}) differ in length",
                positions.len(),
                velocities.len()
            )));
        }
        if positions.iter().chain(&velocities).any(|v| !v.is_finite()) {
            return Err(invalid("joint state has a non-finite entry"));
        }
        Ok(Self {
            positions,
            velocities,
        })
    }

    pub fn at_rest(positions: Vec<f64>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![0.0; n])
    }

    pub fn n_joints(&self) -> usize {
        self.positions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub accelerations: Vec<f64>,
}

impl ControlInput {
    pub fn new(accelerations: Vec<f64>) -> Result<Self> {
        if accelerations.iter().any(|v| !v.is_finite()) {
            return Err(invalid("control input has a non-finite entry"));
        }
        Ok(Self { accelerations })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            accelerations: vec![0.0; n],
        }
    }
}

/// Gaussian process noise: one 2×2 (position, velocity) covariance block per
/// joint. Blocks are independent across joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseModel {
    #[serde(with = "crate::serde_mat::vec_mat2")]
    pub per_joint_covariance: Vec<Matrix2<f64>>,
}

impl ProcessNoiseModel {
    pub fn new(per_joint_covariance: Vec<Matrix2<f64>>) -> Result<Self> {
        let model = Self {
            per_joint_covariance,
        };
        model.validate()?;
        Ok(model)
    }

    /// Same isotropic variance on position and velocity of every joint.
    pub fn isotropic(n_joints: usize, variance: f64) -> Self {
        Self {
            per_joint_covariance: vec![Matrix2::identity() * variance; n_joints],
        }
    }

    pub fn zero(n_joints: usize) -> Self {
        Self::isotropic(n_joints, 0.0)
    }

    pub fn n_joints(&self) -> usize {
        self.per_joint_covariance.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (j, block) in self.per_joint_covariance.iter().enumerate() {
            linalg::check_psd2(block, COVARIANCE_TOL, &format!("process noise block {j}"))?;
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            per_joint_covariance: self.per_joint_covariance.iter().map(|b| b * s).collect(),
        }
    }

    /// Full `2n × 2n` covariance in `[q; v]` layout.
    pub fn full_covariance(&self) -> DMatrix<f64> {
        blocks_to_full(&self.per_joint_covariance)
    }
}

/// Scatters per-joint 2×2 blocks into the stacked `[q; v]` layout.
pub fn blocks_to_full(blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let n = blocks.len();
    let mut full = DMatrix::zeros(2 * n, 2 * n);
    for (j, b) in blocks.iter().enumerate() {
        full[(j, j)] = b[(0, 0)];
        full[(j, n + j)] = b[(0, 1)];
        full[(n + j, j)] = b[(1, 0)];
        full[(n + j, n + j)] = b[(1, 1)];
    }
    full
}

/// Per-joint discretized double integrator: `A = [[1, dt], [0, 1]]`,
/// `B = [dt²/2, dt]ᵀ`.
pub fn linearize_joint_dynamics(dt: f64) -> Result<(Matrix2<f64>, Vector2<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    Ok((
        Matrix2::new(1.0, dt, 0.0, 1.0),
        Vector2::new(0.5 * dt * dt, dt),
    ))
}

/// Full-state `(A, B)` for `n` joints in `[q; v]` layout.
pub fn system_matrices(n_joints: usize, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, b) = linearize_joint_dynamics(dt)?;
    let n = n_joints;
    let mut full_a = DMatrix::zeros(2 * n, 2 * n);
    let mut full_b = DMatrix::zeros(2 * n, n);
    for j in 0..n {
        full_a[(j, j)] = a[(0, 0)];
        full_a[(j, n + j)] = a[(0, 1)];
        full_a[(n + j, n + j)] = a[(1, 1)];
        full_b[(j, j)] = b[0];
        full_b[(n + j, j)] = b[1];
    }
    Ok((full_a, full_b))
}

/// Advances every joint by the noiseless double integrator.
pub fn propagate_nominal(state: &JointState, input: &ControlInput, dt: f64) -> Result<JointState> {
    let n = state.n_joints();
    if input.accelerations.len() != n || state.velocities.len() != n {
        return Err(invalid(format!(
            "dimension mismatch: state has {n} joints, input has {}",
            input.accelerations.len()
        )));
    }
    let (a, b) = linearize_joint_dynamics(dt)?;
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for j in 0..n {
        let x =
            a * Vector2::new(state.positions[j], state.velocities[j]) + b * input.accelerations[j];
        positions.push(x[0]);
        velocities.push(x[1]);
    }
    Ok(JointState {
        positions,
        velocities,
    })
}

/// Draws one (position, velocity) noise pair per joint.
pub fn sample_process_noise<R: Rng + ?Sized>(
    model: &ProcessNoiseModel,
    rng: &mut R,
) -> Result<Vec<Vector2<f64>>> {
    model.validate()?;
    Ok(model
        .per_joint_covariance
        .iter()
        .map(|block| {
            let factor = linalg::psd_factor(&DMatrix::from_column_slice(2, 2, block.as_slice()));
            let z = Vector2::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let s = &factor * nalgebra::DVector::from_column_slice(z.as_slice());
            Vector2::new(s[0], s[1])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_step_matrices() {
        let (a, b) = linearize_joint_dynamics(1.0).unwrap();
        assert_eq!(a, Matrix2::new(1.0, 1.0, 0.0, 1.0));
        assert_eq!(b, Vector2::new(0.5, 1.0));
        let (_, b) = linearize_joint_dynamics(0.1).unwrap();
        assert!((b[0] - 0.005).abs() < 1e-15 && (b[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_positive_dt_rejected() {
        assert!(linearize_joint_dynamics(0.0).is_err());
        assert!(linearize_joint_dynamics(-0.1).is_err());
        assert!(linearize_joint_dynamics(f64::NAN).is_err());
    }

    #[test]
    fn nominal_propagation_examples() {
        let s = JointState::new(vec![0.0], vec![1.0]).unwrap();
        let next = propagate_nominal(&s, &ControlInput::zeros(1), 0.5).unwrap();
        assert_eq!(next.positions, vec![0.5]);
        assert_eq!(next.velocities, vec![1.0]);

        let s = JointState::at_rest(vec![0.0]).unwrap();
        let next = propagate_nominal(&s, &ControlInput::new(vec![2.0]).unwrap(), 1.0).unwrap();
        assert_eq!(next.positions, vec![1.0]);
        assert_eq!(next.velocities, vec![2.0]);

        let s = JointState::at_rest(vec![0.0, 0.0]).unwrap();
        let next = propagate_nominal(&s, &ControlInput::zeros(2), 0.1).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = JointState::at_rest(vec![0.0, 0.0]).unwrap();
        assert!(propagate_nominal(&s, &ControlInput::zeros(3), 0.1).is_err());
        assert!(JointState::new(vec![0.0], vec![]).is_err());
        assert!(JointState::new(vec![], vec![]).is_err());
    }

    #[test]
    fn zero_noise_samples_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ProcessNoiseModel::zero(3);
        for _ in 0..10 {
            let s = sample_process_noise(&model, &mut rng).unwrap();
            assert!(s.iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn identity_noise_has_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = ProcessNoiseModel::isotropic(2, 1.0);
        let n = 100_000;
        let mut sum_sq = [0.0f64; 4];
        for _ in 0..n {
            let s = sample_process_noise(&model, &mut rng).unwrap();
            for (j, v) in s.iter().enumerate() {
                sum_sq[2 * j] += v[0] * v[0];
                sum_sq[2 * j + 1] += v[1] * v[1];
            }
        }
        for acc in sum_sq {
            let var = acc / n as f64;
            assert!((var - 1.0).abs() < 0.05, "variance {var}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let model = ProcessNoiseModel::isotropic(2, 0.3);
        let a = sample_process_noise(&model, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_process_noise(&model, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_psd_block_rejected() {
        let bad = ProcessNoiseModel {
            per_joint_covariance: vec![Matrix2::new(1.0, 2.0, 2.0, 1.0)],
        };
        assert!(sample_process_noise(&bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(ProcessNoiseModel::new(vec![Matrix2::new(1.0, 0.5, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn full_layout_matches_blocks() {
        let (a, b) = system_matrices(2, 0.1).unwrap();
        assert_eq!(a[(0, 2)], 0.1);
        assert_eq!(a[(1, 3)], 0.1);
        assert_eq!(a[(0, 3)], 0.0);
        assert!((b[(0, 0)] - 0.005).abs() < 1e-15);
        assert_eq!(b[(3, 1)], 0.1);
        let cov = blocks_to_full(&[
            Matrix2::new(1.0, 0.2, 0.2, 2.0),
            Matrix2::new(3.0, 0.0, 0.0, 4.0),
        ]);
        assert_eq!(cov[(0, 2)], 0.2);
        assert_eq!(cov[(2, 2)], 2.0);
        assert_eq!(cov[(1, 1)], 3.0);
    }

    fn finite() -> impl Strategy<Value = f64> {
        -10.0..10.0f64
    }

    proptest! {
        #[test]
        fn propagation_is_linear(
            p1 in prop::collection::vec(finite(), 3),
            v1 in prop::collection::vec(finite(), 3),
            u1 in prop::collection::vec(finite(), 3),
            p2 in prop::collection::vec(finite(), 3),
            v2 in prop::collection::vec(finite(), 3),
            u2 in prop::collection::vec(finite(), 3),
            a in finite(), b in finite(), dt in 0.01..1.0f64,
        ) {
            let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(x, y)| a * x + b * y).collect::<Vec<_>>();
            let s1 = JointState::new(p1.clone(), v1.clone()).unwrap();
            let s2 = JointState::new(p2.clone(), v2.clone()).unwrap();
            let lhs = propagate_nominal(
                &JointState::new(comb(&p1, &p2), comb(&v1, &v2)).unwrap(),
                &ControlInput::new(comb(&u1, &u2)).unwrap(),
                dt,
            ).unwrap();
            let r1 = propagate_nominal(&s1, &ControlInput::new(u1).unwrap(), dt).unwrap();
            let r2 = propagate_nominal(&s2, &ControlInput::new(u2).unwrap(), dt).unwrap();
            let rp = comb(&r1.positions, &r2.positions);
            let rv = comb(&r1.velocities, &r2.velocities);
            for j in 0..3 {
                prop_assert!((lhs.positions[j] - rp[j]).abs() < 1e-9);
                prop_assert!((lhs.velocities[j] - rv[j]).abs() < 1e-9);
            }
        }

        #[test]
        fn joints_evolve_independently(
            p in prop::collection::vec(finite(), 3),
            v in prop::collection::vec(finite(), 3),
            u in prop::collection::vec(finite(), 3),
            bump in finite(), joint in 0usize..3,
        ) {
            let base = JointState::new(p.clone(), v.clone()).unwrap();
            let mut p2 = p.clone();
            p2[joint] += bump;
            let mut v2 = v.clone();
            v2[joint] -= bump;
            let bumped = JointState::new(p2, v2).unwrap();
            let input = ControlInput::new(u).unwrap();
            let r1 = propagate_nominal(&base, &input, 0.1).unwrap();
            let r2 = propagate_nominal(&bumped, &input, 0.1).unwrap();
            for j in (0..3).filter(|&j| j != joint) {
                prop_assert_eq!(r1.positions[j].to_bits(), r2.positions[j].to_bits());
                prop_assert_eq!(r1.velocities[j].to_bits(), r2.velocities[j].to_bits());
            }
        }

        #[test]
        fn transition_preserves_volume(dt in 1e-4..10.0f64) {
            let (a, _) = linearize_joint_dynamics(dt).unwrap();
            prop_assert!((a.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
