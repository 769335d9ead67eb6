//! Planar serial-chain kinematics.
//!
//! Joint angles are cumulative: joint `j` rotates every link distal to it, so
//! link `i` points along `θ_i = q_0 + … + q_i`.

use nalgebra::{DMatrix, Matrix2, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::collision::Capsule;
use crate::dynamics::COVARIANCE_TOL;
use crate::error::{field_error, invalid, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub link_lengths: Vec<f64>,
    pub link_radii: Vec<f64>,
    #[serde(default)]
    pub base_position: [f64; 2],
    pub joint_limits: Vec<[f64; 2]>,
}

impl ArmSpec {
    pub fn new(
        link_lengths: Vec<f64>,
        link_radii: Vec<f64>,
        base_position: [f64; 2],
        joint_limits: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let arm = Self {
            link_lengths,
            link_radii,
            base_position,
            joint_limits,
        };
        arm.validate()?;
        Ok(arm)
    }

    /// Arm with the given lengths, zero radii, base at the origin and
    /// limits of ±π on every joint.
    pub fn with_lengths(link_lengths: Vec<f64>) -> Result<Self> {
        let n = link_lengths.len();
        let pi = std::f64::consts::PI;
        Self::new(link_lengths, vec![0.0; n], [0.0, 0.0], vec![[-pi, pi]; n])
    }

    pub fn n_joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn base(&self) -> Point2<f64> {
        Point2::new(self.base_position[0], self.base_position[1])
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if n == 0 {
            return Err(field_error("link_lengths", "arm needs at least one link"));
        }
        for (i, l) in self.link_lengths.iter().enumerate() {
            if !(*l > 0.0) || !l.is_finite() {
                return Err(field_error(
                    format!("link_lengths[{i}]"),
                    format!("link length must be positive, got {l}"),
                ));
            }
        }
        if self.link_radii.len() != n {
            return Err(field_error(
                "link_radii",
                format!("expected {n} radii, got {}", self.link_radii.len()),
            ));
        }
        for (i, r) in self.link_radii.iter().enumerate() {
            if !(*r >= 0.0) || !r.is_finite() {
                return Err(field_error(
                    format!("link_radii[{i}]"),
                    format!("link radius must be non-negative, got {r}"),
                ));
            }
        }
        if self.joint_limits.len() != n {
            return Err(field_error(
                "joint_limits",
                format!("expected {n} limit pairs, got {}", self.joint_limits.len()),
            ));
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(field_error(
                    format!("joint_limits[{i}]"),
                    format!("lower limit {lo} must be below upper limit {hi}"),
                ));
            }
        }
        if self.base_position.iter().any(|v| !v.is_finite()) {
            return Err(field_error("base_position", "non-finite coordinate"));
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub(crate) fn check_dims(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n_joints() {
            return Err(invalid(format!(
                "configuration has {} entries, arm has {} joints",
                q.len(),
                self.n_joints()
            )));
        }
        Ok(())
    }
}

/// Joint points of the chain: `points[0]` is the base, `points[n]` the end
/// effector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPoints {
    pub points: Vec<Point2<f64>>,
}

impl ChainPoints {
    pub fn end_effector(&self) -> Point2<f64> {
        *self.points.last().expect("chain always contains the base")
    }
}

pub fn forward_kinematics(q: &[f64], arm: &ArmSpec) -> Result<ChainPoints> {
    arm.check_dims(q)?;
    let mut points = Vec::with_capacity(q.len() + 1);
    let mut p = arm.base();
    let mut theta = 0.0;
    points.push(p);
    for (qi, li) in q.iter().zip(&arm.link_lengths) {
        theta += qi;
        p += Vector2::new(theta.cos(), theta.sin()) * *li;
        points.push(p);
    }
    Ok(ChainPoints { points })
}

/// End-effector position Jacobian, `2 × n`, in meters per radian.
pub fn jacobian(q: &[f64], arm: &ArmSpec) -> Result<DMatrix<f64>> {
    arm.check_dims(q)?;
    let n = q.len();
    // Column j sums the contributions of every link at or beyond joint j.
    let mut contrib = Vec::with_capacity(n);
    let mut theta = 0.0;
    for (qi, li) in q.iter().zip(&arm.link_lengths) {
        theta += qi;
        contrib.push(Vector2::new(-theta.sin(), theta.cos()) * *li);
    }
    let mut jac = DMatrix::zeros(2, n);
    let mut acc = Vector2::zeros();
    for j in (0..n).rev() {
        acc += contrib[j];
        jac[(0, j)] = acc[0];
        jac[(1, j)] = acc[1];
    }
    Ok(jac)
}

/// One capsule per link, spanning consecutive joint points.
pub fn link_capsules(q: &[f64], arm: &ArmSpec) -> Result<Vec<Capsule>> {
    let chain = forward_kinematics(q, arm)?;
    Ok(chain
        .points
        .windows(2)
        .zip(&arm.link_radii)
        .map(|(w, r)| Capsule::new(w[0], w[1], *r))
        .collect())
}

/// End-effector position observation `z = ee(q) + W n`, `n ~ N(0, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    #[serde(with = "crate::serde_mat::mat2")]
    pub noise_covariance: Matrix2<f64>,
    #[serde(with = "crate::serde_mat::mat2", default = "identity2")]
    pub noise_scaling: Matrix2<f64>,
}

fn identity2() -> Matrix2<f64> {
    Matrix2::identity()
}

impl ObservationModel {
    pub fn new(noise_covariance: Matrix2<f64>) -> Result<Self> {
        let model = Self {
            noise_covariance,
            noise_scaling: Matrix2::identity(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn isotropic(variance: f64) -> Self {
        Self {
            noise_covariance: Matrix2::identity() * variance,
            noise_scaling: Matrix2::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        linalg::check_psd2(&self.noise_covariance, COVARIANCE_TOL, "observation noise")?;
        if self.noise_scaling.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observation noise scaling has a non-finite entry"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn two_link() -> ArmSpec {
        ArmSpec::with_lengths(vec![1.0, 1.0]).unwrap()
    }

    fn close(a: Point2<f64>, x: f64, y: f64) -> bool {
        (a.x - x).abs() < 1e-12 && (a.y - y).abs() < 1e-12
    }

    #[test]
    fn forward_kinematics_examples() {
        let arm = two_link();
        assert!(close(
            forward_kinematics(&[0.0, 0.0], &arm)
                .unwrap()
                .end_effector(),
            2.0,
            0.0
        ));
        assert!(close(
            forward_kinematics(&[FRAC_PI_2, 0.0], &arm)
                .unwrap()
                .end_effector(),
            0.0,
            2.0
        ));
        assert!(close(
            forward_kinematics(&[FRAC_PI_2, -FRAC_PI_2], &arm)
                .unwrap()
                .end_effector(),
            1.0,
            1.0
        ));
        assert!(forward_kinematics(&[0.0], &arm).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let jac = jacobian(&[0.0, 0.0], &two_link()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 1.0]);
        assert!((jac - expected).norm() < 1e-12);

        let one = ArmSpec::with_lengths(vec![1.0]).unwrap();
        let jac = jacobian(&[FRAC_PI_2], &one).unwrap();
        assert!((jac[(0, 0)] + 1.0).abs() < 1e-12 && jac[(1, 0)].abs() < 1e-12);
        assert!(jacobian(&[0.0, 0.0, 0.0], &two_link()).is_err());
    }

    #[test]
    fn capsules_follow_chain() {
        let arm = ArmSpec::new(vec![1.0], vec![0.1], [0.0, 0.0], vec![[-PI, PI]]).unwrap();
        let caps = link_capsules(&[0.0], &arm).unwrap();
        assert_eq!(caps.len(), 1);
        assert!(close(caps[0].a, 0.0, 0.0) && close(caps[0].b, 1.0, 0.0));
        assert_eq!(caps[0].radius, 0.1);

        let arm3 = ArmSpec::with_lengths(vec![0.5, 0.4, 0.3]).unwrap();
        let q = [0.3, -0.7, 1.1];
        let caps = link_capsules(&q, &arm3).unwrap();
        let chain = forward_kinematics(&q, &arm3).unwrap();
        assert_eq!(caps.len(), 3);
        for (k, c) in caps.iter().enumerate() {
            assert_eq!(c.a, chain.points[k]);
            assert_eq!(c.b, chain.points[k + 1]);
        }
    }

    #[test]
    fn validation_names_fields() {
        let err = ArmSpec::new(vec![-1.0], vec![0.0], [0.0, 0.0], vec![[-1.0, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("link_lengths[0]"));
        let err = ArmSpec::new(vec![1.0], vec![-0.1], [0.0, 0.0], vec![[-1.0, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("link_radii[0]"));
        let err = ArmSpec::new(vec![1.0], vec![0.0], [0.0, 0.0], vec![[1.0, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("joint_limits[0]"));
    }

    fn fd_jacobian(q: &[f64], arm: &ArmSpec, h: f64) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(2, q.len());
        for j in 0..q.len() {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[j] += h;
            qm[j] -= h;
            let ep = forward_kinematics(&qp, arm).unwrap().end_effector();
            let em = forward_kinematics(&qm, arm).unwrap().end_effector();
            jac[(0, j)] = (ep.x - em.x) / (2.0 * h);
            jac[(1, j)] = (ep.y - em.y) / (2.0 * h);
        }
        jac
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn jacobian_matches_finite_differences(
            q in prop::collection::vec(-PI..PI, 1..6),
            base in prop::array::uniform2(-2.0..2.0f64),
        ) {
            let n = q.len();
            let lengths: Vec<f64> = (0..n).map(|i| 0.3 + 0.2 * i as f64).collect();
            let arm = ArmSpec::new(lengths, vec![0.0; n], base, vec![[-PI, PI]; n]).unwrap();
            let analytic = jacobian(&q, &arm).unwrap();
            let numeric = fd_jacobian(&q, &arm, 1e-5);
            prop_assert!((analytic - numeric).amax() < 1e-6);
        }

        #[test]
        fn reach_bounded_by_link_sum(q in prop::collection::vec(-PI..PI, 3)) {
            let arm = ArmSpec::new(vec![0.7, 0.5, 0.4], vec![0.0; 3], [0.3, -0.2], vec![[-PI, PI]; 3]).unwrap();
            let ee = forward_kinematics(&q, &arm).unwrap().end_effector();
            prop_assert!((ee - arm.base()).norm() <= arm.reach() + 1e-12);
        }

        #[test]
        fn jacobian_ignores_base(q in prop::collection::vec(-PI..PI, 2), bx in -5.0..5.0f64, by in -5.0..5.0f64) {
            let a = ArmSpec::new(vec![1.0, 0.5], vec![0.0; 2], [0.0, 0.0], vec![[-PI, PI]; 2]).unwrap();
            let b = ArmSpec { base_position: [bx, by], ..a.clone() };
            prop_assert_eq!(jacobian(&q, &a).unwrap(), jacobian(&q, &b).unwrap());
        }
    }
}
