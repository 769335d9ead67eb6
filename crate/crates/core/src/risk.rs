//! Per-waypoint collision probability.
//!
//! The primary estimator integrates the binary collision function against a
//! Gaussian configuration belief with a tensor-product Gauss–Hermite rule.
//! Beliefs are first rotated into their covariance eigenbasis so that the
//! integration dimensions are independent; each dimension then uses the
//! change of variables `x = μ + √2 σ y` and the whole grid is normalized by
//! `π^{−d/2}`. A plain Monte Carlo estimator is kept as an oracle.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::collision::{in_collision, Environment};
use crate::error::{invalid, Result};
use crate::linalg;
use crate::lqg::{GaussianBelief, BELIEF_TOL};

pub const MAX_HERMITE_NODES: usize = 30;

/// Node count used inside the planning loop.
pub const PLANNING_NODES: usize = 3;
/// Node count used for reported, validation-grade estimates.
pub const VALIDATION_NODES: usize = 9;

/// Gauss–Hermite rule for `∫ e^{−y²} h(y) dy`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| w * h(*y))
            .sum()
    }
}

/// Physicists' Hermite polynomials `(H_n(y), H_{n−1}(y))` by the three-term
/// recurrence `H_{k+1} = 2y H_k − 2k H_{k−1}`.
fn hermite_pair(n: usize, y: f64) -> (f64, f64) {
    let mut prev = 1.0;
    if n == 0 {
        return (prev, 0.0);
    }
    let mut cur = 2.0 * y;
    for k in 1..n {
        let next = 2.0 * y * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Roots of `H_n` with weights `w_j = 2^{n−1} n! √π / (n² H_{n−1}(y_j)²)`.
///
/// Initial roots come from the symmetric Jacobi matrix of the Hermite
/// recurrence and are polished by Newton's method on `H_n`.
pub fn hermite_rule(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_HERMITE_NODES {
        return Err(invalid(format!(
            "Gauss-Hermite node count must be in 1..={MAX_HERMITE_NODES}, got {n}"
        )));
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut roots: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    roots.sort_by(f64::total_cmp);
    for y in roots.iter_mut() {
        for _ in 0..8 {
            let (h, h_prev) = hermite_pair(n, *y);
            // H_n' = 2n H_{n−1}
            let step = h / (2.0 * n as f64 * h_prev);
            *y -= step;
            if step.abs() < 1e-16 * y.abs().max(1.0) {
                break;
            }
        }
    }
    // Enforce exact mirror symmetry about zero.
    for i in 0..n / 2 {
        let r = 0.5 * (roots[n - 1 - i] - roots[i]);
        roots[i] = -r;
        roots[n - 1 - i] = r;
    }
    if n % 2 == 1 {
        roots[n / 2] = 0.0;
    }

    let log_numer = (n as f64 - 1.0) * 2f64.ln() + ln_factorial(n) + 0.5 * PI.ln();
    let mut weights: Vec<f64> = roots
        .iter()
        .map(|&y| {
            let (_, h_prev) = hermite_pair(n, y);
            (log_numer - 2.0 * (n as f64).ln() - 2.0 * h_prev.abs().ln()).exp()
        })
        .collect();
    for i in 0..n / 2 {
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(QuadratureRule {
        nodes: roots,
        weights,
    })
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Expectation of `f` under a Gaussian belief by tensor-product quadrature
/// in the covariance eigenbasis.
pub fn gaussian_expectation(
    belief: &GaussianBelief,
    nodes_per_dim: usize,
    f: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    linalg::check_psd(&belief.covariance, BELIEF_TOL, "belief covariance")?;
    let rule = hermite_rule(nodes_per_dim)?;
    let (values, vectors) = linalg::sorted_eigen(&belief.covariance);
    Ok(expectation_in_basis(
        &belief.mean,
        &values,
        &vectors,
        &rule,
        f,
    ))
}

/// Tensor-product rule over the directions `vectors[:, k]` with variances
/// `values[k]`. Directions with zero variance contribute only the mean.
pub fn expectation_in_basis(
    mean: &DVector<f64>,
    values: &[f64],
    vectors: &DMatrix<f64>,
    rule: &QuadratureRule,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let dim = mean.len();
    // Scaled axis √2·σ_k·v_k for every direction that carries variance.
    let axes: Vec<DVector<f64>> = values
        .iter()
        .enumerate()
        .filter(|(_, &lambda)| lambda > linalg::EIGEN_CLAMP)
        .map(|(k, &lambda)| vectors.column(k) * (2.0 * lambda).sqrt())
        .collect();
    let d = axes.len();
    let m = rule.len();
    let norm = PI.powf(-(d as f64) / 2.0);

    let mut index = vec![0usize; d];
    let mut point = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut weight = norm;
        point.copy_from_slice(mean.as_slice());
        for (axis, &j) in axes.iter().zip(&index) {
            weight *= rule.weights[j];
            let y = rule.nodes[j];
            for (p, a) in point.iter_mut().zip(axis.iter()) {
                *p += a * y;
            }
        }
        total += weight * f(&point);

        // Odometer increment, last axis fastest.
        let mut k = d;
        loop {
            if k == 0 {
                return total;
            }
            k -= 1;
            index[k] += 1;
            if index[k] < m {
                break;
            }
            index[k] = 0;
        }
    }
}

/// Probability that a configuration drawn from `belief` is in collision,
/// by Gauss–Hermite quadrature, clamped to `[0, 1]`.
pub fn collision_probability_quadrature(
    belief: &GaussianBelief,
    env: &Environment,
    nodes_per_dim: usize,
) -> Result<f64> {
    if belief.dim() != env.n_joints() {
        return Err(invalid("belief dimension does not match the arm"));
    }
    let p = gaussian_expectation(belief, nodes_per_dim, |q| {
        if in_collision(q, env) {
            1.0
        } else {
            0.0
        }
    })?;
    Ok(p.clamp(0.0, 1.0))
}

/// Fraction of `samples` Gaussian draws that are in collision.
pub fn collision_probability_monte_carlo<R: Rng + ?Sized>(
    belief: &GaussianBelief,
    env: &Environment,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(invalid("Monte Carlo estimate needs at least one sample"));
    }
    if belief.dim() != env.n_joints() {
        return Err(invalid("belief dimension does not match the arm"));
    }
    let factor = linalg::psd_factor(&belief.covariance);
    let mut hits = 0usize;
    for _ in 0..samples {
        let q = &belief.mean + linalg::sample_gaussian(&factor, rng);
        if in_collision(q.as_slice(), env) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}

/// Quadrature risk at every belief, computed in parallel when enabled.
pub fn waypoint_risks(
    beliefs: &[GaussianBelief],
    env: &Environment,
    nodes_per_dim: usize,
) -> Result<Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        beliefs
            .par_iter()
            .map(|b| collision_probability_quadrature(b, env, nodes_per_dim))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        beliefs
            .iter()
            .map(|b| collision_probability_quadrature(b, env, nodes_per_dim))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::Obstacle;
    use crate::kinematics::ArmSpec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_moment(k: u32) -> f64 {
        // ∫ e^{−y²} y^k dy = Γ((k+1)/2) for even k, zero for odd k.
        if k % 2 == 1 {
            return 0.0;
        }
        let mut g = PI.sqrt(); // Γ(1/2)
        let mut a = 0.5;
        while a < (k as f64 + 1.0) / 2.0 - 1e-9 {
            g *= a;
            a += 1.0;
        }
        g
    }

    #[test]
    fn small_rules_by_hand() {
        let r1 = hermite_rule(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - PI.sqrt()).abs() < 1e-14);

        let r2 = hermite_rule(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((r2.nodes[0] + s).abs() < 1e-15 && (r2.nodes[1] - s).abs() < 1e-15);
        for w in &r2.weights {
            assert!((w - PI.sqrt() / 2.0).abs() < 1e-14);
        }

        let r5 = hermite_rule(5).unwrap();
        assert!((r5.integrate(|y| y * y) - PI.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn node_count_bounds() {
        assert!(hermite_rule(0).is_err());
        assert!(hermite_rule(31).is_err());
        assert!(hermite_rule(30).is_ok());
    }

    #[test]
    fn rules_are_symmetric_and_normalized() {
        for n in 1..=MAX_HERMITE_NODES {
            let r = hermite_rule(n).unwrap();
            assert!(r.weights.iter().all(|w| *w > 0.0));
            assert!(
                (r.weights.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-12,
                "n={n}"
            );
            for i in 0..n {
                assert!((r.nodes[i] + r.nodes[n - 1 - i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for n in 1..=12 {
            let r = hermite_rule(n).unwrap();
            for k in 0..(2 * n as u32) {
                let est = r.integrate(|y| y.powi(k as i32));
                let scale = r
                    .integrate(|y| y.abs().powi(k as i32))
                    .max(gaussian_moment(k));
                assert!(
                    (est - gaussian_moment(k)).abs() <= 1e-9 * scale,
                    "n={n} k={k}"
                );
            }
        }
    }

    fn threshold_env() -> Environment {
        // Half-plane above y = sin(0.1): a unit link collides iff q > 0.1.
        Environment::new(
            ArmSpec::with_lengths(vec![1.0]).unwrap(),
            vec![Obstacle::HalfPlane {
                normal: [0.0, -1.0],
                offset: -(0.1f64).sin(),
            }],
        )
        .unwrap()
    }

    fn scalar_belief(mu: f64, sigma: f64) -> GaussianBelief {
        GaussianBelief::new(
            DVector::from_vec(vec![mu]),
            DMatrix::from_element(1, 1, sigma * sigma),
        )
        .unwrap()
    }

    #[test]
    fn empty_environment_has_zero_risk() {
        let env = Environment::free(ArmSpec::with_lengths(vec![1.0, 1.0]).unwrap());
        let b = GaussianBelief::new(
            DVector::from_vec(vec![0.2, 0.1]),
            DMatrix::identity(2, 2) * 0.01,
        )
        .unwrap();
        assert_eq!(collision_probability_quadrature(&b, &env, 9).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            collision_probability_monte_carlo(&b, &env, 1000, &mut rng).unwrap(),
            0.0
        );
    }

    #[test]
    fn deep_penetration_is_certain() {
        let env = threshold_env();
        assert_eq!(
            collision_probability_quadrature(&scalar_belief(1.0, 1e-6), &env, 9).unwrap(),
            1.0
        );
    }

    #[test]
    fn monte_carlo_matches_gaussian_tail() {
        let env = threshold_env();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p =
            collision_probability_monte_carlo(&scalar_belief(0.0, 0.1), &env, 100_000, &mut rng)
                .unwrap();
        assert!((p - 0.158_655_253_931_457).abs() < 0.01, "p = {p}");
    }

    #[test]
    fn single_sample_is_binary() {
        let env = threshold_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = collision_probability_monte_carlo(&scalar_belief(0.1, 0.1), &env, 1, &mut rng)
                .unwrap();
            assert!(p == 0.0 || p == 1.0);
        }
        assert!(
            collision_probability_monte_carlo(&scalar_belief(0.1, 0.1), &env, 0, &mut rng).is_err()
        );
    }

    #[test]
    fn non_psd_belief_rejected() {
        let b = GaussianBelief {
            mean: DVector::from_vec(vec![0.0, 0.0]),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        let env = Environment::free(ArmSpec::with_lengths(vec![1.0, 1.0]).unwrap());
        assert!(collision_probability_quadrature(&b, &env, 3).is_err());
    }

    #[test]
    fn degenerate_directions_use_the_mean() {
        let b = GaussianBelief::new(
            DVector::from_vec(vec![0.3, -0.2]),
            DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let mut calls = 0;
        let total = gaussian_expectation(&b, 5, |q| {
            calls += 1;
            assert_eq!(q[1], -0.2);
            1.0
        })
        .unwrap();
        assert_eq!(calls, 5);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_order_and_sign_do_not_matter() {
        let env = Environment::new(
            ArmSpec::with_lengths(vec![1.0, 0.8]).unwrap(),
            vec![Obstacle::circle([1.2, 0.9], 0.3)],
        )
        .unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[0.05, 0.02, 0.02, 0.03]);
        let mean = DVector::from_vec(vec![0.4, 0.3]);
        let (values, vectors) = linalg::sorted_eigen(&cov);
        let rule = hermite_rule(7).unwrap();
        let indicator = |q: &[f64]| if in_collision(q, &env) { 1.0 } else { 0.0 };
        let base = expectation_in_basis(&mean, &values, &vectors, &rule, indicator);

        let swapped_values = vec![values[1], values[0]];
        let mut swapped = DMatrix::zeros(2, 2);
        swapped.set_column(0, &(-vectors.column(1)));
        swapped.set_column(1, &vectors.column(0));
        let other = expectation_in_basis(&mean, &swapped_values, &swapped, &rule, indicator);
        assert!((base - other).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn constant_integrand_is_normalized(
            d in 1usize..=4,
            nodes in 1usize..=6,
            entries in prop::collection::vec(-1.0..1.0f64, 16),
            mean in prop::collection::vec(-1.0..1.0f64, 4),
        ) {
            let a = DMatrix::from_fn(d, d, |i, j| entries[i * 4 + j]);
            let cov = &a * a.transpose();
            let b = GaussianBelief::new(DVector::from_column_slice(&mean[..d]), cov).unwrap();
            let total = gaussian_expectation(&b, nodes, |_| 1.0).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn quadrature_stays_in_unit_interval(
            mu in prop::collection::vec(-1.5..1.5f64, 2),
            s in 0.01..0.5f64,
            c in prop::array::uniform2(-1.5..1.5f64),
            nodes in 1usize..=9,
        ) {
            let env = Environment::new(
                ArmSpec::with_lengths(vec![1.0, 0.7]).unwrap(),
                vec![Obstacle::circle(c, 0.3)],
            ).unwrap();
            let b = GaussianBelief::new(DVector::from_vec(mu), DMatrix::identity(2, 2) * s * s).unwrap();
            let p = collision_probability_quadrature(&b, &env, nodes).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
