//! Browser bindings for the planner demo. Every export takes plain numbers
//! or TOML text and returns JSON; the Rust-side functions with the same
//! names minus the `js_` prefix are usable natively.

use ccplan::collision::{Environment, Obstacle};
use ccplan::experiment::{run_experiment, ExperimentOptions};
use ccplan::kinematics::ArmSpec;
use ccplan::lqg::GaussianBelief;
use ccplan::report::{trajectory_svg, Figure};
use ccplan::risk::{
    collision_probability_monte_carlo, collision_probability_quadrature, hermite_rule,
};
use ccplan::scenario::Scenario;
use ccplan::Result;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const EXAMPLE_SCENARIO: &str = include_str!("../../../scenarios/two_link_circle_01.toml");

#[derive(Debug, Serialize)]
pub struct RuleSummary {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub weight_sum: f64,
}

pub fn gauss_hermite(n: usize) -> Result<RuleSummary> {
    let rule = hermite_rule(n)?;
    let weight_sum = rule.weights.iter().sum();
    Ok(RuleSummary {
        nodes: rule.nodes,
        weights: rule.weights,
        weight_sum,
    })
}

#[derive(Debug, Serialize)]
pub struct RiskComparison {
    /// Quadrature estimate for 1..=12 nodes.
    pub quadrature: Vec<f64>,
    pub monte_carlo: f64,
    pub samples: usize,
}

/// A unit link against a half-plane it enters once `q > threshold`, with
/// belief `N(0, sigma²)`.
pub fn threshold_risk(
    sigma: f64,
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Result<RiskComparison> {
    let env = Environment::new(
        ArmSpec::with_lengths(vec![1.0])?,
        vec![Obstacle::HalfPlane {
            normal: [0.0, -1.0],
            offset: -threshold.sin(),
        }],
    )?;
    let belief = GaussianBelief::new(
        DVector::from_vec(vec![0.0]),
        DMatrix::from_element(1, 1, sigma * sigma),
    )?;
    let quadrature = (1..=12)
        .map(|n| collision_probability_quadrature(&belief, &env, n))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let monte_carlo = collision_probability_monte_carlo(&belief, &env, samples, &mut rng)?;
    Ok(RiskComparison {
        quadrature,
        monte_carlo,
        samples,
    })
}

#[derive(Debug, Serialize)]
pub struct VariantSummary {
    pub status: String,
    pub continuous_rate: Option<f64>,
    pub discrete_rate: Option<f64>,
    pub path_length_rad: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct DemoPlan {
    pub scenario: String,
    pub pchekov: VariantSummary,
    pub baseline: VariantSummary,
    pub risk_reduction: Option<f64>,
    pub risks: Vec<f64>,
    pub bounds: Vec<f64>,
    pub iterations: usize,
    pub svg: String,
}

/// Plans and validates a scenario after scaling its noise and replacing its
/// chance constraint and run count.
pub fn plan_demo(
    toml: &str,
    noise_scale: f64,
    chance_constraint: f64,
    runs: usize,
) -> Result<DemoPlan> {
    let mut s = Scenario::from_toml_str(toml, "scenario")?;
    s.noise = s.noise.scaled(noise_scale);
    s.planner.chance_constraint = chance_constraint;
    s.validation.runs = runs;
    s.validate()?;
    let report = run_experiment(&s, &ExperimentOptions::default())?;
    let env = s.environment()?;
    let svg = trajectory_svg(&Figure {
        title: &s.name,
        env: &env,
        trajectory: report.pchekov.trajectory.as_ref(),
        beliefs: &report.pchekov.beliefs,
        baseline: report.baseline.trajectory.as_ref(),
    })?;
    let rows = report.rows();
    let summary = |i: usize| VariantSummary {
        status: rows[i].status.clone(),
        continuous_rate: rows[i].continuous_rate,
        discrete_rate: rows[i].discrete_rate,
        path_length_rad: rows[i].path_length_rad,
    };
    Ok(DemoPlan {
        scenario: s.name.clone(),
        pchekov: summary(0),
        baseline: summary(1),
        risk_reduction: report.risk_reduction(),
        risks: report.plan.risks.clone(),
        bounds: report
            .plan
            .allocation
            .as_ref()
            .map(|a| a.bounds.clone())
            .unwrap_or_default(),
        iterations: report.plan.iterations_used,
        svg,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn example_scenario() -> String {
    EXAMPLE_SCENARIO.to_string()
}

#[wasm_bindgen]
pub fn js_gauss_hermite(n: usize) -> std::result::Result<String, JsError> {
    to_js(gauss_hermite(n))
}

#[wasm_bindgen]
pub fn js_threshold_risk(
    sigma: f64,
    threshold: f64,
    samples: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(threshold_risk(sigma, threshold, samples, seed.into()))
}

#[wasm_bindgen]
pub fn js_plan_demo(
    toml: &str,
    noise_scale: f64,
    chance_constraint: f64,
    runs: usize,
) -> std::result::Result<String, JsError> {
    to_js(plan_demo(toml, noise_scale, chance_constraint, runs))
}
