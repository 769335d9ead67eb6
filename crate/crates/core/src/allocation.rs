//! Per-waypoint risk bounds and their reallocation.
//!
//! A joint chance constraint `Δ` is split into per-waypoint bounds `δ_i`
//! with `Σ δ_i ≤ Δ`, so that each waypoint can be checked on its own and the
//! union bound covers the whole trajectory. After a failed risk test, slack
//! is taken from inactive waypoints and handed to violated ones in
//! proportion to how badly each is violated.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Slack allowed on `Σ δ_i ≤ Δ`.
pub const SUM_TOL: f64 = 1e-12;

pub const DEFAULT_RATE: f64 = 0.5;

/// Default tolerance as a fraction of the uniform per-waypoint share.
pub const DEFAULT_TOLERANCE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAllocation {
    pub bounds: Vec<f64>,
    pub joint_bound: f64,
    pub tolerance: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStatus {
    Violated,
    Active,
    Inactive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub risks: Vec<f64>,
    pub classification: Vec<ConstraintStatus>,
    pub violation: bool,
}

impl RiskReport {
    pub fn violated(&self) -> impl Iterator<Item = usize> + '_ {
        self.classification
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == ConstraintStatus::Violated)
            .map(|(i, _)| i)
    }
}

/// Spreads `joint_bound` evenly over `waypoints`.
pub fn uniform_allocation(joint_bound: f64, waypoints: usize) -> Result<RiskAllocation> {
    if waypoints == 0 {
        return Err(invalid("risk allocation needs at least one waypoint"));
    }
    if !(joint_bound > 0.0 && joint_bound < 1.0) {
        return Err(invalid(format!(
            "joint chance constraint must lie in (0, 1), got {joint_bound}"
        )));
    }
    let share = joint_bound / waypoints as f64;
    Ok(RiskAllocation {
        bounds: vec![share; waypoints],
        joint_bound,
        tolerance: DEFAULT_TOLERANCE_FRACTION * share,
        rate: DEFAULT_RATE,
    })
}

impl RiskAllocation {
    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0) {
            return Err(invalid(format!(
                "risk tolerance must be non-negative, got {tolerance}"
            )));
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    pub fn with_rate(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid(format!(
                "reallocation rate must lie in [0, 1), got {rate}"
            )));
        }
        self.rate = rate;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.bounds.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.joint_bound > 0.0 && self.joint_bound < 1.0) {
            return Err(invalid("joint chance constraint must lie in (0, 1)"));
        }
        if self.bounds.iter().any(|d| !(*d >= 0.0)) {
            return Err(invalid("risk bounds must be non-negative"));
        }
        if self.total() > self.joint_bound + SUM_TOL {
            return Err(invalid(format!(
                "risk bounds sum to {} which exceeds {}",
                self.total(),
                self.joint_bound
            )));
        }
        Ok(())
    }

    fn classify(&self, risk: f64, bound: f64) -> ConstraintStatus {
        if risk > bound {
            ConstraintStatus::Violated
        } else if bound - risk > self.tolerance {
            ConstraintStatus::Inactive
        } else {
            ConstraintStatus::Active
        }
    }
}

fn clamp_risks(risks: &[f64], allocation: &RiskAllocation) -> Result<Vec<f64>> {
    if risks.len() != allocation.len() {
        return Err(invalid(format!(
            "{} risks for {} bounds",
            risks.len(),
            allocation.len()
        )));
    }
    Ok(risks.iter().map(|r| r.clamp(0.0, 1.0)).collect())
}

/// Classifies every waypoint as violated, active or inactive.
pub fn risk_test(risks: &[f64], allocation: &RiskAllocation) -> Result<RiskReport> {
    let risks = clamp_risks(risks, allocation)?;
    let classification: Vec<_> = risks
        .iter()
        .zip(&allocation.bounds)
        .map(|(r, d)| allocation.classify(*r, *d))
        .collect();
    let violation = classification.contains(&ConstraintStatus::Violated);
    Ok(RiskReport {
        risks,
        classification,
        violation,
    })
}

/// Moves risk from inactive waypoints to violated ones.
///
/// Inactive bounds shrink to `α δ_i + (1 − α) r_i`; the freed residual
/// `Δ − Σ δ_new` is split across violated waypoints in proportion to their
/// excess `r_i − δ_i`.
pub fn reallocate(risks: &[f64], allocation: &RiskAllocation) -> Result<RiskAllocation> {
    let risks = clamp_risks(risks, allocation)?;
    let alpha = allocation.rate;
    let status: Vec<_> = risks
        .iter()
        .zip(&allocation.bounds)
        .map(|(r, d)| allocation.classify(*r, *d))
        .collect();

    let mut bounds: Vec<f64> = risks
        .iter()
        .zip(&allocation.bounds)
        .zip(&status)
        .map(|((r, d), s)| match s {
            ConstraintStatus::Inactive => alpha * d + (1.0 - alpha) * r,
            _ => *d,
        })
        .collect();

    let violated: Vec<usize> = (0..status.len())
        .filter(|&i| status[i] == ConstraintStatus::Violated)
        .collect();
    if violated.is_empty() {
        return Err(Error::InvalidState(
            "reallocation requested without a violated constraint".into(),
        ));
    }
    let total_violation: f64 = violated
        .iter()
        .map(|&i| risks[i] - allocation.bounds[i])
        .sum();
    if !(total_violation > 0.0) {
        return Err(Error::InvalidState("total violation is zero".into()));
    }

    let residual = allocation.joint_bound - bounds.iter().sum::<f64>();
    for &i in &violated {
        bounds[i] =
            allocation.bounds[i] + residual * (risks[i] - allocation.bounds[i]) / total_violation;
    }
    Ok(RiskAllocation {
        bounds,
        ..allocation.clone()
    })
}
