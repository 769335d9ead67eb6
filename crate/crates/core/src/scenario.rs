//! Scenario files: one TOML document describing an arm, its obstacles, the
//! noise acting on it, a start/goal query, planner settings and the
//! validation protocol.
//!
//! Loading fills every default and validates every section, so the
//! scenario echoed by [`Scenario::to_toml`] is exactly what was run.

use std::path::Path;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::collision::{Environment, Obstacle, DEFAULT_EDGE_SUBSTEPS};
use crate::dynamics::ProcessNoiseModel;
use crate::error::{field_error, Error, Result};
use crate::execution::{ExecutionSettings, ObservationMode, ValidationConfig};
use crate::kinematics::{ArmSpec, ObservationModel};
use crate::lqg::NoiseModel;
use crate::planner::PlannerParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub runs: usize,
    pub base_seed: u64,
    pub observation: ObservationMode,
    pub edge_substeps: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            runs: 100,
            base_seed: 0,
            observation: ObservationMode::default(),
            edge_substeps: DEFAULT_EDGE_SUBSTEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub arm: ArmSpec,
    pub obstacles: Vec<Obstacle>,
    pub noise: NoiseModel,
    pub query: Query,
    pub planner: PlannerParams,
    pub validation: ValidationSection,
}

/// Noise as written in a file: either variance shorthands or full blocks,
/// never both for the same source.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawNoise {
    process_variance: Option<f64>,
    observation_variance: Option<f64>,
    initial_variance: Option<f64>,
    process: Option<ProcessNoiseModel>,
    process_schedule: Vec<ProcessNoiseModel>,
    observation: Option<ObservationModel>,
    initial_covariance: Option<Vec<[[f64; 2]; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: Option<u32>,
    name: Option<String>,
    #[serde(default)]
    description: String,
    arm: ArmSpec,
    #[serde(default)]
    obstacles: Vec<Obstacle>,
    #[serde(default)]
    noise: RawNoise,
    query: Query,
    #[serde(default)]
    planner: PlannerParams,
    #[serde(default)]
    validation: ValidationSection,
}

fn either<T>(
    field: &str,
    shorthand: Option<f64>,
    full: Option<T>,
    from_variance: impl Fn(f64) -> T,
    zero: T,
) -> Result<T> {
    match (shorthand, full) {
        (Some(_), Some(_)) => Err(field_error(
            format!("noise.{field}"),
            format!("give either `{field}_variance` or `{field}`, not both"),
        )),
        (Some(v), None) => {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(field_error(
                    format!("noise.{field}_variance"),
                    format!("must be a non-negative number, got {v}"),
                ));
            }
            Ok(from_variance(v))
        }
        (None, Some(m)) => Ok(m),
        (None, None) => Ok(zero),
    }
}

impl RawNoise {
    fn resolve(self, n: usize) -> Result<NoiseModel> {
        let process = either(
            "process",
            self.process_variance,
            self.process,
            |v| ProcessNoiseModel::isotropic(n, v),
            ProcessNoiseModel::zero(n),
        )?;
        let observation = either(
            "observation",
            self.observation_variance,
            self.observation,
            ObservationModel::isotropic,
            ObservationModel::isotropic(0.0),
        )?;
        let initial_covariance = either(
            "initial_covariance",
            self.initial_variance,
            self.initial_covariance.map(|blocks| {
                blocks
                    .iter()
                    .map(|b| Matrix2::new(b[0][0], b[0][1], b[1][0], b[1][1]))
                    .collect()
            }),
            |v| vec![Matrix2::identity() * v; n],
            vec![Matrix2::zeros(); n],
        )
        .map_err(|e| match e {
            Error::Validation { field, message } => Error::Validation {
                field: field.replace("initial_covariance_variance", "initial_variance"),
                message: message.replace("initial_covariance_variance", "initial_variance"),
            },
            other => other,
        })?;
        Ok(NoiseModel {
            process,
            process_schedule: self.process_schedule,
            observation,
            initial_covariance,
        })
    }
}

/// Re-labels a validation error so its field is qualified by `section`.
fn in_section(section: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{section}.{field}"),
            message,
        },
        Error::InvalidArgument(message) => Error::Validation {
            field: section.to_string(),
            message,
        },
        other => other,
    }
}

impl Scenario {
    /// Parses and validates a scenario document. `origin` names the source
    /// in error messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        match raw.schema_version {
            None => {
                return Err(field_error(
                    "schema_version",
                    "missing; this reader expects 1",
                ))
            }
            Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(field_error(
                    "schema_version",
                    format!("unsupported version {v}; this reader expects {SCHEMA_VERSION}"),
                ))
            }
        }
        raw.arm.validate().map_err(|e| in_section("arm", e))?;
        let n = raw.arm.n_joints();
        let noise = raw.noise.resolve(n)?;
        let scenario = Scenario {
            schema_version: SCHEMA_VERSION,
            name: raw.name.unwrap_or_else(|| "scenario".into()),
            description: raw.description,
            arm: raw.arm,
            obstacles: raw.obstacles,
            noise,
            query: raw.query,
            planner: raw.planner.resolved(),
            validation: raw.validation,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '"', '\n', '/', '\\']) {
            return Err(field_error(
                "name",
                "must be non-empty without commas, quotes, slashes or newlines",
            ));
        }
        self.arm.validate().map_err(|e| in_section("arm", e))?;
        self.environment()?;
        let n = self.arm.n_joints();
        self.noise.validate(n).map_err(|e| in_section("noise", e))?;
        for (field, q) in [
            ("query.start", &self.query.start),
            ("query.goal", &self.query.goal),
        ] {
            if q.len() != n {
                return Err(field_error(
                    field,
                    format!("expected {n} joint values, got {}", q.len()),
                ));
            }
            if let Some(j) = q.iter().position(|v| !v.is_finite()) {
                return Err(field_error(format!("{field}[{j}]"), "not a finite number"));
            }
            if !self.arm.within_limits(q) {
                return Err(field_error(field, "outside the joint limits"));
            }
        }
        self.planner.validate()?;
        if self.validation.runs == 0 {
            return Err(field_error("validation.runs", "must be at least 1"));
        }
        if self.validation.edge_substeps == 0 {
            return Err(field_error(
                "validation.edge_substeps",
                "must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<Environment> {
        Environment::new(self.arm.clone(), self.obstacles.clone()).map_err(|e| match e {
            Error::Validation { field, message } if field.starts_with("obstacles") => {
                Error::Validation { field, message }
            }
            other => in_section("arm", other),
        })
    }

    pub fn validation_config(&self) -> ValidationConfig {
        ValidationConfig {
            runs: self.validation.runs,
            base_seed: self.validation.base_seed,
            chance_constraint: self.planner.chance_constraint,
            execution: ExecutionSettings {
                observation: self.validation.observation,
                edge_substeps: self.validation.edge_substeps,
            },
        }
    }

    /// Serializes every effective value.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::InvalidState(format!("cannot serialize scenario: {e}")))
    }

    /// Applies command-line overrides and re-validates.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.validation.base_seed = seed;
        }
        if let Some(runs) = o.runs {
            self.validation.runs = runs;
        }
        if let Some(nodes) = o.nodes_per_dim {
            self.planner.nodes_per_dim = nodes;
        }
        if let Some(iters) = o.max_iterations {
            self.planner.max_iterations = iters;
        }
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub nodes_per_dim: Option<usize>,
    pub max_iterations: Option<usize>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[arm]
link_lengths = [1.0]
link_radii = [0.05]
joint_limits = [[-3.0, 3.0]]

[query]
start = [0.0]
goal = [1.0]
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml_str(MINIMAL, "minimal").unwrap();
        assert_eq!(s.planner.dt, 0.1);
        assert_eq!(s.planner.horizon, 30);
        assert_eq!(s.planner.chance_constraint, 0.1);
        assert_eq!(s.planner.risk_rate, 0.5);
        assert_eq!(s.planner.hit_in_distances, vec![0.0; 31]);
        assert!(s.obstacles.is_empty());
        assert_eq!(s.validation.runs, 100);
        assert_eq!(s.noise, NoiseModel::zero(1));
    }

    #[test]
    fn round_trip() {
        let text = MINIMAL.replace(
            "[query]",
            "[noise]\nprocess_variance = 1e-4\nobservation_variance = 2e-4\n\n[[obstacles]]\nkind = \"circle\"\ncenter = [0.5, 0.5]\nradius = 0.1\n\n[query]",
        );
        let s = Scenario::from_toml_str(&text, "t").unwrap();
        let echoed = s.to_toml().unwrap();
        let again = Scenario::from_toml_str(&echoed, "echo").unwrap();
        assert_eq!(s, again);
        assert_eq!(echoed, again.to_toml().unwrap());
    }

    #[test]
    fn negative_link_length_names_the_field() {
        let text = MINIMAL.replace("link_lengths = [1.0]", "link_lengths = [-1.0]");
        let err = Scenario::from_toml_str(&text, "t").unwrap_err();
        assert!(err.to_string().contains("link_lengths[0]"), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = Scenario::from_toml_str("schema_version = 1\n[arm\n", "broken.toml").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let msg = err.to_string();
        assert!(
            msg.contains("broken.toml") && msg.contains("line 2"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_and_conflicting_fields_rejected() {
        let typo = MINIMAL.replace("[query]", "[planner]\nhorizn = 20\n\n[query]");
        assert!(Scenario::from_toml_str(&typo, "t").is_err());
        let both = MINIMAL.replace(
            "[query]",
            "[noise]\nprocess_variance = 1e-4\n[noise.process]\nper_joint_covariance = [[[1e-4, 0.0], [0.0, 1e-4]]]\n\n[query]",
        );
        let err = Scenario::from_toml_str(&both, "t").unwrap_err();
        assert!(err.to_string().contains("noise.process"), "{err}");
    }

    #[test]
    fn schema_version_required() {
        let err =
            Scenario::from_toml_str(&MINIMAL.replace("schema_version = 1", ""), "t").unwrap_err();
        assert!(err.to_string().contains("schema_version"));
        let err = Scenario::from_toml_str(
            &MINIMAL.replace("schema_version = 1", "schema_version = 7"),
            "t",
        )
        .unwrap_err();
        assert!(err.to_string().contains("unsupported"));
    }

    #[test]
    fn query_checked_against_arm() {
        let err =
            Scenario::from_toml_str(&MINIMAL.replace("goal = [1.0]", "goal = [1.0, 2.0]"), "t")
                .unwrap_err();
        assert!(err.to_string().contains("query.goal"));
        let err = Scenario::from_toml_str(&MINIMAL.replace("goal = [1.0]", "goal = [3.5]"), "t")
            .unwrap_err();
        assert!(err.to_string().contains("query.goal"));
    }

    #[test]
    fn overrides_apply() {
        let s = Scenario::from_toml_str(MINIMAL, "t").unwrap();
        let o = Overrides {
            seed: Some(9),
            runs: Some(5),
            nodes_per_dim: Some(4),
            max_iterations: Some(3),
        };
        let s = s.with_overrides(&o).unwrap();
        assert_eq!(s.validation.base_seed, 9);
        assert_eq!(s.validation.runs, 5);
        assert_eq!(s.planner.nodes_per_dim, 4);
        assert_eq!(s.planner.max_iterations, 3);
        let bad = Overrides {
            nodes_per_dim: Some(0),
            ..Default::default()
        };
        assert!(Scenario::from_toml_str(MINIMAL, "t")
            .unwrap()
            .with_overrides(&bad)
            .is_err());
    }
}
