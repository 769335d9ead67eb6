//! CSV and SVG renderings of plans and experiments.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so the
//! same inputs always give the same bytes and trajectories read back
//! exactly.

use std::fmt::Write as _;

use nalgebra::{Matrix2, SymmetricEigen};

use crate::collision::{Environment, Obstacle};
use crate::dynamics::{ControlInput, JointState};
use crate::error::{invalid, Error, Result};
use crate::kinematics::{forward_kinematics, jacobian};
use crate::lqg::GaussianBelief;
use crate::trajectory::NominalTrajectory;

pub const RESULTS_HEADER: &str = "scenario,variant,status,planning_time_s,path_length_rad,discrete_rate,continuous_rate,satisfied_discrete,satisfied_continuous,risk_reduction";
pub const RISKS_HEADER: &str = "waypoint,risk,allocated,hit_in_distance";
pub const VALIDATION_HEADER: &str =
    "runs,discrete_collisions,continuous_collisions,discrete_rate,continuous_rate,satisfied_discrete,satisfied_continuous";

/// Formats a float for CSV: plain decimal in the usual range, scientific
/// notation for very small or large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "NA".into())
}

/// One results row. Every field is pre-formatted except the scenario and
/// variant names.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub variant: String,
    pub status: String,
    pub planning_time_s: Option<f64>,
    pub path_length_rad: Option<f64>,
    pub discrete_rate: Option<f64>,
    pub continuous_rate: Option<f64>,
    pub satisfied_discrete: Option<bool>,
    pub satisfied_continuous: Option<bool>,
    pub risk_reduction: Option<f64>,
}

fn opt_bool(b: Option<bool>) -> String {
    b.map(|b| b.to_string()).unwrap_or_else(|| "NA".into())
}

fn csv_text(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let fail = |e: csv::Error| Error::InvalidState(format!("csv encoding failed: {e}"));
    w.write_record(header.split(',')).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidState(format!("csv encoding failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidState(e.to_string()))
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    csv_text(
        RESULTS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.scenario.clone(),
                r.variant.clone(),
                r.status.clone(),
                opt_num(r.planning_time_s),
                opt_num(r.path_length_rad),
                opt_num(r.discrete_rate),
                opt_num(r.continuous_rate),
                opt_bool(r.satisfied_discrete),
                opt_bool(r.satisfied_continuous),
                opt_num(r.risk_reduction),
            ]
        }),
    )
}

pub fn risks_csv(risks: &[f64], allocated: &[f64], hit_in: &[f64]) -> Result<String> {
    if risks.len() != allocated.len() || risks.len() != hit_in.len() {
        return Err(invalid(
            "risk, allocation and hit-in vectors differ in length",
        ));
    }
    csv_text(
        RISKS_HEADER,
        (0..risks.len()).map(|i| {
            vec![
                i.to_string(),
                num(risks[i]),
                num(allocated[i]),
                num(hit_in[i]),
            ]
        }),
    )
}

pub fn validation_csv(stats: &crate::execution::ValidationStats) -> Result<String> {
    csv_text(
        VALIDATION_HEADER,
        [vec![
            stats.runs.to_string(),
            stats.discrete_collisions.to_string(),
            stats.continuous_collisions.to_string(),
            num(stats.discrete_rate),
            num(stats.continuous_rate),
            stats.satisfied_discrete.to_string(),
            stats.satisfied_continuous.to_string(),
        ]],
    )
}

/// `waypoint,time_s,q0..,v0..,u0..`; the last row leaves the inputs empty.
pub fn trajectory_csv(traj: &NominalTrajectory) -> Result<String> {
    let n = traj.n_joints();
    let header: Vec<String> = ["waypoint".to_string(), "time_s".to_string()]
        .into_iter()
        .chain((0..n).map(|j| format!("q{j}")))
        .chain((0..n).map(|j| format!("v{j}")))
        .chain((0..n).map(|j| format!("u{j}")))
        .collect();
    let rows = traj.waypoints.iter().enumerate().map(|(t, w)| {
        let mut row = vec![t.to_string(), num(t as f64 * traj.dt)];
        row.extend(w.positions.iter().map(|v| format!("{v}")));
        row.extend(w.velocities.iter().map(|v| format!("{v}")));
        match traj.inputs.get(t) {
            Some(u) => row.extend(u.accelerations.iter().map(|v| format!("{v}"))),
            None => row.extend(std::iter::repeat_n(String::new(), n)),
        }
        row
    });
    csv_text(&header.join(","), rows)
}

pub fn parse_trajectory_csv(text: &str, origin: &str) -> Result<NominalTrajectory> {
    let parse_err = |message: String| Error::Parse {
        path: origin.to_string(),
        message,
    };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .clone();
    if header.len() < 5
        || (header.len() - 2) % 3 != 0
        || &header[0] != "waypoint"
        || &header[1] != "time_s"
    {
        return Err(parse_err(
            "expected header waypoint,time_s,q0..,v0..,u0..".into(),
        ));
    }
    let n = (header.len() - 2) / 3;
    let mut times = Vec::new();
    let mut waypoints = Vec::new();
    let mut inputs = Vec::new();
    let mut inputs_ended = false;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let row = line + 2;
        let field = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|_| {
                parse_err(format!(
                    "line {row}, column {}: `{}` is not a number",
                    &header[i], &record[i]
                ))
            })
        };
        times.push(field(1)?);
        let q = (0..n).map(|j| field(2 + j)).collect::<Result<Vec<_>>>()?;
        let v = (0..n)
            .map(|j| field(2 + n + j))
            .collect::<Result<Vec<_>>>()?;
        waypoints.push(JointState::new(q, v)?);
        if (0..n).all(|j| record[2 + 2 * n + j].trim().is_empty()) {
            inputs_ended = true;
        } else if inputs_ended {
            return Err(parse_err(format!(
                "line {row}: inputs resume after an empty row"
            )));
        } else {
            let u = (0..n)
                .map(|j| field(2 + 2 * n + j))
                .collect::<Result<Vec<_>>>()?;
            inputs.push(ControlInput::new(u)?);
        }
    }
    if times.len() < 2 {
        return Err(parse_err(
            "a trajectory needs at least two waypoints".into(),
        ));
    }
    let dt = times[1] - times[0];
    NominalTrajectory::new(waypoints, inputs, dt).map_err(|e| parse_err(e.to_string()))
}

/// What to draw in a trajectory figure.
pub struct Figure<'a> {
    pub title: &'a str,
    pub env: &'a Environment,
    pub trajectory: Option<&'a NominalTrajectory>,
    pub beliefs: &'a [GaussianBelief],
    pub baseline: Option<&'a NominalTrajectory>,
}

const SVG_SIZE: f64 = 640.0;

fn fmt(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Clips the box `[lo, hi]²` to the half-plane `n·p ≤ c`.
fn clip_box(lo: [f64; 2], hi: [f64; 2], normal: [f64; 2], offset: f64) -> Vec<[f64; 2]> {
    let corners = [
        [lo[0], lo[1]],
        [hi[0], lo[1]],
        [hi[0], hi[1]],
        [lo[0], hi[1]],
    ];
    let side = |p: &[f64; 2]| normal[0] * p[0] + normal[1] * p[1] - offset;
    let mut out = Vec::new();
    for i in 0..4 {
        let (a, b) = (corners[i], corners[(i + 1) % 4]);
        let (sa, sb) = (side(&a), side(&b));
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0) != (sb < 0.0) && sa != sb {
            let s = sa / (sa - sb);
            out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    }
    out
}

fn points_attr(points: &[[f64; 2]]) -> String {
    points
        .iter()
        .map(|p| format!("{},{}", fmt(p[0]), fmt(p[1])))
        .collect::<Vec<_>>()
        .join(" ")
}

fn chain(q: &[f64], env: &Environment) -> Result<Vec<[f64; 2]>> {
    Ok(forward_kinematics(q, &env.arm)?
        .points
        .iter()
        .map(|p| [p.x, p.y])
        .collect())
}

/// Static SVG 1.1 rendering: obstacles, the arm at every waypoint, start
/// and goal poses, 3σ end-effector ellipses and the baseline's end-effector
/// path.
pub fn trajectory_svg(fig: &Figure<'_>) -> Result<String> {
    let env = fig.env;
    let base = env.arm.base_position;
    let extent = env.arm.reach() + 0.3;
    let lo = [base[0] - extent, base[1] - extent];
    let hi = [base[0] + extent, base[1] + extent];
    let scale = SVG_SIZE / (2.0 * extent);
    let stroke = 1.5 / scale;

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#
    );
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        SVG_SIZE
    );
    let _ = writeln!(w, "<title>{}</title>", escape(fig.title));
    let _ = writeln!(
        w,
        r##"<rect x="0" y="0" width="{0}" height="{0}" fill="#ffffff"/>"##,
        SVG_SIZE
    );
    let _ = writeln!(
        w,
        r#"<g transform="translate({},{}) scale({},{})">"#,
        fmt(SVG_SIZE / 2.0 - base[0] * scale),
        fmt(SVG_SIZE / 2.0 + base[1] * scale),
        fmt(scale),
        fmt(-scale)
    );

    let _ = writeln!(
        w,
        r##"<g id="obstacles" fill="#d9534f" fill-opacity="0.55" stroke="#a94442" stroke-width="{}">"##,
        fmt(stroke)
    );
    for o in &env.obstacles {
        match o {
            Obstacle::Circle { center, radius } => {
                let _ = writeln!(
                    w,
                    r#"<circle cx="{}" cy="{}" r="{}"/>"#,
                    fmt(center[0]),
                    fmt(center[1]),
                    fmt(*radius)
                );
            }
            Obstacle::Polygon { vertices } => {
                let _ = writeln!(w, r#"<polygon points="{}"/>"#, points_attr(vertices));
            }
            Obstacle::HalfPlane { normal, offset } => {
                let region = clip_box(lo, hi, *normal, *offset);
                if region.len() >= 3 {
                    let _ = writeln!(w, r#"<polygon points="{}"/>"#, points_attr(&region));
                }
            }
        }
    }
    let _ = writeln!(w, "</g>");

    if let Some(b) = fig.baseline {
        let ee = b
            .waypoints
            .iter()
            .map(|wp| chain(&wp.positions, env).map(|c| c[c.len() - 1]))
            .collect::<Result<Vec<_>>>()?;
        let _ = writeln!(
            w,
            r##"<polyline id="baseline" points="{}" fill="none" stroke="#777777" stroke-width="{}" stroke-dasharray="{},{}"/>"##,
            points_attr(&ee),
            fmt(stroke),
            fmt(4.0 * stroke),
            fmt(3.0 * stroke)
        );
    }

    if let Some(traj) = fig.trajectory {
        let last = traj.waypoints.len() - 1;
        let _ = writeln!(
            w,
            r##"<g id="sweep" fill="none" stroke="#337ab7" stroke-opacity="0.35" stroke-width="{}">"##,
            fmt(stroke)
        );
        for wp in &traj.waypoints[1..last] {
            let _ = writeln!(
                w,
                r#"<polyline points="{}"/>"#,
                points_attr(&chain(&wp.positions, env)?)
            );
        }
        let _ = writeln!(w, "</g>");

        let _ = writeln!(
            w,
            r##"<g id="uncertainty" fill="#f0ad4e" fill-opacity="0.25" stroke="#ec971f" stroke-width="{}">"##,
            fmt(stroke * 0.6)
        );
        for (wp, belief) in traj.waypoints.iter().zip(fig.beliefs) {
            let jac = jacobian(&wp.positions, &env.arm)?;
            let cov = &jac * &belief.covariance * jac.transpose();
            let cov = Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]);
            let eig = SymmetricEigen::new(cov);
            let (i, j) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
                (0, 1)
            } else {
                (1, 0)
            };
            let rx = 3.0 * eig.eigenvalues[i].max(0.0).sqrt();
            let ry = 3.0 * eig.eigenvalues[j].max(0.0).sqrt();
            if rx <= 0.0 {
                continue;
            }
            let v = eig.eigenvectors.column(i);
            let angle = v[1].atan2(v[0]).to_degrees();
            let c = chain(&wp.positions, env)?;
            let p = c[c.len() - 1];
            let _ = writeln!(
                w,
                r#"<ellipse transform="translate({},{}) rotate({})" cx="0" cy="0" rx="{}" ry="{}"/>"#,
                fmt(p[0]),
                fmt(p[1]),
                fmt(angle),
                fmt(rx),
                fmt(ry.max(1e-6))
            );
        }
        let _ = writeln!(w, "</g>");

        for (id, q, color) in [
            ("start", &traj.waypoints[0].positions, "#5cb85c"),
            ("goal", &traj.waypoints[last].positions, "#3c3c96"),
        ] {
            let _ = writeln!(
                w,
                r#"<polyline id="{id}" points="{}" fill="none" stroke="{color}" stroke-width="{}" stroke-linejoin="round"/>"#,
                points_attr(&chain(q, env)?),
                fmt(3.0 * stroke)
            );
        }
    }
    let _ = writeln!(
        w,
        r##"<circle id="base" cx="{}" cy="{}" r="{}" fill="#333333"/>"##,
        fmt(base[0]),
        fmt(base[1]),
        fmt(3.0 * stroke)
    );
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::ArmSpec;

    #[test]
    fn number_formatting() {
        assert_eq!(num(0.0), "0");
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(2.5e-7), "2.5e-7");
        assert_eq!(num(-0.03), "-0.03");
        assert_eq!(opt_num(None), "NA");
        for x in [1e-300, 0.123456789012345, 7.0, 1e20] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let positions: Vec<Vec<f64>> = (0..=6)
            .map(|t| vec![0.1 * t as f64, (t as f64 * 0.7).sin()])
            .collect();
        let traj = NominalTrajectory::from_positions(&positions, 0.1).unwrap();
        let text = trajectory_csv(&traj).unwrap();
        assert!(text.starts_with("waypoint,time_s,q0,q1,v0,v1,u0,u1\n"));
        let back = parse_trajectory_csv(&text, "t.csv").unwrap();
        assert_eq!(back.waypoints, traj.waypoints);
        assert_eq!(back.inputs, traj.inputs);
        assert!((back.dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bad_trajectory_reports_line() {
        let text = "waypoint,time_s,q0,v0,u0\n0,0,0,0,0\n1,0.1,x,0,\n";
        let err = parse_trajectory_csv(text, "t.csv").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn risks_header() {
        let text = risks_csv(&[0.0, 0.01], &[0.05, 0.05], &[0.0, 0.02]).unwrap();
        assert_eq!(
            text,
            "waypoint,risk,allocated,hit_in_distance\n0,0,0.05,0\n1,0.01,0.05,0.02\n"
        );
    }

    #[test]
    fn half_plane_clipping() {
        let region = clip_box([-1.0, -1.0], [1.0, 1.0], [0.0, 1.0], 0.0);
        assert_eq!(region.len(), 4);
        assert!(region.iter().all(|p| p[1] <= 1e-12));
        assert!(clip_box([-1.0, -1.0], [1.0, 1.0], [0.0, 1.0], -2.0).is_empty());
    }

    #[test]
    fn svg_has_the_expected_skeleton() {
        let env = Environment::new(
            ArmSpec::with_lengths(vec![1.0, 1.0]).unwrap(),
            vec![
                Obstacle::circle([1.0, 1.0], 0.2),
                Obstacle::HalfPlane {
                    normal: [0.0, 1.0],
                    offset: -1.5,
                },
            ],
        )
        .unwrap();
        let traj = NominalTrajectory::from_positions(
            &[vec![0.0, 0.0], vec![0.5, 0.2], vec![1.0, 0.4]],
            0.1,
        )
        .unwrap();
        let beliefs: Vec<GaussianBelief> = traj
            .waypoints
            .iter()
            .map(|w| {
                GaussianBelief::new(
                    nalgebra::DVector::from_column_slice(&w.positions),
                    nalgebra::DMatrix::identity(2, 2) * 1e-3,
                )
                .unwrap()
            })
            .collect();
        let svg = trajectory_svg(&Figure {
            title: "a & b",
            env: &env,
            trajectory: Some(&traj),
            beliefs: &beliefs,
            baseline: Some(&traj),
        })
        .unwrap();
        assert!(svg.contains(r#"version="1.1""#));
        assert!(svg.contains("a &amp; b"));
        assert_eq!(svg.matches("<ellipse").count(), 3);
        assert!(svg.contains(r#"id="start""#) && svg.contains(r#"id="goal""#));
    }
}
