use ccplan::collision::{edge_in_collision, min_clearance, Environment, Obstacle};
use ccplan::kinematics::ArmSpec;
use ccplan::lqg::NoiseModel;
use ccplan::planner::*;

fn two_link() -> ArmSpec {
    ArmSpec::new(
        vec![1.0, 1.0],
        vec![0.05, 0.05],
        [0.0, 0.0],
        vec![[-3.1, 3.1]; 2],
    )
    .unwrap()
}

fn blocked() -> Environment {
    Environment::new(two_link(), vec![Obstacle::circle([2.1, 0.1], 0.15)]).unwrap()
}

const START: [f64; 2] = [-1.0, 0.0];
const GOAL: [f64; 2] = [1.0, 0.0];

#[test]
fn deterministic_plan_detours_around_the_obstacle() {
    let env = blocked();
    let params = PlannerParams::default();
    let seed = straight_line_seed(&START, &GOAL, params.horizon, params.dt, &env).unwrap();
    assert!(seed
        .positions()
        .iter()
        .any(|q| min_clearance(q, &env) < 0.0));

    let traj = plan_deterministic(&START, &GOAL, &env, &params).unwrap();
    assert!(traj.dynamics_residual().unwrap() < 1e-8);
    assert_eq!(traj.start(), &START);
    assert_eq!(traj.goal(), &GOAL);
    for q in traj.positions() {
        assert!(
            min_clearance(&q, &env) >= 0.0,
            "clearance {}",
            min_clearance(&q, &env)
        );
    }
    let path = traj.positions();
    for (t, pair) in path.windows(2).enumerate() {
        assert!(!edge_in_collision(&pair[0], &pair[1], &env, 20), "edge {t}");
    }
}

#[test]
fn free_space_is_satisfied_immediately() {
    let env = Environment::free(two_link());
    let noise = NoiseModel::isotropic(2, 1e-3, 1e-3, 1e-4);
    let params = PlannerParams::default();
    let r = plan_chance_constrained(&START, &GOAL, &env, &noise, &params).unwrap();
    assert_eq!(r.status, PlanStatus::Satisfied);
    assert_eq!(r.iterations_used, 0);
    let seed = straight_line_seed(&START, &GOAL, params.horizon, params.dt, &env).unwrap();
    let traj = r.trajectory.unwrap();
    for (a, b) in traj.positions().iter().zip(seed.positions()) {
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }
    assert!(r.risks.iter().all(|x| *x == 0.0));
}

#[test]
fn zero_noise_needs_no_reallocation() {
    let env = blocked();
    let r = plan_chance_constrained(
        &START,
        &GOAL,
        &env,
        &NoiseModel::zero(2),
        &PlannerParams::default(),
    )
    .unwrap();
    assert_eq!(r.status, PlanStatus::Satisfied);
    assert_eq!(r.iterations_used, 0);
    assert!(r.risks.iter().all(|x| *x == 0.0));
}

#[test]
fn noisy_corridor_reallocates_until_satisfied() {
    let env = blocked();
    let noise = NoiseModel::isotropic(2, 4e-4, 4e-4, 4e-5);
    let params = PlannerParams::default();
    let r = plan_chance_constrained(&START, &GOAL, &env, &noise, &params).unwrap();
    assert_eq!(r.status, PlanStatus::Satisfied, "{:?}", r.reason);
    assert!(r.iterations_used >= 1);

    let alloc = r.allocation.as_ref().unwrap();
    assert!(alloc.total() <= params.chance_constraint + 1e-12);
    for (risk, bound) in r.risks.iter().zip(&alloc.bounds) {
        assert!(risk <= bound, "{risk} > {bound}");
    }

    // Hit-in distances only grow.
    for pair in r.history.windows(2) {
        for (a, b) in pair[0]
            .hit_in_distances
            .iter()
            .zip(&pair[1].hit_in_distances)
        {
            assert!(b >= a);
        }
        assert!(pair[1].penalized_count >= pair[0].penalized_count);
    }

    let baseline = plan_deterministic(&START, &GOAL, &env, &params).unwrap();
    let worst = |t: &NominalTrajectory| {
        t.positions()
            .iter()
            .map(|q| min_clearance(q, &env))
            .fold(f64::INFINITY, f64::min)
    };
    assert!(worst(r.trajectory.as_ref().unwrap()) > worst(&baseline));
}

#[test]
fn iteration_limit_is_reported() {
    let env = blocked();
    let noise = NoiseModel::isotropic(2, 4e-4, 4e-4, 4e-5);
    let params = PlannerParams {
        max_iterations: 1,
        ..Default::default()
    };
    let r = plan_chance_constrained(&START, &GOAL, &env, &noise, &params).unwrap();
    assert_eq!(r.status, PlanStatus::IterationLimit);
    assert_eq!(r.iterations_used, 1);
    assert!(r.trajectory.is_some());
}

#[test]
fn planning_is_deterministic() {
    let env = blocked();
    let noise = NoiseModel::isotropic(2, 4e-4, 4e-4, 4e-5);
    let params = PlannerParams::default();
    let a = plan_chance_constrained(&START, &GOAL, &env, &noise, &params).unwrap();
    let b = plan_chance_constrained(&START, &GOAL, &env, &noise, &params).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.risks, b.risks);
}

#[test]
fn restarts_escape_a_symmetric_block() {
    // The straight sweep passes through the obstacle centre, where the
    // clearance gradient vanishes by symmetry.
    let env = Environment::new(two_link(), vec![Obstacle::circle([1.7, 0.0], 0.25)]).unwrap();
    let params = PlannerParams::default();
    let traj = plan_deterministic(&START, &GOAL, &env, &params).unwrap();
    for q in traj.positions() {
        assert!(min_clearance(&q, &env) >= 0.0);
    }
}

#[test]
fn raising_a_hit_in_distance_does_not_reduce_its_clearance() {
    let env = blocked();
    let base = PlannerParams::default();
    let seed = straight_line_seed(&START, &GOAL, base.horizon, base.dt, &env).unwrap();
    let before = optimize_trajectory(&seed, &env, &base).unwrap();
    for t in [8, 12, 15, 18, 22] {
        let mut dlist = vec![0.0; base.waypoint_count()];
        dlist[t] = base.d_step;
        let raised = PlannerParams {
            hit_in_distances: dlist,
            ..base.clone()
        };
        let after = optimize_trajectory(&seed, &env, &raised).unwrap();
        let c0 = min_clearance(&before.waypoints[t].positions, &env);
        let c1 = min_clearance(&after.waypoints[t].positions, &env);
        assert!(c1 >= c0 - 1e-6, "t={t}: {c1} < {c0}");
    }
}
