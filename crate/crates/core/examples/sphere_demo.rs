//! Plans parallel-plate grasps on the 5 cm sphere and prints a summary.

use std::time::Instant;

use gradgrasp::fixtures;
use gradgrasp::objective::BarrierParams;
use gradgrasp::planner::{Execution, Planner, PlannerConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    v[v.len() / 2]
}

fn main() {
    let assets = fixtures::plate_gripper_assets();
    let cloud = fixtures::sphere_fixture();
    let mut config = PlannerConfig {
        d_gripper: fixtures::PLATE_GRIPPER_STANDOFF,
        ..Default::default()
    };
    let args: Vec<String> = std::env::args().collect();
    if let Some(s) = args.get(1) {
        config.seed = s.parse().expect("seed");
    }
    let planner = Planner::new(&assets, &cloud, BarrierParams::default(), config);
    let t = Instant::now();
    let results = planner.plan(&Execution::sequential()).expect("plan");
    let elapsed = t.elapsed().as_secs_f64();
    let valid = results.iter().filter(|r| r.valid).count();
    let ratio = median(results.iter().map(|r| r.breakdown.e_p / r.initial_breakdown.e_p).collect());
    println!(
        "valid {valid}/{} converged {} free {} self {} limits {} median E_p ratio {ratio:.4} time {elapsed:.2}s",
        results.len(),
        results.iter().filter(|r| r.converged).count(),
        results.iter().filter(|r| r.collision_free).count(),
        results.iter().filter(|r| r.self_collision_free).count(),
        results.iter().filter(|r| r.within_joint_limits).count(),
    );
    for r in results.iter().take(8) {
        println!(
            "  idx {:?} it {}/{} E {:.5} Ep {:.2e}->{:.2e} En {:.3} fc {:.3} b {:.4} q {:.4} conv {} free {} note {:?}",
            r.sample_index,
            r.outer_iterations,
            r.inner_iterations,
            r.breakdown.total,
            r.initial_breakdown.e_p,
            r.breakdown.e_p,
            r.breakdown.e_n,
            r.breakdown.e_fc,
            r.breakdown.e_b,
            r.pose.joints[0],
            r.converged,
            r.collision_free,
            r.note
        );
    }
}
