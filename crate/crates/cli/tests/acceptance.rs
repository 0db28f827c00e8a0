//! One PASS/FAIL line per acceptance criterion, written past the test
//! harness capture. Criteria that fail on this build are reported, not hidden.

mod common;

use std::io::Write;
use std::time::Instant;

use common::{code, grasps, lines, stdout, Workspace};
use gradgrasp::fixtures;
use gradgrasp::gripper::{
    build_link_meshes, compute_palmar_mask, parse_urdf, sample_link_surfaces, GripperAssets, MeshResolver, PalmarOptions,
};
use gradgrasp::objective::{
    barrier_kernel, energy_force_closure, frozen_energy, frozen_gradient, restate, BarrierParams, ContactSet, Frozen,
};
use gradgrasp::planner::{init_poses, joint_values_within_limits, pose_collision_check, Execution, Planner, PlannerConfig};
use gradgrasp::pointcloud::fps_sample;
use gradgrasp::pose::PoseState;
use gradgrasp::quality::epsilon_metric;
use gradgrasp::quality::FrictionModel;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

// straight to the handle: print! is swallowed for passing tests
fn say(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn report(n: usize, o: &Outcome) {
    say(format!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail));
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
}

// 1: analytic gradient against central differences, matches frozen
const FD_STEP: f64 = 1e-6;
const FD_REL: f64 = 1e-4;
const FD_ABS: f64 = 1e-8;
const FD_STATES: usize = 100;

fn central_differences(assets: &GripperAssets, frozen: &Frozen, pose: &PoseState, params: &BarrierParams) -> Vec<f64> {
    let e = |p: &PoseState| frozen_energy(&assets.model, frozen, p, params).unwrap().total;
    let mut out = Vec::new();
    for k in 0..3 {
        let mut d = Vector3::zeros();
        d[k] = FD_STEP;
        let (mut a, mut b) = (pose.clone(), pose.clone());
        a.rotation *= UnitQuaternion::from_scaled_axis(d);
        b.rotation *= UnitQuaternion::from_scaled_axis(-d);
        out.push((e(&a) - e(&b)) / (2.0 * FD_STEP));
    }
    for k in 0..3 {
        let (mut a, mut b) = (pose.clone(), pose.clone());
        a.translation[k] += FD_STEP;
        b.translation[k] -= FD_STEP;
        out.push((e(&a) - e(&b)) / (2.0 * FD_STEP));
    }
    for j in 0..pose.joints.len() {
        let (mut a, mut b) = (pose.clone(), pose.clone());
        a.joints[j] += FD_STEP;
        b.joints[j] -= FD_STEP;
        out.push((e(&a) - e(&b)) / (2.0 * FD_STEP));
    }
    out
}

fn gradient_oracle() -> Outcome {
    let started = Instant::now();
    let cloud = fixtures::sphere_fixture();
    let params = BarrierParams::default();
    let mut worst: f64 = 0.0;
    for (seed, assets) in [(1, fixtures::plate_gripper_assets()), (2, fixtures::barrett_assets())] {
        let points = assets.surfaces.weighted_points();
        let (lo, hi) = (assets.model.lower_limits(), assets.model.upper_limits());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept = 0;
        while kept < FD_STATES {
            let joints = lo.iter().zip(&hi).map(|(l, h)| l + (h - l) * rng.random_range(0.1..0.9)).collect();
            let rot = UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
            let pose = PoseState::new(rot, unit(&mut rng) * rng.random_range(0.06..0.14), joints);
            let frozen = Frozen::new(&assets.model, &points, &pose, &cloud, 4).unwrap();
            // a 1e-6 step cannot resolve the log barrier for pairs closer than 1 mm
            if restate(&assets.model, &frozen, &pose).unwrap().corr.pairs.iter().any(|c| c.distance_sq < 1e-6) {
                continue;
            }
            kept += 1;
            let (_, g) = frozen_gradient(&assets.model, &frozen, &pose, &params).unwrap();
            for (a, f) in g.to_vec().iter().zip(central_differences(&assets, &frozen, &pose, &params)) {
                worst = worst.max((a - f).abs() / (FD_REL * f.abs()).max(FD_ABS));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1.0 && secs < 60.0,
        detail: format!("worst error/tolerance {worst:.3} over {FD_STATES} states x 2 grippers, {secs:.1} s"),
    }
}

// 2: barrier kernel at the threshold
fn barrier_continuity() -> Outcome {
    let d_hat = BarrierParams::default().d_hat;
    let f = |d: f64| barrier_kernel(d, d_hat, 1e-12);
    let h = 1e-6;
    let value = f(d_hat).abs();
    let slope = ((f(d_hat + h) - f(d_hat - h)) / (2.0 * h)).abs();
    let closed = d_hat * d_hat * (1.0 - 1.0 / std::f64::consts::E).powi(2);
    let off = (f(d_hat / std::f64::consts::E) - closed).abs();
    Outcome {
        pass: d_hat == 0.05 && value <= 1e-8 && slope <= 1e-8 && off <= 1e-10,
        detail: format!("d_hat {d_hat}, b(d_hat) {value:.1e}, b'(d_hat) {slope:.1e}, closed-form error {off:.1e}"),
    }
}

// 3: force-closure residual
fn force_closure_algebra() -> Outcome {
    let x = Vector3::x() * 0.05;
    let antipodal = ContactSet {
        pairs: vec![0, 1, 2, 3],
        positions: vec![x, -x, x, -x],
        normals: vec![-Vector3::x(), Vector3::x(), -Vector3::x(), Vector3::x()],
    };
    let zero = energy_force_closure(&antipodal);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let positions: Vec<_> = (0..4).map(|_| unit(&mut rng) * rng.random_range(0.01..0.2)).collect();
        let normals: Vec<_> = (0..4).map(|_| unit(&mut rng)).collect();
        let mut g = DMatrix::zeros(6, 12);
        let mut c = DVector::zeros(12);
        for (i, (p, n)) in positions.iter().zip(&normals).enumerate() {
            for r in 0..3 {
                g[(r, 3 * i + r)] = 1.0;
                c[3 * i + r] = n[r];
            }
            let cross = [[0.0, -p.z, p.y], [p.z, 0.0, -p.x], [-p.y, p.x, 0.0]];
            for (r, row) in cross.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    g[(3 + r, 3 * i + k)] = *v;
                }
            }
        }
        let dense = (g * c).norm();
        let set = ContactSet { pairs: vec![0, 1, 2, 3], positions, normals };
        worst = worst.max((energy_force_closure(&set) - dense).abs() / dense);
    }
    Outcome {
        pass: zero == 0.0 && worst <= 1e-12,
        detail: format!("antipodal |Gc| {zero:.1e}, worst relative gap to dense 6x12 product {worst:.1e} over 1000 sets"),
    }
}

// 4: sphere planning with the plate gripper
fn sphere_planning() -> Outcome {
    let assets = fixtures::plate_gripper_assets();
    let cloud = fixtures::sphere_fixture();
    let cfg = PlannerConfig { d_gripper: fixtures::PLATE_GRIPPER_STANDOFF, samples: 40, seed: 7, ..Default::default() };
    let started = Instant::now();
    let results = Planner::new(&assets, &cloud, BarrierParams::default(), cfg).plan(&Execution::sequential()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let valid: Vec<_> = results.iter().filter(|r| r.valid).collect();
    let proportion = valid.len() as f64 / results.len() as f64;
    let clean = valid.iter().all(|r| {
        let flags = pose_collision_check(&assets, &r.pose, &cloud);
        flags.collision_free && flags.self_collision_free && joint_values_within_limits(&assets.model, &r.pose.joints)
    });
    let mut ratios: Vec<f64> = valid.iter().map(|r| r.breakdown.e_p / r.initial_breakdown.e_p).collect();
    ratios.sort_by(f64::total_cmp);
    let median = if ratios.is_empty() { f64::INFINITY } else { gradgrasp_cli::commands::median(&ratios) };
    Outcome {
        pass: results.len() == 40 && proportion >= 0.30 && clean && median <= 0.10 && secs < 120.0,
        detail: format!(
            "valid {}/{} ({proportion:.2}), clean {clean}, median E_p final/initial {median:.3}, {secs:.1} s single-threaded",
            valid.len(),
            results.len()
        ),
    }
}

// 5: batching and worker count do not change results
fn determinism() -> Outcome {
    let assets = fixtures::plate_gripper_assets();
    let cloud = fixtures::sphere_fixture();
    let cfg = PlannerConfig { d_gripper: fixtures::PLATE_GRIPPER_STANDOFF, samples: 16, seed: 7, ..Default::default() };
    let planner = Planner::new(&assets, &cloud, BarrierParams::default(), cfg.clone());
    let states = init_poses(&cloud, &fps_sample(&cloud, 16, cfg.seed), 16, &assets.q_open, &cfg);
    let batch = planner.optimize_batch(&states, &Execution::parallel(Some(4)));
    let singles: Vec<_> = states
        .iter()
        .flat_map(|s| planner.optimize_batch(std::slice::from_ref(s), &Execution::sequential()))
        .collect();
    let same = batch.len() == singles.len() && batch.iter().zip(&singles).all(|(a, b)| a.same_outcome(b));

    let ws = Workspace::new();
    let sphere = ws.sphere();
    let run = |jobs: &str| ws.cmd("plan", &[sphere.to_str().unwrap(), "--samples", "16", "--jobs", jobs]);
    let (one, four) = (run("1"), run("4"));
    let cli_same = code(&one) == 0 && one.stdout == four.stdout;
    Outcome {
        pass: same && cli_same,
        detail: format!("batch of 16 vs singles identical {same}, CLI --jobs 1 vs 4 byte-identical {cli_same}"),
    }
}

// 6: valid proportion under position noise
fn noise_trend() -> Outcome {
    let ws = Workspace::new();
    let out = ws.cmd("noise-sweep", &[ws.sphere().to_str().unwrap(), "--sigmas", "0,0.002,0.005,0.01", "--repeats", "5"]);
    if code(&out) != 0 {
        return Outcome { pass: false, detail: format!("noise-sweep exit {}", code(&out)) };
    }
    let text = stdout(&out);
    let column: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let monotone = column.len() == 4 && column.windows(2).all(|w| w[1] <= w[0]);
    Outcome {
        pass: monotone,
        detail: format!("median valid proportion over 5 seeds at sigma 0/2/5/10 mm: {column:?}"),
    }
}

// 7: refinement ladder from perturbed planned grasps
fn refinement_ladder() -> Outcome {
    let ws = Workspace::new();
    let sphere = ws.sphere();
    let planned = ws.cmd("plan", &[sphere.to_str().unwrap(), "--samples", "40"]);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut rows = String::new();
    for g in grasps(&planned).iter().filter(|g| g["valid"] == true) {
        let r: Vec<f64> = g["rotation"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let t: Vec<f64> = g["translation"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(r[0], r[1], r[2], r[3]))
            * UnitQuaternion::from_scaled_axis(unit(&mut rng) * 10f64.to_radians());
        let t = Vector3::new(t[0], t[1], t[2]) + unit(&mut rng) * 0.02;
        rows += &format!(
            "{{\"rotation\":[{:?},{:?},{:?},{:?}],\"translation\":[{:?},{:?},{:?}],\"joints\":{}}}\n",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z, g["joints"]
        );
    }
    let poses = ws.path("perturbed.jsonl");
    std::fs::write(&poses, &rows).unwrap();
    let out = ws.cmd("refine", &[poses.to_str().unwrap(), sphere.to_str().unwrap(), "--steps", "3,6,10,13"]);
    if code(&out) != 0 || rows.is_empty() {
        return Outcome { pass: false, detail: format!("refine exit {}, {} poses", code(&out), rows.lines().count()) };
    }
    let report = lines(&out).pop().unwrap();
    let ladder: Vec<(u64, f64)> = report["ladder"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["steps"].as_u64().unwrap(), r["median_bsm"].as_f64().unwrap()))
        .collect();
    let medians: Vec<f64> = ladder.iter().map(|r| r.1).collect();
    let pass = ladder.iter().map(|r| r.0).eq([0, 3, 6, 10, 13])
        && medians.windows(2).all(|w| w[1] <= w[0])
        && medians[4] < medians[0];
    Outcome {
        pass,
        detail: format!("median BSM at 0/3/6/10/13 steps over {} poses: {medians:.4?}", rows.lines().count()),
    }
}

// 8: epsilon metric
fn epsilon_sanity() -> Outcome {
    let fm = FrictionModel { mu: 0.5, cone_edges: 8 };
    let single = epsilon_metric(&[Vector3::x() * 0.05], &[-Vector3::x()], &fm, 10_000).unwrap();
    let x = Vector3::x() * 0.05;
    let antipodal = epsilon_metric(&[x, -x], &[-Vector3::x(), Vector3::x()], &fm, 10_000).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let positions: Vec<_> = (0..4).map(|_| unit(&mut rng) * 0.05).collect();
    let normals: Vec<_> = positions.iter().map(|p| -p.normalize()).collect();
    let base = epsilon_metric(&positions, &normals, &fm, 10_000).unwrap();
    let mut drift: f64 = 0.0;
    for _ in 0..20 {
        let r = Rotation3::from_scaled_axis(unit(&mut rng) * rng.random_range(0.0..3.1));
        let p: Vec<_> = positions.iter().map(|v| r * v).collect();
        let n: Vec<_> = normals.iter().map(|v| r * v).collect();
        drift = drift.max((epsilon_metric(&p, &n, &fm, 10_000).unwrap() - base).abs());
    }
    let counts = [100, 1000, 10_000, 40_000];
    let ladder: Vec<f64> = counts.iter().map(|&c| epsilon_metric(&positions, &normals, &fm, c).unwrap()).collect();
    let monotone = ladder.windows(2).all(|w| w[1] <= w[0]);
    Outcome {
        pass: single == 0.0 && antipodal > 0.0 && drift <= 1e-6 && monotone,
        detail: format!(
            "single {single}, antipodal {antipodal:.4}, rotation drift {drift:.1e}, estimate at {counts:?} directions {ladder:.4?}"
        ),
    }
}

// 9: forward kinematics against plain matrix composition
fn rpy(r: f64, p: f64, y: f64) -> Matrix3<f64> {
    let (sr, cr) = r.sin_cos();
    let (sp, cp) = p.sin_cos();
    let (sy, cy) = y.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

fn rodrigues(k: Vector3<f64>, a: f64) -> Matrix3<f64> {
    let k = k / k.norm();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * a.sin() + kx * kx * (1.0 - a.cos())
}

fn homogeneous(r: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

fn fk_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut golden: f64 = 0.0;
    for _ in 0..20 {
        let mut urdf = String::from(r#"<robot name="chain"><link name="l0"/>"#);
        let mut joints = Vec::new();
        for i in 0..5 {
            let revolute = i % 2 == 0;
            let xyz = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let angles = [0; 3].map(|_| rng.random_range(-3.0..3.0));
            let axis = unit(&mut rng);
            urdf += &format!(
                r#"<link name="l{c}"/><joint name="j{i}" type="{}"><parent link="l{i}"/><child link="l{c}"/><origin xyz="{:e} {:e} {:e}" rpy="{:e} {:e} {:e}"/><axis xyz="{:e} {:e} {:e}"/><limit lower="-3" upper="3"/></joint>"#,
                if revolute { "revolute" } else { "prismatic" },
                xyz.x, xyz.y, xyz.z, angles[0], angles[1], angles[2], axis.x, axis.y, axis.z,
                c = i + 1
            );
            joints.push((revolute, xyz, angles, axis));
        }
        urdf += "</robot>";
        let model = parse_urdf(&urdf, &MeshResolver::default()).unwrap();
        let q: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let base = UnitQuaternion::from_scaled_axis(unit(&mut rng) * 1.3);
        let shift = unit(&mut rng) * 0.4;
        let fk = model.forward_kinematics(&PoseState::new(base, shift, q.clone())).unwrap();
        let mut t = homogeneous(*base.to_rotation_matrix().matrix(), shift);
        for (i, ((revolute, xyz, a, axis), qi)) in joints.iter().zip(&q).enumerate() {
            let motion = if *revolute {
                homogeneous(rodrigues(*axis, *qi), Vector3::zeros())
            } else {
                homogeneous(Matrix3::identity(), axis * *qi)
            };
            t = t * homogeneous(rpy(a[0], a[1], a[2]), *xyz) * motion;
            let li = model.link_index(&format!("l{}", i + 1)).unwrap();
            golden = golden.max((fk[li].to_homogeneous() - t).abs().max());
        }
    }

    let assets = fixtures::barrett_assets();
    let mut rigid: f64 = 0.0;
    for _ in 0..20 {
        let q = assets.model.lower_limits().iter().zip(assets.model.upper_limits()).map(|(l, h)| rng.random_range(*l..=h)).collect();
        let pose = PoseState::new(UnitQuaternion::from_scaled_axis(unit(&mut rng) * 2.0), unit(&mut rng), q);
        let fk = assets.model.forward_kinematics(&pose).unwrap();
        for (li, s) in assets.surfaces.links.iter().enumerate() {
            let w: Vec<Vector3<f64>> = s.points.iter().map(|p| fk[li].transform_point(&(*p).into()).coords).collect();
            for i in (0..s.len()).step_by(5) {
                for j in (i + 1..s.len()).step_by(13) {
                    let before = (s.points[i] - s.points[j]).norm();
                    rigid = rigid.max(((w[i] - w[j]).norm() - before).abs());
                }
            }
        }
    }
    Outcome {
        pass: golden <= 1e-12 && rigid <= 1e-9,
        detail: format!("worst transform entry error {golden:.1e}, worst rigid distance change {rigid:.1e}"),
    }
}

// 10: palmar classification on the facing plates
fn palmar_mask() -> Outcome {
    let model = parse_urdf(fixtures::PLATE_PAIR_URDF, &MeshResolver::default()).unwrap();
    let meshes = build_link_meshes(&model).unwrap();
    let surfaces = sample_link_surfaces(&model, &meshes, fixtures::PLATE_PAIR_DENSITY, 1).unwrap();
    let opts = PalmarOptions { rays: 10_000, ..Default::default() };
    let (masked, _) = compute_palmar_mask(&model, &meshes, &surfaces, &[], &opts).unwrap();
    let (inner, outer) = fixtures::plate_pair_face_split(&model, &masked);
    let frac = |v: &[bool]| v.iter().filter(|&&p| p).count() as f64 / v.len() as f64;
    let (a, b) = (frac(&inner), 1.0 - frac(&outer));
    Outcome {
        pass: a >= 0.98 && b >= 0.98,
        detail: format!("inner faces palmar {a:.4} of {}, outer faces non-palmar {b:.4} of {}", inner.len(), outer.len()),
    }
}

#[test]
fn acceptance() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, gradient_oracle),
        (2, barrier_continuity),
        (3, force_closure_algebra),
        (4, sphere_planning),
        (5, determinism),
        (6, noise_trend),
        (7, refinement_ladder),
        (8, epsilon_sanity),
        (9, fk_correctness),
        (10, palmar_mask),
    ];
    let mut failed = Vec::new();
    for (n, check) in criteria {
        let o = check();
        report(n, &o);
        if !o.pass {
            failed.push(n);
        }
    }
    say(format!("acceptance: {} of 10 pass, failing {failed:?}", 10 - failed.len()));
}
