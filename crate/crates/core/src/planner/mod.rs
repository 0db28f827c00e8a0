//! Nested-loop grasp optimization: sample anchors on the object, build
//! approach poses, descend on the frozen energy, re-match, repeat.

mod collision;
mod exec;

use std::time::Instant;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collision::{effective_adjacency, joint_values_within_limits, pose_collision_check, CollisionFlags};
pub use exec::Execution;

use crate::gripper::{GripperAssets, GripperError, SurfacePoint};
use crate::objective::{frozen_gradient, gap_jacobian, restate, signed_gaps, total_energy, BarrierParams, Frozen, ObjectiveBreakdown, PoseGradient};
use crate::pointcloud::{fps_sample, fps_sample_among, PointCloud, SampleSet};
use crate::pose::PoseState;

/// Per-state step scale below which the inner loop gives up.
const MIN_STEP_SCALE: f64 = 1.0 / 1024.0;

/// Rounds of tangent-plane projection tried before a step is rejected.
const MAX_PROJECTIONS: usize = 4;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no point carries a label in the mask")]
    EmptyMask,
    #[error("point cloud has no labels")]
    MissingLabels,
    #[error("no usable anchor samples")]
    NoSamples,
    #[error(transparent)]
    Gripper(#[from] GripperError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Plain,
    Momentum { mu: f64 },
    Adam { beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub epsilon0: f64,
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub optimizer: Optimizer,
    pub d_gripper: f64,
    /// Largest distance any gripper sample may travel in one step.
    pub max_move: f64,
    /// Clearance kept between gripper samples and their matched tangent planes.
    pub contact_margin: f64,
    /// Palm approach direction in the gripper base frame.
    pub approach_axis: [f64; 3],
    pub batch_size: usize,
    /// Number of initial poses (anchor samples).
    pub samples: usize,
    pub contacts: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            epsilon0: 1e-6,
            n1: 30,
            n2: 10,
            alpha: 0.02,
            beta: 0.005,
            gamma: 0.02,
            optimizer: Optimizer::Momentum { mu: 0.9 },
            d_gripper: 0.15,
            max_move: 0.005,
            contact_margin: 0.001,
            approach_axis: [0.0, 0.0, 1.0],
            batch_size: 64,
            samples: 40,
            contacts: 4,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("epsilon0", self.epsilon0),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("d_gripper", self.d_gripper),
            ("max_move", self.max_move),
        ];
        if !(self.contact_margin >= 0.0) {
            return Err(format!("contact_margin must be non-negative, got {}", self.contact_margin));
        }
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err("n1 and n2 must be at least 1".into());
        }
        if self.batch_size == 0 || self.samples == 0 || self.contacts == 0 {
            return Err("batch_size, samples and contacts must be at least 1".into());
        }
        if Vector3::from(self.approach_axis).norm() < 1e-9 {
            return Err("approach_axis must be non-zero".into());
        }
        match self.optimizer {
            Optimizer::Momentum { mu } if !(0.0..1.0).contains(&mu) => Err(format!("momentum mu must be in [0, 1), got {mu}")),
            Optimizer::Adam { beta1, beta2 } if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) => {
                Err("adam betas must be in [0, 1)".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspResult {
    pub pose: PoseState,
    pub breakdown: ObjectiveBreakdown,
    pub initial_breakdown: ObjectiveBreakdown,
    pub converged: bool,
    pub collision_free: bool,
    pub self_collision_free: bool,
    pub within_joint_limits: bool,
    pub valid: bool,
    /// Cloud index of the anchor point; `None` for externally supplied poses.
    pub sample_index: Option<usize>,
    pub anchor_label: Option<i64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_ms: f64,
    pub note: Option<String>,
}

impl GraspResult {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &GraspResult) -> bool {
        let mut a = self.clone();
        a.wall_time_ms = other.wall_time_ms;
        a == *other
    }
}

/// One pose to optimize plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeded {
    pub pose: PoseState,
    pub sample_index: Option<usize>,
    pub anchor_label: Option<i64>,
}

fn approach_frame(axis: &Vector3<f64>, target: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(axis, target).unwrap_or_else(|| {
        // opposite vectors: half turn about any axis orthogonal to `axis`
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis.cross(&helper)), std::f64::consts::PI)
    })
}

/// Palm facing each sampled point along -n at `d_gripper` standoff, random
/// roll about the approach axis, fingers at `q_open`. Slots beyond the sample
/// count reuse anchors cyclically. Points with unusable normals are skipped.
pub fn init_poses(cloud: &PointCloud, samples: &SampleSet, count: usize, q_open: &[f64], config: &PlannerConfig) -> Vec<Seeded> {
    let axis = Vector3::from(config.approach_axis).normalize();
    let usable: Vec<usize> = samples
        .indices
        .iter()
        .copied()
        .filter(|&i| {
            let n = cloud.normals()[i];
            let ok = n.iter().all(|v| v.is_finite()) && (n.norm() - 1.0).abs() < 1e-6;
            if !ok {
                log::warn!("skipping anchor {i}: degenerate normal");
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|slot| {
            let i = usable[slot % usable.len()];
            let p = cloud.positions()[i];
            let n = cloud.normals()[i];
            let mut rng = ChaCha8Rng::seed_from_u64(samples.seed ^ (slot as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let roll = rng.random_range(0.0..std::f64::consts::TAU);
            let align = approach_frame(&axis, &(-n));
            let spin = UnitQuaternion::from_axis_angle(&Unit::new_normalize(-n), roll);
            Seeded {
                pose: PoseState::new(spin * align, p + config.d_gripper * n, q_open.to_vec()),
                sample_index: Some(i),
                anchor_label: cloud.label(i),
            }
        })
        .collect()
}

struct OptState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, len: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        match self.kind {
            Optimizer::Plain => g.to_vec(),
            Optimizer::Momentum { mu } => {
                for (m, gi) in self.m.iter_mut().zip(g) {
                    *m = mu * *m + gi;
                }
                self.m.clone()
            }
            Optimizer::Adam { beta1, beta2 } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                self.m
                    .iter_mut()
                    .zip(self.v.iter_mut())
                    .zip(g)
                    .map(|((m, v), gi)| {
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        (*m / c1) / ((*v / c2).sqrt() + 1e-8)
                    })
                    .collect()
            }
        }
    }
}

/// Descent step in pose coordinates for direction `dir`.
fn step_delta(dir: &[f64], config: &PlannerConfig, scale: f64) -> Vec<f64> {
    dir.iter()
        .enumerate()
        .map(|(i, d)| {
            let rate = match i {
                0..3 => config.alpha,
                3..6 => config.beta,
                _ => config.gamma,
            };
            -rate * scale * d
        })
        .collect()
}

fn apply_delta(pose: &PoseState, delta: &[f64]) -> PoseState {
    let mut out = pose.clone();
    out.rotate_local(&Vector3::new(delta[0], delta[1], delta[2]));
    out.translation += Vector3::new(delta[3], delta[4], delta[5]);
    for (q, d) in out.joints.iter_mut().zip(&delta[6..]) {
        *q += d;
    }
    out
}

/// Shared, read-only inputs of one planning run.
pub struct Planner<'a> {
    pub assets: &'a GripperAssets,
    pub cloud: &'a PointCloud,
    pub params: BarrierParams,
    pub config: PlannerConfig,
    points: Vec<SurfacePoint>,
}

struct Budget {
    gate_initial_collision: bool,
    max_inner_total: Option<usize>,
}

impl<'a> Planner<'a> {
    pub fn new(assets: &'a GripperAssets, cloud: &'a PointCloud, params: BarrierParams, config: PlannerConfig) -> Self {
        Self {
            points: assets.surfaces.weighted_points(),
            assets,
            cloud,
            params,
            config,
        }
    }

    fn collision_free(&self, pose: &PoseState) -> bool {
        let f = pose_collision_check(self.assets, pose, self.cloud);
        f.collision_free && f.self_collision_free
    }

    fn evaluate(&self, pose: &PoseState) -> ObjectiveBreakdown {
        total_energy(&self.assets.model, &self.points, pose, self.cloud, &self.params).unwrap_or(ObjectiveBreakdown {
            e_p: f64::NAN,
            e_n: f64::NAN,
            e_fc: f64::NAN,
            e_b: f64::NAN,
            e_bq: f64::NAN,
            total: f64::NAN,
        })
    }

    fn finish(&self, seeded: &Seeded, pose: PoseState, initial: ObjectiveBreakdown, converged: bool, iters: (usize, usize), start: Instant, note: Option<String>) -> GraspResult {
        let model = &self.assets.model;
        let flags = pose_collision_check(self.assets, &pose, self.cloud);
        let within = joint_values_within_limits(model, &pose.joints);
        let breakdown = self.evaluate(&pose);
        let converged = converged && breakdown.total.is_finite();
        GraspResult {
            valid: converged && flags.collision_free && flags.self_collision_free && within,
            pose,
            breakdown,
            initial_breakdown: initial,
            converged,
            collision_free: flags.collision_free,
            self_collision_free: flags.self_collision_free,
            within_joint_limits: within,
            sample_index: seeded.sample_index,
            anchor_label: seeded.anchor_label,
            outer_iterations: iters.0,
            inner_iterations: iters.1,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            note,
        }
    }

    fn optimize_one(&self, seeded: &Seeded, budget: &Budget) -> GraspResult {
        let start = Instant::now();
        let model = &self.assets.model;
        let cfg = &self.config;
        let initial = self.evaluate(&seeded.pose);
        if seeded.pose.joints.len() != model.dof() || !seeded.pose.is_finite() {
            let note = Some("initial pose has wrong dof or non-finite values".to_string());
            return self.finish(seeded, seeded.pose.clone(), initial, false, (0, 0), start, note);
        }
        if budget.gate_initial_collision {
            if !self.collision_free(&seeded.pose) {
                let note = Some("initial pose in collision".to_string());
                return self.finish(seeded, seeded.pose.clone(), initial, false, (0, 0), start, note);
            }
        }
        let mut pose = seeded.pose.clone();
        let mut opt = OptState::new(cfg.optimizer, 6 + model.dof());
        let mut converged = false;
        let mut outer = 0;
        let mut inner_total = 0;
        let mut note = None;
        let mut scale = 1.0;
        let mut prev_end = f64::INFINITY;
        let out_of_budget = |used: usize| budget.max_inner_total.is_some_and(|b| used >= b);
        'outer: while outer < cfg.n1 && !out_of_budget(inner_total) {
            outer += 1;
            let frozen = match Frozen::new(model, &self.points, &pose, self.cloud, cfg.contacts) {
                Ok(f) => f,
                Err(e) => {
                    note = Some(e.to_string());
                    break;
                }
            };
            let step = |p: &PoseState| -> Option<(ObjectiveBreakdown, PoseGradient)> {
                frozen_gradient(model, &frozen, p, &self.params).ok()
            };
            let probe = |p: &PoseState| {
                restate(model, &frozen, p)
                    .map(|s| (signed_gaps(&s), s.corr.pairs.iter().map(|c| c.x).collect::<Vec<_>>()))
                    .unwrap_or_default()
            };
            let Some((mut e, mut g)) = step(&pose) else {
                note = Some("non-finite gradient".into());
                break;
            };
            let (mut gap, mut xs) = probe(&pose);
            let mut active: Vec<(usize, Vec<f64>)> = Vec::new();
            opt.reset();
            // re-matching undid the last iteration's descent: damp the next one
            if e.total > prev_end {
                scale *= 0.5;
            }
            let mut inner = 0;
            // |E* - E_prev| of the last step; a step that cannot be taken changes nothing
            let mut change = f64::INFINITY;
            while inner < cfg.n2 && !out_of_budget(inner_total) {
                inner += 1;
                inner_total += 1;
                let dir = opt.direction(&g.to_vec());
                let mut delta = step_delta(&dir, cfg, scale);
                let mut trial = apply_delta(&pose, &delta);
                let (mut trial_gap, mut trial_xs) = probe(&trial);
                let moved = xs.iter().zip(&trial_xs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                if moved > cfg.max_move {
                    delta.iter_mut().for_each(|d| *d *= cfg.max_move / moved);
                    trial = apply_delta(&pose, &delta);
                    (trial_gap, trial_xs) = probe(&trial);
                }
                // slide along tangent planes that the step would cross
                let mut crosses = false;
                for _ in 0..MAX_PROJECTIONS {
                    let newly: Vec<usize> = (0..gap.len())
                        .filter(|&i| gap[i] > 0.0 && trial_gap[i] < gap[i].min(cfg.contact_margin))
                        .collect();
                    crosses = !newly.is_empty();
                    if !crosses {
                        break;
                    }
                    for i in newly {
                        if !active.iter().any(|(k, _)| *k == i) {
                            match gap_jacobian(model, &frozen, &pose, i) {
                                Ok(jac) => active.push((i, jac.to_vec())),
                                Err(_) => break,
                            }
                        }
                    }
                    for _ in 0..2 {
                        for (k, jac) in &active {
                            let rate: f64 = jac.iter().zip(&delta).map(|(a, b)| a * b).sum();
                            let jj: f64 = jac.iter().map(|a| a * a).sum();
                            // close at most half of what is left above the margin
                            let excess = rate + 0.5 * (gap[*k] - cfg.contact_margin).max(0.0);
                            if excess < 0.0 && jj > 0.0 {
                                delta.iter_mut().zip(jac).for_each(|(d, a)| *d -= excess / jj * a);
                            }
                        }
                    }
                    trial = apply_delta(&pose, &delta);
                    (trial_gap, trial_xs) = probe(&trial);
                }
                match step(&trial) {
                    Some((e_new, g_new)) if e_new.total <= e.total && !crosses => {
                        change = e.total - e_new.total;
                        pose = trial;
                        gap = trial_gap;
                        xs = trial_xs;
                        active.clear();
                        e = e_new;
                        g = g_new;
                        if change < cfg.epsilon0 {
                            break;
                        }
                    }
                    _ => {
                        scale *= 0.5;
                        opt.reset();
                        if scale < MIN_STEP_SCALE {
                            change = 0.0;
                            break;
                        }
                    }
                }
            }
            if change < cfg.epsilon0 {
                converged = true;
                break 'outer;
            }
            prev_end = e.total;
        }
        self.finish(seeded, pose, initial, converged, (outer, inner_total), start, note)
    }

    /// Optimizes every state independently; output order follows input order.
    pub fn optimize_batch(&self, states: &[Seeded], exec: &Execution) -> Vec<GraspResult> {
        self.run(states, exec, &Budget {
            gate_initial_collision: true,
            max_inner_total: None,
        })
    }

    fn run(&self, states: &[Seeded], exec: &Execution, budget: &Budget) -> Vec<GraspResult> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(self.config.batch_size) {
            out.extend(exec.map(chunk, |s| self.optimize_one(s, budget)));
        }
        out
    }

    /// Refines externally supplied poses under a total inner-step budget.
    /// A budget of 0 returns the inputs with their energy evaluated.
    pub fn refine_poses(&self, initial: &[PoseState], budget: Option<usize>, exec: &Execution) -> Result<Vec<GraspResult>, PlannerError> {
        for p in initial {
            if p.joints.len() != self.assets.model.dof() {
                return Err(GripperError::DofMismatch {
                    expected: self.assets.model.dof(),
                    got: p.joints.len(),
                }
                .into());
            }
        }
        let seeded: Vec<Seeded> = initial
            .iter()
            .map(|p| Seeded {
                pose: p.clone(),
                sample_index: None,
                anchor_label: None,
            })
            .collect();
        Ok(self.run(&seeded, exec, &Budget {
            gate_initial_collision: false,
            max_inner_total: budget,
        }))
    }

    /// FPS anchors over the whole cloud, then [`Planner::optimize_batch`].
    pub fn plan(&self, exec: &Execution) -> Result<Vec<GraspResult>, PlannerError> {
        let samples = fps_sample(self.cloud, self.config.samples, self.config.seed);
        self.plan_from(&samples, exec)
    }

    /// Anchors restricted to points whose label is in `mask`; matching still
    /// uses the full cloud.
    pub fn plan_masked(&self, mask: &[i64], exec: &Execution) -> Result<Vec<GraspResult>, PlannerError> {
        let labels = self.cloud.labels().ok_or(PlannerError::MissingLabels)?;
        let candidates: Vec<usize> = (0..labels.len()).filter(|&i| mask.contains(&labels[i])).collect();
        if candidates.is_empty() {
            return Err(PlannerError::EmptyMask);
        }
        let samples = fps_sample_among(self.cloud, &candidates, self.config.samples, self.config.seed);
        self.plan_from(&samples, exec)
    }

    fn plan_from(&self, samples: &SampleSet, exec: &Execution) -> Result<Vec<GraspResult>, PlannerError> {
        let states = init_poses(self.cloud, samples, self.config.samples, &self.assets.q_open, &self.config);
        if states.is_empty() {
            return Err(PlannerError::NoSamples);
        }
        Ok(self.optimize_batch(&states, exec))
    }
}

/// Lowest-energy valid result; ties go to the lower sample index.
pub fn select_best(results: &[GraspResult]) -> Option<&GraspResult> {
    results.iter().filter(|r| r.valid).min_by(|a, b| {
        a.breakdown
            .total
            .total_cmp(&b.breakdown.total)
            .then(a.sample_index.cmp(&b.sample_index))
    })
}
