//! JSONL records: a header line, one line per grasp, a summary line.

use std::io::Write;

use gradgrasp::objective::ObjectiveBreakdown;
use gradgrasp::planner::GraspResult;
use gradgrasp::pose::PoseState;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: u32,
    pub kind: String,
    pub command: String,
    /// Component order of every `rotation` field.
    pub quaternion: String,
    pub gripper: String,
    pub dof: usize,
    pub object: String,
    pub seed: u64,
}

impl Header {
    pub fn new(command: &str, gripper: &str, dof: usize, object: &str, seed: u64) -> Self {
        Self {
            schema: SCHEMA,
            kind: "header".into(),
            command: command.into(),
            quaternion: "wxyz".into(),
            gripper: gripper.into(),
            dof,
            object: object.into(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub schema: u32,
    pub kind: String,
    pub index: usize,
    /// Unit quaternion, (w, x, y, z).
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub joints: Vec<f64>,
    pub energy: ObjectiveBreakdown,
    pub initial_energy: ObjectiveBreakdown,
    pub converged: bool,
    pub collision_free: bool,
    pub self_collision_free: bool,
    pub within_joint_limits: bool,
    pub valid: bool,
    pub sample_index: Option<usize>,
    pub anchor_label: Option<i64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl GraspRecord {
    pub fn from_result(index: usize, r: &GraspResult, timing: bool) -> Self {
        let q = r.pose.rotation.quaternion();
        let t = r.pose.translation;
        Self {
            schema: SCHEMA,
            kind: "grasp".into(),
            index,
            rotation: [q.w, q.i, q.j, q.k],
            translation: [t.x, t.y, t.z],
            joints: r.pose.joints.clone(),
            energy: r.breakdown,
            initial_energy: r.initial_breakdown,
            converged: r.converged,
            collision_free: r.collision_free,
            self_collision_free: r.self_collision_free,
            within_joint_limits: r.within_joint_limits,
            valid: r.valid,
            sample_index: r.sample_index,
            anchor_label: r.anchor_label,
            outer_iterations: r.outer_iterations,
            inner_iterations: r.inner_iterations,
            wall_time_ms: timing.then_some(r.wall_time_ms),
            note: r.note.clone(),
        }
    }
}

/// The pose fields of any JSONL line; extra fields are ignored.
#[derive(Debug, Clone, Deserialize)]
struct PoseRow {
    rotation: [f64; 4],
    translation: [f64; 3],
    joints: Vec<f64>,
}

/// Poses from a JSONL file of grasp records or bare
/// `{rotation, translation, joints}` rows. Header and summary lines are
/// skipped. Errors name the 1-based line.
pub fn parse_poses(text: &str) -> CliResult<Vec<PoseState>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| CliError::Input(format!("row {row}: {e}")))?;
        if let Some(kind) = value.get("kind").and_then(|k| k.as_str()) {
            if kind != "grasp" {
                continue;
            }
        }
        let pose: PoseRow = serde_json::from_value(value).map_err(|e| CliError::Input(format!("row {row}: {e}")))?;
        let finite = pose.rotation.iter().chain(&pose.translation).chain(&pose.joints).all(|v| v.is_finite());
        let [w, x, y, z] = pose.rotation;
        let q = Quaternion::new(w, x, y, z);
        if !finite || q.norm() < 1e-9 {
            return Err(CliError::Input(format!("row {row}: pose has non-finite values or a zero quaternion")));
        }
        let [tx, ty, tz] = pose.translation;
        out.push(PoseState::new(UnitQuaternion::from_quaternion(q), Vector3::new(tx, ty, tz), pose.joints));
    }
    Ok(out)
}

pub fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> CliResult<()> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Input(format!("serialization failed: {e}")))?;
    writeln!(out, "{text}").map_err(|e| CliError::Input(format!("write failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GraspRecord {
        GraspRecord {
            schema: SCHEMA,
            kind: "grasp".into(),
            index: 3,
            rotation: [0.9238795325112867, 0.0, 0.3826834323650898, 0.0],
            translation: [0.1, -2.5e-7, 1.0 / 3.0],
            joints: vec![0.07000000000000001, std::f64::consts::PI],
            energy: ObjectiveBreakdown {
                e_p: 0.1,
                e_n: 1.0 / 7.0,
                e_fc: 2f64.sqrt(),
                e_b: 1e-300,
                e_bq: 0.0,
                total: 1.0 + 1e-15,
            },
            initial_energy: ObjectiveBreakdown::default(),
            converged: true,
            collision_free: true,
            self_collision_free: false,
            within_joint_limits: true,
            valid: false,
            sample_index: Some(17),
            anchor_label: Some(-2),
            outer_iterations: 4,
            inner_iterations: 31,
            wall_time_ms: None,
            note: Some("x".into()),
        }
    }

    #[test]
    fn record_round_trips() {
        let r = sample();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<GraspRecord>(&text).unwrap(), r);
        assert!(!text.contains("wall_time_ms"));
    }

    #[test]
    fn poses_from_records_and_rows() {
        let mut text = serde_json::to_string(&Header::new("plan", "g", 2, "o", 0)).unwrap();
        text.push('\n');
        text.push_str(&serde_json::to_string(&sample()).unwrap());
        text.push_str("\n{\"rotation\":[1,0,0,0],\"translation\":[0,0,1],\"joints\":[0.1,0.2]}\n");
        text.push_str("{\"kind\":\"summary\",\"valid\":0}\n");
        let poses = parse_poses(&text).unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[1].translation, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn bad_rows_name_the_row() {
        let text = "{\"rotation\":[1,0,0,0],\"translation\":[0,0,1],\"joints\":[0.1]}\n{\"rotation\":[1,0,0,0],\"translation\":[NaN,0,1],\"joints\":[0.1]}\n";
        let err = parse_poses(text).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("row 2"), "{err}");
        let zero = "{\"rotation\":[0,0,0,0],\"translation\":[0,0,1],\"joints\":[]}\n";
        assert!(parse_poses(zero).unwrap_err().to_string().contains("row 1"));
    }
}
