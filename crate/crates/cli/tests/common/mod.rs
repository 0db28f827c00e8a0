#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gradgrasp::fixtures;
use gradgrasp::pointcloud::PointCloud;

/// Temporary directory holding the plate gripper, a config and clouds.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

pub fn write_xyzn(path: &Path, cloud: &PointCloud) {
    let mut text = String::new();
    for (p, n) in cloud.positions().iter().zip(cloud.normals()) {
        text += &format!("{:?} {:?} {:?} {:?} {:?} {:?}\n", p.x, p.y, p.z, n.x, n.y, n.z);
    }
    std::fs::write(path, text).unwrap();
}

impl Workspace {
    pub fn new() -> Self {
        Self::with_config("")
    }

    /// `extra` is appended to the base config.
    pub fn with_config(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("plate.urdf"), fixtures::PLATE_GRIPPER_URDF).unwrap();
        write_xyzn(&dir.path().join("sphere.xyzn"), &fixtures::sphere_fixture());
        let config = format!(
            "seed = 7\n[gripper]\nurdf = \"plate.urdf\"\ndensity = {}\nq_open = [{}]\nd_gripper = {}\n{extra}",
            fixtures::PLATE_GRIPPER_DENSITY,
            fixtures::PLATE_GRIPPER_SPREAD,
            fixtures::PLATE_GRIPPER_STANDOFF,
        );
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.path("run.toml")
    }

    pub fn sphere(&self) -> PathBuf {
        self.path("sphere.xyzn")
    }

    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gradgrasp"))
            .args(args)
            .env_remove("GRADGRASP_MESH_ROOT")
            .output()
            .unwrap()
    }

    /// `cmd --config run.toml <rest>`
    pub fn cmd(&self, cmd: &str, rest: &[&str]) -> Output {
        let config = self.config();
        let mut args = vec![cmd, "--config", config.to_str().unwrap()];
        args.extend_from_slice(rest);
        self.run(&args)
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn lines(o: &Output) -> Vec<serde_json::Value> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

pub fn grasps(o: &Output) -> Vec<serde_json::Value> {
    lines(o).into_iter().filter(|v| v["kind"] == "grasp").collect()
}
