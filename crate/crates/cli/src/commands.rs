//! Subcommand bodies. Each returns `Ok` for exit 0 or a [`CliError`]
//! carrying the exit code; output files are complete in both cases.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gradgrasp::gripper::GripperAssets;
use gradgrasp::planner::{select_best, Execution, GraspResult, Planner, PlannerConfig, PlannerError};
use gradgrasp::pointcloud::{add_gaussian_noise, CloudFormat, PointCloud};
use gradgrasp::quality::{quality_report, valid_proportion};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::records::{parse_poses, write_line, GraspRecord, Header, SCHEMA};
use crate::{CliError, CliResult};

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Common {
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub use_cache: bool,
    pub timing: bool,
}

impl Common {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            seed: None,
            out: None,
            jobs: None,
            use_cache: true,
            timing: false,
        }
    }

    fn planner_config(&self, samples: Option<usize>) -> PlannerConfig {
        let mut cfg = self.config.planner.clone();
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = samples {
            cfg.samples = n;
        }
        cfg
    }

    fn exec(&self) -> Execution {
        Execution::parallel(self.jobs)
    }

    fn out_path(&self) -> Option<PathBuf> {
        self.out.clone().or_else(|| self.config.io.output.clone())
    }

    fn writer(&self) -> CliResult<Box<dyn Write>> {
        match self.out_path() {
            Some(p) => create(&p),
            None => Ok(Box::new(std::io::stdout().lock())),
        }
    }

    fn gripper_name(&self) -> String {
        file_stem(&self.config.gripper.urdf)
    }
}

fn create(path: &Path) -> CliResult<Box<dyn Write>> {
    let f = File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn flush(mut out: Box<dyn Write>) -> CliResult<()> {
    out.flush().map_err(|e| CliError::Input(format!("write failed: {e}")))
}

fn planner_error(e: PlannerError) -> CliError {
    match e {
        PlannerError::EmptyMask => CliError::NoValid(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub kind: String,
    pub total: usize,
    pub valid: usize,
    pub valid_proportion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ms_per_valid: Option<f64>,
    pub best: Option<GraspRecord>,
    pub best_epsilon: Option<f64>,
}

fn summarize(common: &Common, assets: &GripperAssets, cloud: &PointCloud, results: &[GraspResult]) -> Summary {
    let valid = results.iter().filter(|r| r.valid).count();
    let best = select_best(results);
    let best_index = best.and_then(|b| results.iter().position(|r| std::ptr::eq(r, b)));
    let best_epsilon = best.and_then(|b| {
        let points = assets.surfaces.weighted_points();
        quality_report(&assets.model, &points, &b.pose, cloud, &common.config.barrier, &common.config.quality, common.config.planner.contacts)
            .map(|q| q.epsilon)
            .ok()
    });
    let mean_ms = (common.timing && valid > 0)
        .then(|| results.iter().filter(|r| r.valid).map(|r| r.wall_time_ms).sum::<f64>() / valid as f64);
    Summary {
        schema: SCHEMA,
        kind: "summary".into(),
        total: results.len(),
        valid,
        valid_proportion: valid_proportion(results).unwrap_or(0.0),
        mean_ms_per_valid: mean_ms,
        best: best.zip(best_index).map(|(b, i)| GraspRecord::from_result(i, b, common.timing)),
        best_epsilon,
    }
}

fn write_results(out: &mut dyn Write, header: &Header, results: &[GraspResult], summary: &Summary, timing: bool) -> CliResult<()> {
    let mut out = out;
    write_line(&mut out, header)?;
    for (i, r) in results.iter().enumerate() {
        write_line(&mut out, &GraspRecord::from_result(i, r, timing))?;
    }
    write_line(&mut out, summary)
}

fn run_planner(common: &Common, assets: &GripperAssets, cloud: &PointCloud, cfg: PlannerConfig, mask: Option<&[i64]>) -> CliResult<Vec<GraspResult>> {
    let planner = Planner::new(assets, cloud, common.config.barrier, cfg);
    let exec = common.exec();
    let started = std::time::Instant::now();
    let results = match mask {
        Some(m) => planner.plan_masked(m, &exec),
        None => planner.plan(&exec),
    }
    .map_err(planner_error)?;
    log::info!(
        "{} poses, {} valid, {:.1} ms",
        results.len(),
        results.iter().filter(|r| r.valid).count(),
        started.elapsed().as_secs_f64() * 1e3
    );
    Ok(results)
}

/// Plans on one object and writes header, records and summary.
pub fn plan(common: &Common, object: Option<&Path>, samples: Option<usize>) -> CliResult<Summary> {
    let path = common.config.object_path(object)?;
    let cloud = common.config.load_cloud(&path)?;
    let assets = common.config.load_assets(common.use_cache)?;
    let cfg = common.planner_config(samples);
    let results = run_planner(common, &assets, &cloud, cfg.clone(), None)?;
    let summary = summarize(common, &assets, &cloud, &results);
    let header = Header::new("plan", &common.gripper_name(), assets.model.dof(), &path.display().to_string(), cfg.seed);
    let mut out = common.writer()?;
    write_results(&mut out, &header, &results, &summary, common.timing)?;
    flush(out)?;
    no_valid_check(summary)
}

fn no_valid_check(summary: Summary) -> CliResult<Summary> {
    if summary.valid == 0 {
        return Err(CliError::NoValid(format!("no valid grasp among {} poses", summary.total)));
    }
    Ok(summary)
}

/// Labels file: one integer per line, `#` comments and blank lines ignored.
pub fn parse_labels(text: &str) -> CliResult<Vec<i64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.trim()
                .parse::<i64>()
                .map_err(|e| CliError::Input(format!("labels line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn masked(common: &Common, object: Option<&Path>, labels: &Path, mask: &[i64], samples: Option<usize>) -> CliResult<Summary> {
    let path = common.config.object_path(object)?;
    let cloud = common.config.load_cloud(&path)?;
    let text = std::fs::read_to_string(labels).map_err(|e| CliError::Input(format!("{}: {e}", labels.display())))?;
    let cloud = cloud
        .with_labels(parse_labels(&text)?)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let assets = common.config.load_assets(common.use_cache)?;
    let cfg = common.planner_config(samples);
    let results = run_planner(common, &assets, &cloud, cfg.clone(), Some(mask))?;
    let summary = summarize(common, &assets, &cloud, &results);
    let header = Header::new("masked", &common.gripper_name(), assets.model.dof(), &path.display().to_string(), cfg.seed);
    let mut out = common.writer()?;
    write_results(&mut out, &header, &results, &summary, common.timing)?;
    flush(out)?;
    no_valid_check(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub output: String,
    pub records: usize,
    pub valid: usize,
    pub valid_proportion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub objects: Vec<ManifestEntry>,
    pub skipped: Vec<Skipped>,
    pub total_records: usize,
    pub total_valid: usize,
    /// Valid count over record count across objects.
    pub valid_proportion: f64,
}

/// Plans every point-cloud file in `dir` (sorted by name) into
/// `<out>/<stem>.jsonl` plus `<out>/manifest.json`.
pub fn batch(common: &Common, dir: &Path, samples: Option<usize>) -> CliResult<Manifest> {
    let out_dir = common.out_path().unwrap_or_else(|| dir.join("grasps"));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Input(format!("{}: {e}", out_dir.display())))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && CloudFormat::from_path(p).is_some())
        .collect();
    files.sort();
    let assets = common.config.load_assets(common.use_cache)?;
    let cfg = common.planner_config(samples);

    let mut objects = Vec::new();
    let mut skipped = Vec::new();
    for file in &files {
        let cloud = match common.config.load_cloud(file) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("skipping {}: {e}", file.display());
                skipped.push(Skipped {
                    file: file.display().to_string(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        let started = std::time::Instant::now();
        let results = match run_planner(common, &assets, &cloud, cfg.clone(), None) {
            Ok(r) => r,
            Err(e) => {
                skipped.push(Skipped {
                    file: file.display().to_string(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let summary = summarize(common, &assets, &cloud, &results);
        let name = file_stem(file);
        let target = out_dir.join(format!("{name}.jsonl"));
        let header = Header::new("batch", &common.gripper_name(), assets.model.dof(), &file.display().to_string(), cfg.seed);
        let mut out = create(&target)?;
        write_results(&mut out, &header, &results, &summary, common.timing)?;
        flush(out)?;
        objects.push(ManifestEntry {
            name,
            file: file.display().to_string(),
            output: target.display().to_string(),
            records: summary.total,
            valid: summary.valid,
            valid_proportion: summary.valid_proportion,
            wall_time_ms: common.timing.then_some(elapsed),
        });
    }
    let total_records: usize = objects.iter().map(|o| o.records).sum();
    let total_valid: usize = objects.iter().map(|o| o.valid).sum();
    let manifest = Manifest {
        schema: SCHEMA,
        valid_proportion: if total_records > 0 { total_valid as f64 / total_records as f64 } else { 0.0 },
        objects,
        skipped,
        total_records,
        total_valid,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Input(e.to_string()))?;
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if manifest.objects.is_empty() {
        return Err(CliError::Input(format!("no object in {} could be planned", dir.display())));
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub steps: usize,
    pub median_bsm: f64,
    pub bsm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub schema: u32,
    pub kind: String,
    pub ladder: Vec<LadderRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Refines the poses in `poses` under each budget of `steps` (0 is always
/// included) and writes the records of the largest budget plus the ladder.
pub fn refine(common: &Common, poses: &Path, object: Option<&Path>, steps: &[usize]) -> CliResult<RefineReport> {
    let text = std::fs::read_to_string(poses).map_err(|e| CliError::Input(format!("{}: {e}", poses.display())))?;
    let initial = parse_poses(&text)?;
    if initial.is_empty() {
        return Err(CliError::Input(format!("{} holds no poses", poses.display())));
    }
    let path = common.config.object_path(object)?;
    let cloud = common.config.load_cloud(&path)?;
    let assets = common.config.load_assets(common.use_cache)?;
    let dof = assets.model.dof();
    if let Some(i) = initial.iter().position(|p| p.joints.len() != dof) {
        return Err(CliError::Input(format!("pose {}: {} joints, gripper has {dof}", i + 1, initial[i].joints.len())));
    }
    let mut ladder: Vec<usize> = steps.to_vec();
    ladder.push(0);
    ladder.sort_unstable();
    ladder.dedup();

    let cfg = common.planner_config(None);
    let planner = Planner::new(&assets, &cloud, common.config.barrier, cfg.clone());
    let exec = common.exec();
    let mut rows = Vec::new();
    let mut last = Vec::new();
    for &budget in &ladder {
        let started = std::time::Instant::now();
        let results = planner.refine_poses(&initial, Some(budget), &exec).map_err(planner_error)?;
        let bsm: Vec<f64> = results.iter().map(|r| r.breakdown.total).collect();
        rows.push(LadderRow {
            steps: budget,
            median_bsm: median(&bsm),
            bsm,
            wall_time_ms: common.timing.then(|| started.elapsed().as_secs_f64() * 1e3),
        });
        last = results;
    }
    let report = RefineReport {
        schema: SCHEMA,
        kind: "refine_report".into(),
        ladder: rows,
    };
    let header = Header::new("refine", &common.gripper_name(), dof, &path.display().to_string(), cfg.seed);
    let mut out = common.writer()?;
    write_line(&mut out, &header)?;
    for (i, r) in last.iter().enumerate() {
        write_line(&mut out, &GraspRecord::from_result(i, r, common.timing))?;
    }
    write_line(&mut out, &report)?;
    flush(out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub valid_proportion: f64,
    pub mean_ms_per_valid: Option<f64>,
}

/// For each sigma: perturb the cloud, plan, record the valid proportion.
/// With `repeats > 1` the noise and planning seeds advance per repeat and
/// the median proportion is reported.
pub fn noise_sweep(common: &Common, object: Option<&Path>, sigmas: &[f64], repeats: usize, samples: Option<usize>) -> CliResult<Vec<SweepRow>> {
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(CliError::Config(format!("sigma must be a finite non-negative number, got {s}")));
    }
    if repeats == 0 {
        return Err(CliError::Config("repeats must be at least 1".into()));
    }
    let path = common.config.object_path(object)?;
    let cloud = common.config.load_cloud(&path)?;
    let assets = common.config.load_assets(common.use_cache)?;
    let base = common.planner_config(samples);
    let mut rows = Vec::new();
    for &sigma in sigmas {
        let mut props = Vec::new();
        let mut times = Vec::new();
        for k in 0..repeats as u64 {
            let mut cfg = base.clone();
            cfg.seed = base.seed.wrapping_add(k);
            let noisy = add_gaussian_noise(&cloud, sigma, cfg.seed);
            let results = run_planner(common, &assets, &noisy, cfg, None)?;
            props.push(valid_proportion(&results).unwrap_or(0.0));
            times.extend(results.iter().filter(|r| r.valid).map(|r| r.wall_time_ms));
        }
        rows.push(SweepRow {
            sigma,
            valid_proportion: median(&props),
            mean_ms_per_valid: (common.timing && !times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        });
    }
    let mut out = common.writer()?;
    let io = |e: std::io::Error| CliError::Input(format!("write failed: {e}"));
    if common.timing {
        writeln!(out, "sigma,valid_proportion,mean_ms_per_valid").map_err(io)?;
    } else {
        writeln!(out, "sigma,valid_proportion").map_err(io)?;
    }
    for r in &rows {
        if common.timing {
            let t = r.mean_ms_per_valid.map(|t| format!("{t:.3}")).unwrap_or_default();
            writeln!(out, "{},{},{t}", r.sigma, r.valid_proportion).map_err(io)?;
        } else {
            writeln!(out, "{},{}", r.sigma, r.valid_proportion).map_err(io)?;
        }
    }
    flush(out)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightmapOutcome {
    pub cache_hit: bool,
    pub palmar: usize,
    pub samples: usize,
    pub ply: PathBuf,
}

/// Builds (or loads) the weight map and writes a PLY of every sample in the
/// base frame at the spread pose, red channel scaled by weight.
pub fn weightmap(common: &Common) -> CliResult<WeightmapOutcome> {
    let assets = common.config.load_assets(common.use_cache)?;
    let ply = common.out_path().unwrap_or_else(|| common.config.gripper.urdf.with_extension("weights.ply"));
    let pose = gradgrasp::pose::PoseState::new(Default::default(), Default::default(), assets.q_open.clone());
    let fk = assets.model.forward_kinematics(&pose).map_err(|e| CliError::Input(e.to_string()))?;
    let max_w = assets
        .surfaces
        .links
        .iter()
        .flat_map(|l| l.weights.iter().copied())
        .fold(0.0, f64::max);
    let mut rows = Vec::new();
    let mut palmar = 0;
    for (li, link) in assets.surfaces.links.iter().enumerate() {
        for i in 0..link.len() {
            let p = fk[li] * nalgebra::Point3::from(link.points[i]);
            let n = fk[li].rotation * link.normals[i];
            let w = link.weights[i];
            palmar += usize::from(link.palmar[i]);
            let shade = if max_w > 0.0 { (255.0 * w / max_w).round() as u8 } else { 0 };
            let (r, g, b) = if w > 0.0 { (shade.max(64), 32, 32) } else { (96, 96, 160) };
            rows.push(format!("{} {} {} {} {} {} {r} {g} {b} {w}", p.x, p.y, p.z, n.x, n.y, n.z));
        }
    }
    let mut out = create(&ply)?;
    let io = |e: std::io::Error| CliError::Input(format!("write failed: {e}"));
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty double nx\nproperty double ny\nproperty double nz\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty double weight\nend_header\n",
        rows.len()
    )
    .map_err(io)?;
    for r in &rows {
        writeln!(out, "{r}").map_err(io)?;
    }
    flush(out)?;
    log::info!("{} samples, {palmar} palmar, written to {}", rows.len(), ply.display());
    Ok(WeightmapOutcome {
        cache_hit: assets.cache_hit,
        palmar,
        samples: rows.len(),
        ply,
    })
}
