//! End-to-end mapping, evaluation, simulation and benchmarking commands.
//!
//! Per frame the mapper runs, in order: world transform, entry rate, submap
//! creation with overlap alignment when triggered, dynamic removal, grid
//! activation, batch sampling and training. A submap is replayed from its
//! key-scans and meshed when it is retired; the final submap is retired when
//! the run ends and all submap meshes are merged.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CenterMode, Config};
use crate::dynamic::{carve_free_space, classify_points, filter_static, incidence_margins, PointLabel};
use crate::error::{MapError, Result};
use crate::evaluator::{evaluate_meshes, MetricReport};
use crate::field::Mlp;
use crate::mesher::{extract_mesh, merge_meshes, Mesh, Ownership};
use crate::scan_io::{load_poses, load_scan, read_mesh, write_mesh, Pose, Scan, ScanFormat};
use crate::sparse_grid::{carry_free_space, overlap_voxels};
use crate::submap::{entry_rate, raw_center, should_create, to_local, transform_to_world, KeyScan, Submap, SubmapBox};
use crate::synth::{simulate_sequence, LidarSpec, SceneSpec, SimulationSummary, TrajectoryPoint};
use crate::trainer::{Adam, AlignTarget, LossReport, Trainer};
use crate::{mix_seed, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMode {
    /// Bounded submaps created on entry-rate drops.
    Submap,
    /// One submap whose grid grows to cover every scan.
    Monolithic,
}

impl std::str::FromStr for MapMode {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "submap" => Ok(MapMode::Submap),
            "monolithic" => Ok(MapMode::Monolithic),
            _ => Err(MapError::Config(format!("unknown mode {s:?}; expected submap or monolithic"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub submap_id: usize,
    pub points: usize,
    pub in_box: usize,
    pub static_points: usize,
    pub dynamic_points: usize,
    pub new_submap: bool,
    pub entry_rate: Option<f64>,
    pub active_voxels: usize,
    /// Voxels crossed by the static rays extended to the grid boundary.
    pub visited_voxels: Option<u64>,
    pub overlap_iterations: usize,
    pub train_iterations: usize,
    pub stages: Vec<String>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmapRecord {
    pub id: usize,
    pub center: [f64; 3],
    pub b_min: [f64; 3],
    pub extent: [f64; 3],
    pub lattice_origin: [i64; 3],
    pub first_frame: usize,
    pub last_frame: usize,
    pub keyscans: usize,
    pub overlap_voxels: usize,
    pub replay_iterations: usize,
    pub active_voxels: usize,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub frame: usize,
    pub phase: String,
    pub iter: usize,
    pub l_bce: f64,
    pub l_eik: f64,
    pub l_align: f64,
    pub l_total: f64,
    pub wall_ms: f64,
}

/// Everything the mapper produced for one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub record: FrameRecord,
    /// One label per scan point; `None` for points outside the submap box.
    pub labels: Vec<Option<PointLabel>>,
}

struct Live {
    submap: Submap,
    opt: Adam,
    record: SubmapRecord,
}

/// Incremental mapper state. Feed frames in order, then call [`Mapper::finish`].
pub struct Mapper {
    config: Config,
    mode: MapMode,
    trainer: Trainer,
    live: Option<Live>,
    meshes: Vec<Mesh>,
    submaps: Vec<SubmapRecord>,
    frames: Vec<FrameRecord>,
    losses: Vec<LossRow>,
    count_visits: bool,
}

/// Output of a completed run.
#[derive(Debug, Clone)]
pub struct MapOutput {
    pub mesh: Mesh,
    pub submap_meshes: Vec<Mesh>,
    pub frames: Vec<FrameRecord>,
    pub submaps: Vec<SubmapRecord>,
    pub losses: Vec<LossRow>,
    pub mlp: Mlp,
}

impl Mapper {
    pub fn new(config: &Config, mode: MapMode) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.rng_seed, 0x4D4C_5000));
        let mlp = Mlp::new(config.encoding_spec().width(), config.mlp_hidden, config.mlp_layers, &mut rng)?;
        Ok(Mapper {
            config: config.clone(),
            mode,
            trainer: Trainer::new(mlp, config)?,
            live: None,
            meshes: Vec::new(),
            submaps: Vec::new(),
            frames: Vec::new(),
            losses: Vec::new(),
            count_visits: false,
        })
    }

    /// Records per-frame visited-voxel counts (costly; used for benchmarks).
    pub fn count_visits(mut self, on: bool) -> Self {
        self.count_visits = on;
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp {
        &self.trainer.mlp
    }

    pub fn current_submap(&self) -> Option<&Submap> {
        self.live.as_ref().map(|l| &l.submap)
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    fn raw_center(&self, world: &[Vec3], origin: &Vec3) -> Result<Vec3> {
        match self.config.center_mode {
            CenterMode::Centroid => raw_center(world),
            CenterMode::Sensor => Ok(*origin),
        }
    }

    fn start_submap(&self, id: usize, bbox: SubmapBox, frame: usize) -> Result<Live> {
        let submap = Submap::new(id, bbox, &self.config)?;
        let opt = self.trainer.table_optimizer(&submap.encoding);
        let record = SubmapRecord {
            id,
            center: bbox.center.into(),
            b_min: bbox.b_min.into(),
            extent: bbox.extent.into(),
            lattice_origin: bbox.lattice_origin,
            first_frame: frame,
            last_frame: frame,
            keyscans: 0,
            overlap_voxels: 0,
            replay_iterations: 0,
            active_voxels: 0,
            mesh_vertices: 0,
            mesh_triangles: 0,
        };
        Ok(Live { submap, opt, record })
    }

    fn log(&mut self, frame: usize, phase: &str, reports: &[LossReport]) {
        self.losses.extend(reports.iter().map(|r| LossRow {
            frame,
            phase: phase.to_string(),
            iter: r.iteration,
            l_bce: r.l_bce,
            l_eik: r.l_eik,
            l_align: r.l_align,
            l_total: r.l_total,
            wall_ms: r.wall_ms,
        }));
    }

    /// Replays and meshes a submap leaving the live set. Cells inside
    /// `next` belong to the newer submap and are skipped.
    fn retire(&mut self, mut live: Live, next: Option<&SubmapBox>) -> Result<()> {
        let id = live.submap.id;
        if self.config.keyscan {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.rng_seed ^ 0x5245_504C_4159, id as u64));
            let reports = match self
                .trainer
                .replay_submap(&mut live.submap, &mut live.opt, &mut rng)
            {
                Err(MapError::Empty(_)) => Vec::new(),
                r => r?,
            };
            live.record.replay_iterations = reports.len();
            let frame = live.record.last_frame;
            self.log(frame, "replay", &reports);
        }
        live.submap.keyscans.clear();
        let ownership = next
            .map(|nb| Ownership::between(&live.submap.bbox, nb, id, id + 1))
            .transpose()?;
        let mesh = extract_mesh(&live.submap, &self.trainer.mlp, &self.config, ownership.as_ref())?;
        live.record.active_voxels = live.submap.grid.num_active();
        live.record.mesh_vertices = mesh.vertices.len();
        live.record.mesh_triangles = mesh.triangles.len();
        self.submaps.push(live.record);
        self.meshes.push(mesh);
        Ok(())
    }

    pub fn process_frame(&mut self, frame: usize, scan: &Scan, pose: &Pose) -> Result<FrameResult> {
        self.process(frame, scan, pose).map_err(|e| e.at_frame(frame))
    }

    fn process(&mut self, frame: usize, scan: &Scan, pose: &Pose) -> Result<FrameResult> {
        let start = Instant::now();
        let cfg = self.config.clone();
        pose.validate()?;
        if scan.is_empty() {
            return Err(MapError::EmptyScan(format!("frame {frame}")));
        }
        let world = transform_to_world(scan, pose)?;
        let origin_w = pose.translation;
        let mut stages = vec!["transform".to_string()];
        let mut new_submap = false;
        let mut rate = None;
        let mut align = None;
        let mut overlap_count = 0;

        match self.live.take() {
            None => {
                let bbox = SubmapBox::first(self.raw_center(&world, &origin_w)?, &cfg)?;
                self.live = Some(self.start_submap(0, bbox, frame)?);
                new_submap = true;
                stages.push("submap_creation".into());
            }
            Some(live) if self.mode == MapMode::Submap => {
                let bbox = live.submap.bbox;
                let r = entry_rate(&world, &bbox.b_min, &bbox.extent)?;
                rate = Some(r);
                stages.push("entry_rate".into());
                if should_create(r, cfg.entry_threshold) {
                    let next_box = bbox.next(&self.raw_center(&world, &origin_w)?);
                    let prev_id = live.submap.id;
                    let mut next = self.start_submap(prev_id + 1, next_box, frame)?;
                    let overlap = overlap_voxels(&live.submap, &mut next.submap)?;
                    carry_free_space(&live.submap, &mut next.submap)?;
                    next.record.overlap_voxels = overlap.len();
                    if cfg.alignment {
                        align = Some(AlignTarget::build(&live.submap.encoding, &overlap)?);
                    }
                    self.retire(live, Some(&next_box))?;
                    self.live = Some(next);
                    new_submap = true;
                    overlap_count = overlap.len();
                    stages.push("submap_creation".into());
                } else {
                    self.live = Some(live);
                }
            }
            Some(live) => self.live = Some(live),
        }
        let _ = overlap_count;

        let mut live = self.live.take().expect("live submap");
        let b_min = live.submap.b_min();
        let local = to_local(&world, &b_min);
        let origin_local = origin_w - b_min;
        if self.mode == MapMode::Monolithic {
            live.submap.grow_to_include(&local, cfg.truncation + cfg.voxel_size);
            live.submap.grow_to_include(std::slice::from_ref(&origin_local), cfg.voxel_size);
        }
        let inside: Vec<usize> = (0..local.len()).filter(|&i| live.submap.contains_local(&local[i])).collect();
        let pts_in: Vec<Vec3> = inside.iter().map(|&i| local[i]).collect();

        let labels_in = if cfg.dynamic_removal {
            let labels = classify_points(&live.submap.grid, &pts_in, cfg.min_free_hits, cfg.seed_support);
            let margins = cfg
                .carve_incidence
                .then(|| incidence_margins(&origin_local, &local, cfg.truncation));
            carve_free_space(
                &mut live.submap.grid,
                &origin_local,
                &local,
                cfg.truncation,
                margins.as_deref(),
            )?;
            stages.push("dynamic_removal".into());
            labels
        } else {
            vec![PointLabel::Static; pts_in.len()]
        };
        let static_pts = filter_static(&pts_in, &labels_in)?;
        live.submap.grid.activate(&static_pts, cfg.truncation);
        live.submap.grid.resolve_conflicts();
        stages.push("activation".into());

        if cfg.keyscan
            && live.submap.maybe_add_keyscan(
                KeyScan {
                    frame_index: frame,
                    pose: *pose,
                    origin_local,
                    points_local: static_pts.clone(),
                },
                cfg.keyscan_distance,
            )
        {
            live.record.keyscans += 1;
        }

        let visited = self.count_visits.then(|| {
            static_pts
                .iter()
                .filter_map(|p| {
                    let d = p - origin_local;
                    let n = d.norm();
                    (n > 0.0).then(|| live.submap.grid.count_to_exit(&origin_local, &(d / n)) as u64)
                })
                .sum::<u64>()
        });

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.rng_seed, frame as u64));
        let skip_empty = |r: Result<Vec<LossReport>>| match r {
            Err(MapError::Empty(_)) => Ok(Vec::new()),
            other => other,
        };
        let mut overlap_iterations = 0;
        if let Some(target) = &align {
            let reports = skip_empty(self.trainer.train_overlap(
                &mut live.submap,
                &mut live.opt,
                target,
                &origin_local,
                &static_pts,
                &mut rng,
            ))?;
            overlap_iterations = reports.len();
            stages.push("overlap_alignment".into());
            self.log(frame, "overlap", &reports);
        }
        stages.push("sampling".into());
        let reports = skip_empty(self.trainer.train_frame(
            &mut live.submap,
            &mut live.opt,
            &origin_local,
            &static_pts,
            &mut rng,
        ))?;
        stages.push("training".into());
        self.log(frame, "frame", &reports);

        live.submap.frames.push(frame);
        live.record.last_frame = frame;
        let mut labels = vec![None; scan.len()];
        for (k, &i) in inside.iter().enumerate() {
            labels[i] = Some(labels_in[k]);
        }
        let record = FrameRecord {
            frame,
            submap_id: live.submap.id,
            points: scan.len(),
            in_box: pts_in.len(),
            static_points: static_pts.len(),
            dynamic_points: pts_in.len() - static_pts.len(),
            new_submap,
            entry_rate: rate,
            active_voxels: live.submap.grid.num_active(),
            visited_voxels: visited,
            overlap_iterations,
            train_iterations: reports.len(),
            stages,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.live = Some(live);
        self.frames.push(record.clone());
        Ok(FrameResult { record, labels })
    }

    /// Retires the last submap and merges all submap meshes.
    pub fn finish(mut self) -> Result<MapOutput> {
        if let Some(live) = self.live.take() {
            self.retire(live, None)?;
        }
        Ok(MapOutput {
            mesh: merge_meshes(&self.meshes, None),
            submap_meshes: self.meshes,
            frames: self.frames,
            submaps: self.submaps,
            losses: self.losses,
            mlp: self.trainer.mlp,
        })
    }
}

/// Scan files in `dir` with a known extension, sorted by file name.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| MapError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| MapError::io(dir, e))?.path();
        if path.is_file() && ScanFormat::from_path(&path).is_some() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(MapError::Empty("scan directory holds no .bin, .ply or .pcd files"));
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub mesh: PathBuf,
    pub losses: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: Config,
    pub mode: MapMode,
    pub scans_dir: PathBuf,
    pub poses: PathBuf,
    pub scan_files: Vec<PathBuf>,
    pub frames: Vec<FrameRecord>,
    pub submaps: Vec<SubmapRecord>,
    pub outputs: OutputPaths,
    pub total_wall_ms: f64,
}

fn losses_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("frame,iter,l_bce,l_eik,l_align,l_total,wall_ms,phase\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3},{}",
            r.frame, r.iter, r.l_bce, r.l_eik, r.l_align, r.l_total, r.wall_ms, r.phase
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MapError::io(path, e))
}

/// Loads and checks inputs before anything is written.
fn open_inputs(scans_dir: &Path, poses_path: &Path) -> Result<(Vec<PathBuf>, Vec<Pose>)> {
    let poses = load_poses(poses_path)?;
    let scans = list_scans(scans_dir)?;
    if scans.len() != poses.len() {
        return Err(MapError::Config(format!(
            "{} scans but {} poses",
            scans.len(),
            poses.len()
        )));
    }
    Ok((scans, poses))
}

fn run_mapper(scans: &[PathBuf], poses: &[Pose], config: &Config, mode: MapMode, count_visits: bool) -> Result<MapOutput> {
    let mut mapper = Mapper::new(config, mode)?.count_visits(count_visits);
    for (i, (path, pose)) in scans.iter().zip(poses).enumerate() {
        let format = ScanFormat::from_path(path).expect("listed scans have a known format");
        let mut scan = load_scan(path, format).map_err(|e| e.at_frame(i))?;
        scan.frame_index = i;
        mapper.process_frame(i, &scan, pose)?;
    }
    mapper.finish()
}

/// Maps a scan sequence and writes `mesh.ply`, `losses.csv` and
/// `manifest.json` into `out_dir`.
pub fn cmd_map(scans_dir: &Path, poses_path: &Path, config: &Config, out_dir: &Path, mode: MapMode) -> Result<RunManifest> {
    let start = Instant::now();
    config.validate()?;
    let (scans, poses) = open_inputs(scans_dir, poses_path)?;
    let output = run_mapper(&scans, &poses, config, mode, false)?;
    fs::create_dir_all(out_dir).map_err(|e| MapError::io(out_dir, e))?;
    let outputs = OutputPaths {
        mesh: out_dir.join("mesh.ply"),
        losses: out_dir.join("losses.csv"),
        manifest: out_dir.join("manifest.json"),
    };
    write_mesh(&output.mesh, &outputs.mesh)?;
    write_text(&outputs.losses, &losses_csv(&output.losses))?;
    let manifest = RunManifest {
        config: config.clone(),
        mode,
        scans_dir: scans_dir.to_path_buf(),
        poses: poses_path.to_path_buf(),
        scan_files: scans,
        frames: output.frames,
        submaps: output.submaps,
        outputs,
        total_wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| MapError::Config(e.to_string()))?;
    write_text(&manifest.outputs.manifest, &json)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| MapError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MapError::parse(path.display().to_string(), "json", e.to_string()))
}

/// Samples both meshes and compares them.
pub fn cmd_eval(pred: &Path, gt: &Path, threshold_cm: f64, samples: usize, seed: u64) -> Result<MetricReport> {
    let p = read_mesh(pred)?;
    let g = read_mesh(gt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    evaluate_meshes(&p, &g, samples, threshold_cm, &mut rng)
}

pub fn cmd_simulate(
    scene: &Path,
    trajectory: &Path,
    lidar: &LidarSpec,
    out_dir: &Path,
    gt_resolution: f64,
    seed: u64,
) -> Result<SimulationSummary> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| MapError::io(p, e));
    let spec = SceneSpec::parse(&read(scene)?, &scene.display().to_string())?;
    let traj: Vec<TrajectoryPoint> = crate::synth::parse_trajectory(&read(trajectory)?, &trajectory.display().to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_sequence(&spec, lidar, &traj, out_dir, gt_resolution, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub frame: usize,
    pub submap_id: usize,
    pub wall_ms: f64,
    pub visited_voxels: u64,
    pub active_voxels: usize,
}

/// Maps with visited-voxel counting and writes `bench_<mode>.csv` and
/// `mesh_<mode>.ply` into `out_dir`.
pub fn cmd_bench(scans_dir: &Path, poses_path: &Path, config: &Config, mode: MapMode, out_dir: &Path) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let (scans, poses) = open_inputs(scans_dir, poses_path)?;
    let output = run_mapper(&scans, &poses, config, mode, true)?;
    let rows: Vec<BenchRow> = output
        .frames
        .iter()
        .map(|f| BenchRow {
            frame: f.frame,
            submap_id: f.submap_id,
            wall_ms: f.wall_ms,
            visited_voxels: f.visited_voxels.unwrap_or(0),
            active_voxels: f.active_voxels,
        })
        .collect();
    fs::create_dir_all(out_dir).map_err(|e| MapError::io(out_dir, e))?;
    let tag = match mode {
        MapMode::Submap => "submap",
        MapMode::Monolithic => "monolithic",
    };
    let mut csv = String::from("frame,submap_id,wall_ms,visited_voxels,active_voxels\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:.3},{},{}", r.frame, r.submap_id, r.wall_ms, r.visited_voxels, r.active_voxels);
    }
    write_text(&out_dir.join(format!("bench_{tag}.csv")), &csv)?;
    write_mesh(&output.mesh, &out_dir.join(format!("mesh_{tag}.ply")))?;
    Ok(rows)
}

/// Mean of `values[range]` where the range is the first or last quarter.
pub fn quartile_means(values: &[f64]) -> Option<(f64, f64)> {
    let q = values.len() / 4;
    if q == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..q]), mean(&values[values.len() - q..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Primitive, Shape};

    #[test]
    fn mode_parsing() {
        assert_eq!("submap".parse::<MapMode>().unwrap(), MapMode::Submap);
        assert_eq!("monolithic".parse::<MapMode>().unwrap(), MapMode::Monolithic);
        assert!("dense".parse::<MapMode>().is_err());
    }

    #[test]
    fn quartiles() {
        assert_eq!(quartile_means(&[1.0, 2.0, 3.0]), None);
        assert_eq!(quartile_means(&[1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 3.0, 3.0]), Some((1.0, 3.0)));
    }

    #[test]
    fn loss_csv_columns() {
        let csv = losses_csv(&[LossRow {
            frame: 3,
            phase: "frame".into(),
            iter: 1,
            l_bce: 0.5,
            l_eik: 0.25,
            l_align: 0.0,
            l_total: 0.525,
            wall_ms: 1.0,
        }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "frame,iter,l_bce,l_eik,l_align,l_total,wall_ms,phase");
        assert_eq!(lines.next().unwrap(), "3,1,0.5,0.25,0,0.525,1.000,frame");
    }

    fn small_config() -> Config {
        Config {
            submap_extent: [12.0, 12.0, 4.0],
            hash_levels: 4,
            log2_table_size: 12,
            base_resolution: 4,
            mlp_hidden: 16,
            rays_per_batch: 128,
            replay_iters: 5,
            overlap_iters: 5,
            iters_per_frame: 2,
            ..Config::default()
        }
    }

    fn room_frames(n: usize, step: f64) -> (Vec<Scan>, Vec<Pose>) {
        let spec = SceneSpec {
            primitives: vec![
                Primitive::fixed(Shape::Plane {
                    normal: Vec3::z(),
                    offset: 0.0,
                }),
                Primitive::fixed(Shape::Plane {
                    normal: Vec3::new(0.0, -1.0, 0.0),
                    offset: -3.0,
                }),
                Primitive::fixed(Shape::Plane {
                    normal: Vec3::y(),
                    offset: -3.0,
                }),
            ],
            bounds: (Vec3::new(-5.0, -4.0, -1.0), Vec3::new(40.0, 4.0, 3.0)),
        };
        let lidar = LidarSpec {
            channels: 8,
            azimuths: 90,
            fov_down_deg: -25.0,
            fov_up_deg: 5.0,
            max_range: 8.0,
            ..LidarSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut scans = Vec::new();
        let mut poses = Vec::new();
        for i in 0..n {
            let pose = Pose::from_yaw(0.0, Vec3::new(i as f64 * step, 0.0, 1.5));
            scans.push(crate::synth::simulate_scan(&spec, &lidar, &pose, 0.0, i, &mut rng).unwrap().scan);
            poses.push(pose);
        }
        (scans, poses)
    }

    #[test]
    fn stationary_sequence_keeps_one_submap() {
        let (scans, poses) = room_frames(3, 0.0);
        let mut m = Mapper::new(&small_config(), MapMode::Submap).unwrap();
        for (i, (s, p)) in scans.iter().zip(&poses).enumerate() {
            let r = m.process_frame(i, s, p).unwrap();
            assert_eq!(r.record.submap_id, 0);
            assert_eq!(r.labels.len(), s.len());
        }
        let out = m.finish().unwrap();
        assert_eq!(out.submaps.len(), 1);
        assert_eq!(out.frames.len(), 3);
        assert_eq!(out.submaps[0].keyscans, 1);
        out.mesh.validate().unwrap();
        let order: Vec<&str> = out.frames[1].stages.iter().map(String::as_str).collect();
        let pos = |s: &str| order.iter().position(|&x| x == s).unwrap();
        assert!(pos("dynamic_removal") < pos("activation") && pos("activation") < pos("sampling"));
    }

    #[test]
    fn moving_sequence_creates_submaps() {
        let (scans, poses) = room_frames(8, 2.0);
        let mut m = Mapper::new(&small_config(), MapMode::Submap).unwrap();
        for (i, (s, p)) in scans.iter().zip(&poses).enumerate() {
            m.process_frame(i, s, p).unwrap();
        }
        let out = m.finish().unwrap();
        assert!(out.submaps.len() >= 2);
        assert!(out.frames.iter().any(|f| f.overlap_iterations > 0));
        assert!(out.losses.iter().any(|r| r.phase == "overlap" && r.l_align > 0.0));
        for w in out.submaps.windows(2) {
            let a = Vec3::from(w[0].center);
            let b = Vec3::from(w[1].center);
            let k = (b - a) / 0.2;
            assert!(k.iter().all(|x| (x - x.round()).abs() < 1e-6));
        }
    }
}
