//! Analytic scenes, a sphere-tracing LiDAR simulator and ground-truth meshes.
//!
//! Scene text format, one primitive per line (`#` starts a comment):
//!
//! ```text
//! bounds xmin ymin zmin xmax ymax zmax
//! plane  nx ny nz d                 # solid where n.p < d
//! box    cx cy cz hx hy hz          # center and half extents
//! sphere cx cy cz r
//! ```
//!
//! Any primitive line may end with `inverted` (solid and free space swap) or,
//! for boxes and spheres, `dynamic vx vy vz` (constant velocity, m/s).
//! Trajectory files hold `time x y z yaw_deg` lines.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MapError, Result};
use crate::mesher::{dense_marching_cubes, Mesh};
use crate::scan_io::{format_poses, write_mesh, write_points_ply, Pose, Scan};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Plane { normal: Vec3, offset: f64 },
    Box { center: Vec3, half: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub inverted: bool,
    /// `Some(velocity)` for a moving actor.
    pub velocity: Option<Vec3>,
}

impl Primitive {
    pub fn fixed(shape: Shape) -> Self {
        Primitive {
            shape,
            inverted: false,
            velocity: None,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.velocity.is_some()
    }

    pub fn center_at(&self, time: f64) -> Option<Vec3> {
        let c = match self.shape {
            Shape::Plane { .. } => return None,
            Shape::Box { center, .. } | Shape::Sphere { center, .. } => center,
        };
        Some(c + self.velocity.unwrap_or_else(Vec3::zeros) * time)
    }

    pub fn sdf(&self, p: &Vec3, time: f64) -> f64 {
        let shift = self.velocity.map_or_else(Vec3::zeros, |v| v * time);
        let d = match self.shape {
            Shape::Plane { normal, offset } => normal.dot(p) - offset,
            Shape::Sphere { center, radius } => (p - center - shift).norm() - radius,
            Shape::Box { center, half } => {
                let q = (p - center - shift).abs() - half;
                let outside = q.sup(&Vec3::zeros()).norm();
                outside + q.max().min(0.0)
            }
        };
        if self.inverted {
            -d
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub bounds: (Vec3, Vec3),
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.primitives.iter().any(|p| !p.is_dynamic()) {
            return Err(MapError::Geometry("scene needs at least one static primitive".into()));
        }
        let (lo, hi) = self.bounds;
        if (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(MapError::Geometry("scene bounds are empty".into()));
        }
        Ok(())
    }

    /// Errors if a dynamic primitive's center leaves the bounds at `time`.
    pub fn check_actors_at(&self, time: f64) -> Result<()> {
        let (lo, hi) = self.bounds;
        for p in self.primitives.iter().filter(|p| p.is_dynamic()) {
            let c = p.center_at(time).expect("dynamic primitives have a center");
            if (0..3).any(|a| c[a] < lo[a] || c[a] > hi[a]) {
                return Err(MapError::Geometry(format!("dynamic actor leaves the scene bounds at t={time}")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, name: &str) -> Result<SceneSpec> {
        let mut primitives = Vec::new();
        let mut bounds = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("line {}", ln + 1);
            let err = |m: String| MapError::parse(name, loc.clone(), m);
            let mut toks = line.split_whitespace();
            let kind = toks.next().unwrap_or_default();
            let rest: Vec<&str> = toks.collect();
            let nums = |k: usize| -> Result<Vec<f64>> {
                if rest.len() < k {
                    return Err(err(format!("{kind} needs {k} numbers")));
                }
                rest[..k]
                    .iter()
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t:?}: {e}"))))
                    .collect()
            };
            let (shape, used) = match kind {
                "bounds" => {
                    let v = nums(6)?;
                    if rest.len() != 6 {
                        return Err(err("bounds takes exactly 6 numbers".into()));
                    }
                    bounds = Some((Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])));
                    continue;
                }
                "plane" => {
                    let v = nums(4)?;
                    let n = Vec3::new(v[0], v[1], v[2]);
                    if !(n.norm() > 0.0) {
                        return Err(err("plane normal must be non-zero".into()));
                    }
                    let len = n.norm();
                    (
                        Shape::Plane {
                            normal: n / len,
                            offset: v[3] / len,
                        },
                        4,
                    )
                }
                "box" => {
                    let v = nums(6)?;
                    let half = Vec3::new(v[3], v[4], v[5]);
                    if half.iter().any(|&h| !(h > 0.0)) {
                        return Err(err("box half extents must be positive".into()));
                    }
                    (
                        Shape::Box {
                            center: Vec3::new(v[0], v[1], v[2]),
                            half,
                        },
                        6,
                    )
                }
                "sphere" => {
                    let v = nums(4)?;
                    if !(v[3] > 0.0) {
                        return Err(err("sphere radius must be positive".into()));
                    }
                    (
                        Shape::Sphere {
                            center: Vec3::new(v[0], v[1], v[2]),
                            radius: v[3],
                        },
                        4,
                    )
                }
                other => return Err(err(format!("unknown primitive {other:?}"))),
            };
            let mut prim = Primitive::fixed(shape);
            let mut i = used;
            while i < rest.len() {
                match rest[i] {
                    "inverted" => {
                        prim.inverted = true;
                        i += 1;
                    }
                    "static" => i += 1,
                    "dynamic" => {
                        if matches!(shape, Shape::Plane { .. }) {
                            return Err(err("planes cannot move".into()));
                        }
                        if rest.len() < i + 4 {
                            return Err(err("dynamic needs a velocity vx vy vz".into()));
                        }
                        let v: Vec<f64> = rest[i + 1..i + 4]
                            .iter()
                            .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t:?}: {e}"))))
                            .collect::<Result<_>>()?;
                        prim.velocity = Some(Vec3::new(v[0], v[1], v[2]));
                        i += 4;
                    }
                    t => return Err(err(format!("unexpected token {t:?}"))),
                }
            }
            primitives.push(prim);
        }
        let bounds = bounds.ok_or_else(|| MapError::parse(name, "end of file", "missing bounds line"))?;
        let spec = SceneSpec { primitives, bounds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let (lo, hi) = self.bounds;
        let mut out = format!("bounds {} {} {} {} {} {}\n", lo.x, lo.y, lo.z, hi.x, hi.y, hi.z);
        for p in &self.primitives {
            match p.shape {
                Shape::Plane { normal: n, offset } => out += &format!("plane {} {} {} {}", n.x, n.y, n.z, offset),
                Shape::Box { center: c, half: h } => {
                    out += &format!("box {} {} {} {} {} {}", c.x, c.y, c.z, h.x, h.y, h.z)
                }
                Shape::Sphere { center: c, radius } => out += &format!("sphere {} {} {} {}", c.x, c.y, c.z, radius),
            }
            if p.inverted {
                out += " inverted";
            }
            if let Some(v) = p.velocity {
                out += &format!(" dynamic {} {} {}", v.x, v.y, v.z);
            }
            out.push('\n');
        }
        out
    }
}

/// Union SDF of every primitive at `time`, with the index of the closest.
pub fn scene_sdf_with_index(spec: &SceneSpec, p: &Vec3, time: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, prim) in spec.primitives.iter().enumerate() {
        let d = prim.sdf(p, time);
        if d < best.0 {
            best = (d, i);
        }
    }
    best
}

pub fn scene_sdf(spec: &SceneSpec, p: &Vec3, time: f64) -> f64 {
    scene_sdf_with_index(spec, p, time).0
}

/// Union SDF of the static primitives only.
pub fn static_sdf(spec: &SceneSpec, p: &Vec3) -> f64 {
    spec.primitives
        .iter()
        .filter(|q| !q.is_dynamic())
        .map(|q| q.sdf(p, 0.0))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarSpec {
    pub channels: usize,
    pub azimuths: usize,
    pub fov_down_deg: f64,
    pub fov_up_deg: f64,
    pub max_range: f64,
    /// Standard deviation of additive range noise (m).
    pub range_noise: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            channels: 32,
            azimuths: 720,
            fov_down_deg: -15.0,
            fov_up_deg: 15.0,
            max_range: 50.0,
            range_noise: 0.0,
        }
    }
}

impl LidarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.azimuths == 0 {
            return Err(MapError::Config("lidar needs at least one channel and azimuth".into()));
        }
        if !(self.max_range > 0.0) || !(self.fov_up_deg >= self.fov_down_deg) || !(self.range_noise >= 0.0) {
            return Err(MapError::Config("invalid lidar range, field of view or noise".into()));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame, channel-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.channels * self.azimuths);
        for c in 0..self.channels {
            let el = if self.channels == 1 {
                self.fov_down_deg
            } else {
                self.fov_down_deg + (self.fov_up_deg - self.fov_down_deg) * c as f64 / (self.channels - 1) as f64
            }
            .to_radians();
            for a in 0..self.azimuths {
                let az = std::f64::consts::TAU * a as f64 / self.azimuths as f64;
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

const TRACE_EPS: f64 = 1e-5;
const TRACE_MAX_STEPS: usize = 20_000;

/// Distance along a unit ray to the first surface within `max_range`.
pub fn trace_ray(spec: &SceneSpec, origin: &Vec3, dir: &Vec3, time: f64, max_range: f64) -> Option<f64> {
    let f = |t: f64| scene_sdf(spec, &(origin + dir * t), time);
    let mut t = 0.0;
    for _ in 0..TRACE_MAX_STEPS {
        let s = f(t);
        if s < TRACE_EPS {
            return Some(refine(&f, t, max_range));
        }
        t += s;
        if t > max_range {
            return None;
        }
    }
    None
}

/// Brackets the sign change just past `t` and bisects it.
fn refine(f: &impl Fn(f64) -> f64, t: f64, max_range: f64) -> f64 {
    if f(t) <= 0.0 {
        return t;
    }
    let mut lo = t;
    let mut step = TRACE_EPS;
    let mut hi = None;
    while step < 1.0 {
        let cand = lo + step;
        if cand > max_range {
            break;
        }
        if f(cand) <= 0.0 {
            hi = Some(cand);
            break;
        }
        lo = cand;
        step *= 2.0;
    }
    let Some(mut hi) = hi else { return t };
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f(lo), f(hi));
    if flo.abs() <= fhi.abs() {
        lo
    } else {
        hi
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedScan {
    /// Points in the sensor frame.
    pub scan: Scan,
    /// Index of the primitive each point hit.
    pub primitive: Vec<usize>,
    pub dynamic: Vec<bool>,
}

pub fn simulate_scan(
    spec: &SceneSpec,
    lidar: &LidarSpec,
    pose: &Pose,
    time: f64,
    frame_index: usize,
    rng: &mut impl Rng,
) -> Result<SimulatedScan> {
    lidar.validate()?;
    let origin = pose.translation;
    if scene_sdf(spec, &origin, time) <= 0.0 {
        return Err(MapError::Geometry(format!("sensor at {origin:?} is inside scene geometry")));
    }
    let noise = if lidar.range_noise > 0.0 {
        Some(Normal::new(0.0, lidar.range_noise).map_err(|e| MapError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut points = Vec::new();
    let mut primitive = Vec::new();
    let mut dynamic = Vec::new();
    for d in lidar.directions() {
        let dw = pose.rotation * d;
        if let Some(t) = trace_ray(spec, &origin, &dw, time, lidar.max_range) {
            let hit = origin + dw * t;
            let (_, idx) = scene_sdf_with_index(spec, &hit, time);
            let r = t + noise.map_or(0.0, |n| n.sample(rng));
            points.push(d * r);
            primitive.push(idx);
            dynamic.push(spec.primitives[idx].is_dynamic());
        }
    }
    if points.is_empty() {
        return Err(MapError::EmptyScan(format!("simulated frame {frame_index}")));
    }
    Ok(SimulatedScan {
        scan: Scan::new(points, frame_index),
        primitive,
        dynamic,
    })
}

/// Marching cubes over the static part of the scene within its bounds.
pub fn gt_mesh(spec: &SceneSpec, resolution: f64) -> Result<Mesh> {
    spec.validate()?;
    if !(resolution > 0.0) {
        return Err(MapError::Config(format!("mesh resolution must be positive, got {resolution}")));
    }
    let (lo, hi) = spec.bounds;
    let counts: [usize; 3] = std::array::from_fn(|a| ((hi[a] - lo[a]) / resolution).ceil() as usize + 1);
    dense_marching_cubes(&lo, resolution, counts, |p| static_sdf(spec, p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub position: Vec3,
    pub yaw_deg: f64,
}

impl TrajectoryPoint {
    pub fn pose(&self) -> Pose {
        Pose::from_yaw(self.yaw_deg.to_radians(), self.position)
    }
}

pub fn parse_trajectory(text: &str, name: &str) -> Result<Vec<TrajectoryPoint>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| MapError::parse(name, format!("line {}", ln + 1), e.to_string()))?;
        if v.len() != 5 || v.iter().any(|x| !x.is_finite()) {
            return Err(MapError::parse(
                name,
                format!("line {}", ln + 1),
                "expected 5 finite values: time x y z yaw_deg",
            ));
        }
        out.push(TrajectoryPoint {
            time: v[0],
            position: Vec3::new(v[1], v[2], v[3]),
            yaw_deg: v[4],
        });
    }
    if out.is_empty() {
        return Err(MapError::Empty("trajectory"));
    }
    Ok(out)
}

pub fn format_trajectory(traj: &[TrajectoryPoint]) -> String {
    traj.iter()
        .map(|t| format!("{} {} {} {} {}\n", t.time, t.position.x, t.position.y, t.position.z, t.yaw_deg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub frames: usize,
    pub points: usize,
    pub dynamic_points: usize,
    pub labels_written: bool,
}

/// Writes `scans/NNNNNN.ply`, `poses.txt`, `labels/NNNNNN.txt` (when the
/// scene has moving actors; one `primitive dynamic` line per point) and
/// `gt_mesh.ply` into `out_dir`.
pub fn simulate_sequence(
    spec: &SceneSpec,
    lidar: &LidarSpec,
    trajectory: &[TrajectoryPoint],
    out_dir: &Path,
    gt_resolution: f64,
    rng: &mut impl Rng,
) -> Result<SimulationSummary> {
    spec.validate()?;
    lidar.validate()?;
    for t in trajectory {
        spec.check_actors_at(t.time)?;
    }
    let has_actors = spec.primitives.iter().any(|p| p.is_dynamic());
    let scans_dir = out_dir.join("scans");
    fs::create_dir_all(&scans_dir).map_err(|e| MapError::io(&scans_dir, e))?;
    let labels_dir = out_dir.join("labels");
    if has_actors {
        fs::create_dir_all(&labels_dir).map_err(|e| MapError::io(&labels_dir, e))?;
    }
    let mut summary = SimulationSummary {
        frames: 0,
        points: 0,
        dynamic_points: 0,
        labels_written: has_actors,
    };
    let mut poses = Vec::with_capacity(trajectory.len());
    for (i, tp) in trajectory.iter().enumerate() {
        let pose = tp.pose();
        let sim = simulate_scan(spec, lidar, &pose, tp.time, i, rng).map_err(|e| e.at_frame(i))?;
        write_points_ply(&sim.scan.points, &scans_dir.join(format!("{i:06}.ply")))?;
        if has_actors {
            let text: String = sim
                .primitive
                .iter()
                .zip(&sim.dynamic)
                .map(|(p, d)| format!("{p} {}\n", u8::from(*d)))
                .collect();
            let path = labels_dir.join(format!("{i:06}.txt"));
            fs::write(&path, text).map_err(|e| MapError::io(&path, e))?;
        }
        summary.frames += 1;
        summary.points += sim.scan.len();
        summary.dynamic_points += sim.dynamic.iter().filter(|&&d| d).count();
        poses.push(pose);
    }
    let pose_path = out_dir.join("poses.txt");
    fs::write(&pose_path, format_poses(&poses)).map_err(|e| MapError::io(&pose_path, e))?;
    write_mesh(&gt_mesh(spec, gt_resolution)?, &out_dir.join("gt_mesh.ply"))?;
    Ok(summary)
}

/// Per-point `(primitive, dynamic)` labels written by [`simulate_sequence`].
pub fn read_labels(path: &Path) -> Result<Vec<(usize, bool)>> {
    let text = fs::read_to_string(path).map_err(|e| MapError::io(path, e))?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| {
            let mut it = l.split_whitespace();
            let bad = || MapError::parse(&name, format!("line {}", ln + 1), "expected `primitive dynamic`");
            let p = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            let d: u8 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            Ok((p, d != 0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(c: Vec3, r: f64) -> Primitive {
        Primitive::fixed(Shape::Sphere { center: c, radius: r })
    }

    fn scene(prims: Vec<Primitive>) -> SceneSpec {
        SceneSpec {
            primitives: prims,
            bounds: (Vec3::repeat(-20.0), Vec3::repeat(20.0)),
        }
    }

    #[test]
    fn sphere_sdf_values() {
        let s = scene(vec![sphere(Vec3::zeros(), 2.0)]);
        assert_eq!(scene_sdf(&s, &Vec3::new(3.0, 0.0, 0.0), 0.0), 1.0);
        assert_eq!(scene_sdf(&s, &Vec3::new(0.0, 2.0, 0.0), 0.0), 0.0);
    }

    #[test]
    fn union_is_min() {
        let a = sphere(Vec3::new(-1.0, 0.0, 0.0), 1.5);
        let b = sphere(Vec3::new(2.0, 1.0, 0.0), 0.7);
        let s = scene(vec![a, b]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            assert_eq!(scene_sdf(&s, &p, 0.0), a.sdf(&p, 0.0).min(b.sdf(&p, 0.0)));
        }
    }

    #[test]
    fn box_sdf_matches_distance() {
        let b = Primitive::fixed(Shape::Box {
            center: Vec3::zeros(),
            half: Vec3::new(1.0, 2.0, 3.0),
        });
        assert_eq!(b.sdf(&Vec3::new(2.0, 0.0, 0.0), 0.0), 1.0);
        assert_eq!(b.sdf(&Vec3::zeros(), 0.0), -1.0);
        assert!((b.sdf(&Vec3::new(2.0, 3.0, 0.0), 0.0) - 2f64.sqrt()).abs() < 1e-12);
        let mut moving = b;
        moving.velocity = Some(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(moving.sdf(&Vec3::new(4.0, 0.0, 0.0), 2.0), 1.0);
    }

    #[test]
    fn shell_ranges() {
        let mut shell = sphere(Vec3::zeros(), 10.0);
        shell.inverted = true;
        let s = scene(vec![shell]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lidar = LidarSpec {
            channels: 8,
            azimuths: 90,
            ..LidarSpec::default()
        };
        let sim = simulate_scan(&s, &lidar, &Pose::identity(), 0.0, 0, &mut rng).unwrap();
        assert_eq!(sim.scan.len(), 8 * 90);
        for p in &sim.scan.points {
            assert!((p.norm() - 10.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn floor_nadir_range_and_sky() {
        let floor = Primitive::fixed(Shape::Plane {
            normal: Vec3::z(),
            offset: 0.0,
        });
        let s = scene(vec![floor]);
        let pose = Pose::from_yaw(0.3, Vec3::new(1.0, 2.0, 1.5));
        let lidar = LidarSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sim = simulate_scan(&s, &lidar, &pose, 0.0, 0, &mut rng).unwrap();
        // 16 channels point down, but the two shallowest reach the floor
        // beyond max range (elevation above -asin(1.5 / 50)).
        assert_eq!(sim.scan.len(), 14 * 720);
        let expect = 1.5 / 15f64.to_radians().sin();
        let nadir = sim.scan.points[0].norm();
        assert!((nadir - expect).abs() <= 1e-4, "{nadir} vs {expect}");
        for p in &sim.scan.points {
            let w = pose.transform(p);
            assert!(scene_sdf(&s, &w, 0.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn sensor_inside_is_error() {
        let s = scene(vec![sphere(Vec3::zeros(), 2.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(simulate_scan(&s, &LidarSpec::default(), &Pose::identity(), 0.0, 0, &mut rng).is_err());
    }

    #[test]
    fn gt_mesh_sphere_and_plane() {
        let s = SceneSpec {
            primitives: vec![sphere(Vec3::new(0.05, -0.02, 0.01), 1.0)],
            bounds: (Vec3::repeat(-1.5), Vec3::repeat(1.5)),
        };
        let res = 0.1;
        let m = gt_mesh(&s, res).unwrap();
        assert!(!m.is_empty());
        for v in &m.vertices {
            let p = Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64) - Vec3::new(0.05, -0.02, 0.01);
            assert!((p.norm() - 1.0).abs() <= res / 2.0);
        }
        let plane = SceneSpec {
            primitives: vec![Primitive::fixed(Shape::Plane {
                normal: Vec3::z(),
                offset: 0.33,
            })],
            bounds: (Vec3::repeat(-1.0), Vec3::repeat(1.0)),
        };
        let m = gt_mesh(&plane, 0.1).unwrap();
        assert!(m.vertices.iter().all(|v| (v[2] as f64 - 0.33).abs() < 1e-6));
        let empty = SceneSpec {
            primitives: vec![],
            bounds: plane.bounds,
        };
        assert!(gt_mesh(&empty, 0.1).is_err());
    }

    #[test]
    fn scene_text_round_trip() {
        let text = "# corridor\nbounds -1 -2 -0.5 30 2 3\nplane 0 0 1 0\nplane 0 -2 0 -4\nbox 5 1.5 0.5 0.5 0.5 0.5 static\nbox 10 0 1.1 0.5 0.5 1 dynamic -1 0 0\nsphere 0 0 0 20 inverted\n";
        let s = SceneSpec::parse(text, "scene").unwrap();
        assert_eq!(s.primitives.len(), 5);
        assert!(s.primitives[3].is_dynamic());
        assert!(s.primitives[4].inverted);
        assert_eq!(
            s.primitives[1].shape,
            Shape::Plane {
                normal: Vec3::new(0.0, -1.0, 0.0),
                offset: -2.0
            }
        );
        assert_eq!(SceneSpec::parse(&s.to_text(), "again").unwrap(), s);
        assert!(SceneSpec::parse("plane 0 0 1 0\n", "x").is_err());
        assert!(SceneSpec::parse("bounds 0 0 0 1 1 1\nbox 0 0 0 1 1 1 dynamic 1 0 0\n", "x").is_err());
        assert!(SceneSpec::parse("bounds 0 0 0 1 1 1\ncone 1\n", "x").is_err());
    }

    #[test]
    fn trajectory_parse() {
        let t = parse_trajectory("0 0 0 1.5 0\n0.5 1 0 1.5 90\n", "traj").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(parse_trajectory(&format_trajectory(&t), "again").unwrap(), t);
        assert!(parse_trajectory("0 1 2\n", "bad").is_err());
        let p = t[1].pose();
        assert!((p.transform(&Vec3::x()) - Vec3::new(1.0, 1.0, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn static_scans_repeat_across_time() {
        let floor = Primitive::fixed(Shape::Plane {
            normal: Vec3::z(),
            offset: 0.0,
        });
        let s = scene(vec![floor, sphere(Vec3::new(4.0, 0.0, 1.0), 1.0)]);
        let lidar = LidarSpec {
            channels: 4,
            azimuths: 36,
            ..LidarSpec::default()
        };
        let pose = Pose::from_yaw(0.0, Vec3::new(0.0, 0.0, 1.5));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = simulate_scan(&s, &lidar, &pose, 0.0, 0, &mut rng).unwrap();
        let b = simulate_scan(&s, &lidar, &pose, 7.5, 1, &mut rng).unwrap();
        assert_eq!(a.scan.points, b.scan.points);
    }
}
