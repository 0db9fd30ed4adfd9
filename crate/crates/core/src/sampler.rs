//! Narrow-band ray sampling with closed-form signed-distance labels.
//!
//! A sample on the ray from `o` to endpoint `e` sits at
//! `o + (d + delta) * u`, with `d = |e - o|`, `u` the ray direction and
//! `delta ~ U(-T_r, T_r)`. Its label is the signed distance to the endpoint
//! along the ray, `d - |p - o|`: positive in front of the surface, negative
//! behind it.

use rand::seq::index;
use rand::Rng;

use crate::config::Config;
use crate::error::{MapError, Result};
use crate::sparse_grid::{voxel_of, SparseGrid};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub position: Vec3,
    pub gt_sdf: f64,
    pub ray_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<RaySample>,
    /// Samples drawn before voxel filtering.
    pub drawn: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn retained_fraction(&self) -> f64 {
        if self.drawn == 0 {
            0.0
        } else {
            self.samples.len() as f64 / self.drawn as f64
        }
    }
}

/// Samples at explicit offsets `delta` around the endpoint.
pub fn sample_ray_at(origin: &Vec3, endpoint: &Vec3, offsets: &[f64], ray_index: usize) -> Vec<RaySample> {
    let d = (endpoint - origin).norm();
    let u = (endpoint - origin) / d;
    offsets
        .iter()
        .map(|&delta| {
            let position = origin + u * (d + delta);
            RaySample {
                position,
                gt_sdf: d - (position - origin).norm(),
                ray_index,
            }
        })
        .collect()
}

pub fn sample_ray(
    origin: &Vec3,
    endpoint: &Vec3,
    truncation: f64,
    n: usize,
    ray_index: usize,
    rng: &mut impl Rng,
) -> Result<Vec<RaySample>> {
    let d = (endpoint - origin).norm();
    if !(d > truncation) {
        return Err(MapError::Geometry(format!("ray length {d} does not exceed the truncation {truncation}")));
    }
    let offsets: Vec<f64> = (0..n).map(|_| rng.gen_range(-truncation..truncation)).collect();
    Ok(sample_ray_at(origin, endpoint, &offsets, ray_index))
}

/// One scan's rays: the sensor origin and its static endpoints, both local.
#[derive(Debug, Clone, Copy)]
pub struct RaySource<'a> {
    pub origin: Vec3,
    pub endpoints: &'a [Vec3],
}

/// Draws up to `rays_per_batch` rays uniformly without replacement from the
/// union of `sources`, emits `samples_per_ray` samples per ray and keeps the
/// samples whose voxel is active. Samples closer than `margin` to the grid
/// boundary are dropped as well.
pub fn build_batch_from(
    sources: &[RaySource<'_>],
    grid: &SparseGrid,
    config: &Config,
    margin: f64,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    let total: usize = sources.iter().map(|s| s.endpoints.len()).sum();
    if total == 0 || grid.num_active() == 0 {
        return Err(MapError::Empty("no rays or no active voxels to sample"));
    }
    let k = config.rays_per_batch.min(total);
    let mut picks = index::sample(rng, total, k).into_vec();
    picks.sort_unstable();
    let s_v = grid.voxel_size();
    let (lo, hi) = grid.bounds();
    let inside = |p: &Vec3| {
        (0..3).all(|a| p[a] - margin >= lo[a] as f64 * s_v && p[a] + margin <= hi[a] as f64 * s_v)
    };
    let mut batch = SampleBatch::default();
    let mut src = 0;
    let mut base = 0;
    for ray in picks {
        while ray >= base + sources[src].endpoints.len() {
            base += sources[src].endpoints.len();
            src += 1;
        }
        let s = &sources[src];
        let e = &s.endpoints[ray - base];
        if (e - s.origin).norm() <= config.truncation {
            continue;
        }
        let samples = sample_ray(&s.origin, e, config.truncation, config.samples_per_ray, ray, rng)?;
        batch.drawn += samples.len();
        batch.samples.extend(
            samples
                .into_iter()
                .filter(|p| inside(&p.position) && grid.is_active(voxel_of(&p.position, s_v))),
        );
    }
    if batch.samples.is_empty() {
        return Err(MapError::Empty("no samples fell in active voxels"));
    }
    Ok(batch)
}

pub fn build_batch(
    scan_static_local: &[Vec3],
    origin_local: &Vec3,
    grid: &SparseGrid,
    config: &Config,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    build_batch_from(
        &[RaySource {
            origin: *origin_local,
            endpoints: scan_static_local,
        }],
        grid,
        config,
        config.gradient_step(),
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forced_offsets() {
        let o = Vec3::zeros();
        let e = Vec3::new(10.0, 0.0, 0.0);
        let s = sample_ray_at(&o, &e, &[0.1, 0.0, -0.2], 0);
        assert!((s[0].position - Vec3::new(10.1, 0.0, 0.0)).norm() < 1e-12);
        assert!((s[0].gt_sdf + 0.1).abs() < 1e-9);
        assert_eq!(s[1].position, e);
        assert_eq!(s[1].gt_sdf, 0.0);
        assert!((s[2].position - Vec3::new(9.8, 0.0, 0.0)).norm() < 1e-12);
        assert!((s[2].gt_sdf - 0.2).abs() < 1e-9);
    }

    #[test]
    fn short_ray_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_ray(&Vec3::zeros(), &Vec3::new(0.2, 0.0, 0.0), 0.25, 3, 0, &mut rng).is_err());
    }

    #[test]
    fn offset_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tr = 0.25;
        let o = Vec3::new(0.3, -1.0, 2.0);
        let e = Vec3::new(7.0, 4.0, -1.0);
        let s = sample_ray(&o, &e, tr, 20_000, 0, &mut rng).unwrap();
        let d = (e - o).norm();
        let deltas: Vec<f64> = s.iter().map(|x| (x.position - o).norm() - d).collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let sigma = tr / 3f64.sqrt() / (deltas.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma);
        assert!(deltas.iter().all(|&x| x > -tr - 1e-12 && x < tr + 1e-12));
        for x in &s {
            assert!((x.gt_sdf - (d - (x.position - o).norm())).abs() < 1e-9);
            assert!(x.gt_sdf.abs() <= tr + 1e-12);
        }
    }

    fn wall_scan() -> (Vec3, Vec<Vec3>) {
        let o = Vec3::new(2.0, 4.0, 2.0);
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..20 {
                pts.push(Vec3::new(6.0, 1.0 + i as f64 * 0.15, 0.5 + j as f64 * 0.15));
            }
        }
        (o, pts)
    }

    #[test]
    fn empty_grid_signals_empty_batch() {
        let g = SparseGrid::new([40, 40, 20], 0.2).unwrap();
        let (o, pts) = wall_scan();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            build_batch(&pts, &o, &g, &Config::default(), &mut rng),
            Err(MapError::Empty(_))
        ));
    }

    #[test]
    fn wall_samples_are_retained() {
        let mut g = SparseGrid::new([40, 40, 20], 0.2).unwrap();
        let (o, pts) = wall_scan();
        g.activate(&pts, 0.25);
        let cfg = Config {
            rays_per_batch: 500,
            samples_per_ray: 4,
            ..Config::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = build_batch(&pts, &o, &g, &cfg, &mut rng).unwrap();
        assert_eq!(b.drawn, 2000);
        assert!(b.retained_fraction() >= 0.95, "{}", b.retained_fraction());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(build_batch(&pts, &o, &g, &cfg, &mut rng).unwrap(), b);
    }

    #[test]
    fn fully_active_grid_keeps_everything() {
        let mut g = SparseGrid::new([40, 40, 20], 0.2).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                for k in 0..20 {
                    g.insert_active([i, j, k]);
                }
            }
        }
        let (o, pts) = wall_scan();
        let cfg = Config {
            rays_per_batch: 100,
            samples_per_ray: 3,
            ..Config::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = build_batch(&pts, &o, &g, &cfg, &mut rng).unwrap();
        assert_eq!(b.len(), 300);
    }
}
