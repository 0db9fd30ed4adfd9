//! Submap creation, lattice alignment and frame transforms.
//!
//! All submaps of a run share one world lattice: the minimum corner of the
//! first submap is the anchor, and every later submap stores its minimum
//! corner as an integer voxel offset from that anchor. World positions of
//! lattice vertices are computed from integers, so the same vertex seen from
//! two submaps has bit-identical coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{MapError, Result};
use crate::field::HashEncoding;
use crate::scan_io::{Pose, Scan};
use crate::sparse_grid::SparseGrid;
use crate::{mix_seed, Vec3, VoxelCoord};

pub fn transform_to_world(scan: &Scan, pose: &Pose) -> Result<Vec<Vec3>> {
    pose.validate()?;
    Ok(scan.points.iter().map(|p| pose.transform(p)).collect())
}

pub fn to_local(points_world: &[Vec3], b_min: &Vec3) -> Vec<Vec3> {
    points_world.iter().map(|p| p - b_min).collect()
}

fn in_box(p: &Vec3, b_min: &Vec3, extent: &Vec3) -> bool {
    (0..3).all(|a| p[a] >= b_min[a] && p[a] < b_min[a] + extent[a])
}

/// Fraction of points inside the half-open box `[b_min, b_min + extent)`.
pub fn entry_rate(points_world: &[Vec3], b_min: &Vec3, extent: &Vec3) -> Result<f64> {
    if points_world.is_empty() {
        return Err(MapError::Empty("entry rate of an empty point list"));
    }
    let inside = points_world.iter().filter(|p| in_box(p, b_min, extent)).count();
    Ok(inside as f64 / points_world.len() as f64)
}

pub fn should_create(r: f64, r_min: f64) -> bool {
    r < r_min
}

/// Integer lattice offset `round((c_raw - c_prev) / s_v)`, rounding half away from zero.
pub fn align_offset(c_prev: &Vec3, c_raw: &Vec3, s_v: f64) -> [i64; 3] {
    std::array::from_fn(|a| ((c_raw[a] - c_prev[a]) / s_v).round() as i64)
}

pub fn align_center(c_prev: &Vec3, c_raw: &Vec3, s_v: f64) -> Vec3 {
    let k = align_offset(c_prev, c_raw, s_v);
    Vec3::new(
        c_prev.x + k[0] as f64 * s_v,
        c_prev.y + k[1] as f64 * s_v,
        c_prev.z + k[2] as f64 * s_v,
    )
}

pub fn raw_center(points_world: &[Vec3]) -> Result<Vec3> {
    if points_world.is_empty() {
        return Err(MapError::Empty("center of an empty point list"));
    }
    let sum = points_world.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    Ok(sum / points_world.len() as f64)
}

/// A retained frame used to replay a submap before it is retired.
#[derive(Debug, Clone)]
pub struct KeyScan {
    pub frame_index: usize,
    pub pose: Pose,
    pub origin_local: Vec3,
    pub points_local: Vec<Vec3>,
}

/// Placement of a submap on the shared world lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmapBox {
    pub center: Vec3,
    pub b_min: Vec3,
    pub extent: Vec3,
    pub anchor: Vec3,
    pub lattice_origin: VoxelCoord,
    pub voxel_size: f64,
}

impl SubmapBox {
    /// Box for the first submap of a run; its minimum corner becomes the anchor.
    pub fn first(center: Vec3, config: &Config) -> Result<Self> {
        config.validate()?;
        let extent = Vec3::from(config.submap_extent);
        let b_min = center - extent / 2.0;
        Ok(SubmapBox {
            center,
            b_min,
            extent,
            anchor: b_min,
            lattice_origin: [0; 3],
            voxel_size: config.voxel_size,
        })
    }

    /// Box centered on the lattice point nearest to `c_raw`.
    pub fn next(&self, c_raw: &Vec3) -> Self {
        let k = align_offset(&self.center, c_raw, self.voxel_size);
        let center = align_center(&self.center, c_raw, self.voxel_size);
        SubmapBox {
            center,
            b_min: center - self.extent / 2.0,
            extent: self.extent,
            anchor: self.anchor,
            lattice_origin: std::array::from_fn(|a| self.lattice_origin[a] + k[a]),
            voxel_size: self.voxel_size,
        }
    }

    pub fn dims(&self) -> VoxelCoord {
        std::array::from_fn(|a| (self.extent[a] / self.voxel_size).round() as i64)
    }

    pub fn contains_world(&self, p: &Vec3) -> bool {
        in_box(p, &self.b_min, &self.extent)
    }

    /// World position of a local lattice vertex, exact across submaps.
    pub fn vertex_world(&self, v: VoxelCoord) -> Vec3 {
        let s = self.voxel_size;
        Vec3::new(
            self.anchor.x + (self.lattice_origin[0] + v[0]) as f64 * s,
            self.anchor.y + (self.lattice_origin[1] + v[1]) as f64 * s,
            self.anchor.z + (self.lattice_origin[2] + v[2]) as f64 * s,
        )
    }

    /// World position of a point given in local voxel units.
    pub fn local_units_to_world(&self, u: &Vec3) -> Vec3 {
        let s = self.voxel_size;
        Vec3::new(
            self.anchor.x + (self.lattice_origin[0] as f64 + u.x) * s,
            self.anchor.y + (self.lattice_origin[1] as f64 + u.y) * s,
            self.anchor.z + (self.lattice_origin[2] as f64 + u.z) * s,
        )
    }

    /// Lattice offset of `other` relative to `self`, or an error if the two
    /// boxes do not share a lattice.
    pub fn offset_to(&self, other: &SubmapBox) -> Result<VoxelCoord> {
        if self.anchor != other.anchor || self.voxel_size != other.voxel_size {
            return Err(MapError::Misaligned);
        }
        Ok(std::array::from_fn(|a| other.lattice_origin[a] - self.lattice_origin[a]))
    }
}

#[derive(Debug)]
pub struct Submap {
    pub id: usize,
    pub bbox: SubmapBox,
    pub grid: SparseGrid,
    pub encoding: HashEncoding,
    pub keyscans: Vec<KeyScan>,
    pub frames: Vec<usize>,
}

impl Submap {
    pub fn new(id: usize, bbox: SubmapBox, config: &Config) -> Result<Self> {
        let dims = bbox.dims();
        for a in 0..3 {
            let exact = dims[a] as f64 * config.voxel_size;
            if dims[a] <= 0 || (exact - bbox.extent[a]).abs() > 1e-9 * bbox.extent[a].max(1.0) {
                return Err(MapError::Config(format!(
                    "submap extent {} is not a positive multiple of the voxel size",
                    bbox.extent[a]
                )));
            }
        }
        let grid = SparseGrid::new(dims, config.voxel_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.rng_seed, 0x5EED_0000 + id as u64));
        let mut encoding = HashEncoding::new(&config.encoding_spec(), dims, &mut rng)?;
        encoding.set_anchor(bbox.lattice_origin);
        Ok(Submap {
            id,
            bbox,
            grid,
            encoding,
            keyscans: Vec::new(),
            frames: Vec::new(),
        })
    }

    pub fn b_min(&self) -> Vec3 {
        self.bbox.b_min
    }

    /// Appends a key-scan when the sensor moved more than `d_min` since the
    /// last one. The first frame of a submap is always kept.
    pub fn maybe_add_keyscan(&mut self, keyscan: KeyScan, d_min: f64) -> bool {
        let keep = match self.keyscans.last() {
            None => true,
            Some(last) => (keyscan.pose.translation - last.pose.translation).norm() > d_min,
        };
        if keep {
            self.keyscans.push(keyscan);
        }
        keep
    }

    /// Grows the grid and field domain so that every point lies inside (monolithic mode).
    pub fn grow_to_include(&mut self, points_local: &[Vec3], margin: f64) {
        if points_local.is_empty() {
            return;
        }
        let s = self.bbox.voxel_size;
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for p in points_local {
            for a in 0..3 {
                lo[a] = lo[a].min(((p[a] - margin) / s).floor() as i64);
                hi[a] = hi[a].max(((p[a] + margin) / s).floor() as i64 + 1);
            }
        }
        self.grid.grow_to(lo, hi);
        let (glo, ghi) = self.grid.bounds();
        self.encoding.set_domain(glo, ghi);
    }

    /// True when the local point lies inside the current grid bounds.
    pub fn contains_local(&self, p: &Vec3) -> bool {
        let (lo, hi) = self.grid.bounds();
        let s = self.bbox.voxel_size;
        (0..3).all(|a| p[a] >= lo[a] as f64 * s && p[a] < hi[a] as f64 * s)
    }
}

/// Spec-level constructor: a standalone submap centered at `c_aligned` whose
/// minimum corner anchors its own lattice.
pub fn create_submap(c_aligned: Vec3, config: &Config) -> Result<Submap> {
    Submap::new(0, SubmapBox::first(c_aligned, config)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    fn small_config() -> Config {
        Config {
            submap_extent: [4.0, 4.0, 2.0],
            hash_levels: 2,
            log2_table_size: 8,
            base_resolution: 4,
            mlp_hidden: 8,
            ..Config::default()
        }
    }

    #[test]
    fn transforms() {
        let scan = Scan::new(vec![Vec3::new(1.0, 2.0, 3.0)], 0);
        let w = transform_to_world(&scan, &Pose::identity()).unwrap();
        assert_eq!(w[0], Vec3::new(1.0, 2.0, 3.0));

        let yaw = Pose::new(
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Vec3::zeros(),
        )
        .unwrap();
        let w = transform_to_world(&Scan::new(vec![Vec3::x()], 0), &yaw).unwrap();
        assert!((w[0] - Vec3::y()).norm() < 1e-12);

        let shift = Pose::new(Matrix3::identity(), Vec3::new(5.0, 0.0, 0.0)).unwrap();
        let w = transform_to_world(&scan, &shift).unwrap();
        assert_eq!(w[0], Vec3::new(6.0, 2.0, 3.0));

        let l = to_local(&[Vec3::zeros()], &Vec3::new(-10.0, -10.0, -2.0));
        assert_eq!(l[0], Vec3::new(10.0, 10.0, 2.0));
        assert_eq!(to_local(&[Vec3::new(1.5, 2.0, -3.0)], &Vec3::zeros())[0], Vec3::new(1.5, 2.0, -3.0));
    }

    #[test]
    fn entry_rates() {
        let b = Vec3::zeros();
        let l = Vec3::new(1.0, 1.0, 1.0);
        let inside = Vec3::new(0.5, 0.5, 0.5);
        let outside = Vec3::new(2.0, 0.5, 0.5);
        assert_eq!(entry_rate(&[inside; 4], &b, &l).unwrap(), 1.0);
        assert_eq!(entry_rate(&[inside, inside, outside, inside], &b, &l).unwrap(), 0.75);
        assert_eq!(entry_rate(&[outside; 3], &b, &l).unwrap(), 0.0);
        assert!(entry_rate(&[], &b, &l).is_err());
        // Upper faces are excluded.
        assert_eq!(entry_rate(&[Vec3::new(1.0, 0.5, 0.5)], &b, &l).unwrap(), 0.0);
    }

    #[test]
    fn creation_threshold_is_strict() {
        assert!(should_create(0.74, 0.75));
        assert!(!should_create(0.75, 0.75));
        assert!(!should_create(1.0, 0.75));
    }

    #[test]
    fn align_center_examples() {
        let c = align_center(&Vec3::zeros(), &Vec3::new(1.07, -0.33, 0.46), 0.2);
        assert!((c - Vec3::new(1.0, -0.4, 0.4)).amax() < 1e-9);
        let prev = Vec3::new(0.3, -1.2, 4.0);
        assert_eq!(align_center(&prev, &prev, 0.2), prev);
        let c = align_center(&Vec3::zeros(), &Vec3::new(0.6, 0.2, -0.4), 0.2);
        assert!((c - Vec3::new(0.6, 0.2, -0.4)).amax() < 1e-9);
        // Ties round away from zero.
        assert_eq!(align_offset(&Vec3::zeros(), &Vec3::new(0.25, -0.25, 0.0), 0.5), [1, -1, 0]);
    }

    #[test]
    fn raw_center_examples() {
        let c = raw_center(&[Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)]).unwrap();
        assert_eq!(c, Vec3::new(1.0, 0.0, 0.0));
        let p = Vec3::new(3.0, -1.0, 2.5);
        assert_eq!(raw_center(&[p]).unwrap(), p);
        let mut cube = Vec::new();
        for i in 0..8 {
            cube.push(Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64) * 2.0);
        }
        assert_eq!(raw_center(&cube).unwrap(), Vec3::new(1.0, 1.0, 1.0));
        assert!(raw_center(&[]).is_err());
    }

    #[test]
    fn create_submap_corner() {
        let cfg = Config {
            submap_extent: [40.0, 40.0, 10.0],
            ..small_config()
        };
        let sm = create_submap(Vec3::zeros(), &cfg).unwrap();
        assert_eq!(sm.b_min(), Vec3::new(-20.0, -20.0, -5.0));
        assert_eq!(sm.grid.num_active(), 0);
        assert!(sm.keyscans.is_empty());
        assert_eq!(sm.grid.dims(), [200, 200, 50]);
    }

    #[test]
    fn extent_off_lattice_is_rejected() {
        let cfg = Config {
            submap_extent: [4.1, 4.0, 2.0],
            ..small_config()
        };
        assert!(create_submap(Vec3::zeros(), &cfg).is_err());
    }

    #[test]
    fn keyscan_policy() {
        let cfg = small_config();
        let mut sm = create_submap(Vec3::zeros(), &cfg).unwrap();
        let ks = |x: f64| KeyScan {
            frame_index: 0,
            pose: Pose::from_yaw(0.0, Vec3::new(x, 0.0, 0.0)),
            origin_local: Vec3::zeros(),
            points_local: vec![],
        };
        assert!(sm.maybe_add_keyscan(ks(0.0), 2.0));
        assert!(!sm.maybe_add_keyscan(ks(1.9), 2.0));
        assert!(sm.maybe_add_keyscan(ks(2.1), 2.0));
        assert_eq!(sm.keyscans.len(), 2);
    }

    proptest! {
        #[test]
        fn chains_stay_on_lattice(steps in proptest::collection::vec(proptest::array::uniform3(-30.0f64..30.0), 1..12)) {
            let cfg = small_config();
            let mut boxes = vec![SubmapBox::first(Vec3::new(0.13, -0.71, 0.4), &cfg).unwrap()];
            for s in steps {
                let prev = *boxes.last().unwrap();
                boxes.push(prev.next(&(prev.center + Vec3::from(s))));
            }
            for a in &boxes {
                for b in &boxes {
                    let d = (b.center - a.center) / cfg.voxel_size;
                    for k in 0..3 {
                        prop_assert!((d[k] - d[k].round()).abs() < 1e-6);
                    }
                    // Shared vertices coincide bit-exactly.
                    let off = a.offset_to(b).unwrap();
                    let v = [3, 5, 7];
                    let vb = [v[0] - off[0], v[1] - off[1], v[2] - off[2]];
                    prop_assert_eq!(a.vertex_world(v), b.vertex_world(vb));
                }
            }
        }

        #[test]
        fn entry_rate_permutation_invariant(pts in proptest::collection::vec(proptest::array::uniform3(-2.0f64..3.0), 1..50), rot in 0usize..50) {
            let pts: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            let mut shuffled = pts.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let b = Vec3::zeros();
            let l = Vec3::new(1.0, 1.0, 1.0);
            prop_assert_eq!(entry_rate(&pts, &b, &l).unwrap(), entry_rate(&shuffled, &b, &l).unwrap());
        }

        #[test]
        fn identity_composition(p in proptest::array::uniform3(-100.0f64..100.0)) {
            let scan = Scan::new(vec![Vec3::from(p)], 0);
            let w = transform_to_world(&scan, &Pose::identity()).unwrap();
            prop_assert_eq!(to_local(&w, &Vec3::zeros())[0], Vec3::from(p));
        }
    }
}
