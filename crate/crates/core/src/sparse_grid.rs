//! Hash-set sparse voxel grid over a submap box.
//!
//! Voxel `(i, j, k)` covers the half-open local box
//! `[i*s, (i+1)*s) x [j*s, (j+1)*s) x [k*s, (k+1)*s)`. Stored voxels always lie
//! inside `[lo, hi)`; in a fixed submap `lo = 0` and `hi = extent / s`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{MapError, Result};
use crate::submap::Submap;
use crate::{Vec3, VoxelCoord};

const PACK_BITS: u32 = 21;
const PACK_BIAS: i64 = 1 << (PACK_BITS - 1);
const PACK_MASK: u64 = (1 << PACK_BITS) - 1;

/// Packs a voxel coordinate into a 64-bit key by interleaving the bits of the
/// three biased 21-bit components (Morton order).
pub fn pack(c: VoxelCoord) -> u64 {
    let spread = |v: i64| -> u64 {
        let mut x = ((v + PACK_BIAS) as u64) & PACK_MASK;
        x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
        x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
        x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
        x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
        x = (x | (x << 2)) & 0x1249_2492_4924_9249;
        x
    };
    spread(c[0]) | (spread(c[1]) << 1) | (spread(c[2]) << 2)
}

pub fn unpack(key: u64) -> VoxelCoord {
    let compact = |mut x: u64| -> i64 {
        x &= 0x1249_2492_4924_9249;
        x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
        x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
        x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
        x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
        x = (x | (x >> 32)) & PACK_MASK;
        x as i64 - PACK_BIAS
    };
    [compact(key), compact(key >> 1), compact(key >> 2)]
}

pub fn voxel_of(p: &Vec3, s_v: f64) -> VoxelCoord {
    [
        (p.x / s_v).floor() as i64,
        (p.y / s_v).floor() as i64,
        (p.z / s_v).floor() as i64,
    ]
}

/// Squared distance from `p` to the closed voxel box `c`.
pub fn voxel_sq_distance(p: &Vec3, c: VoxelCoord, s_v: f64) -> f64 {
    let mut d2 = 0.0;
    for a in 0..3 {
        let lo = c[a] as f64 * s_v;
        let hi = (c[a] + 1) as f64 * s_v;
        let d = if p[a] < lo {
            lo - p[a]
        } else if p[a] > hi {
            p[a] - hi
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

#[derive(Debug, Clone)]
pub struct SparseGrid {
    s_v: f64,
    lo: VoxelCoord,
    hi: VoxelCoord,
    active: FxHashSet<u64>,
    free: FxHashMap<u64, u32>,
}

impl SparseGrid {
    pub fn new(dims: VoxelCoord, s_v: f64) -> Result<Self> {
        Self::with_bounds([0, 0, 0], dims, s_v)
    }

    pub fn with_bounds(lo: VoxelCoord, hi: VoxelCoord, s_v: f64) -> Result<Self> {
        if !(s_v > 0.0 && s_v.is_finite()) {
            return Err(MapError::Config(format!("voxel size must be positive, got {s_v}")));
        }
        if (0..3).any(|a| hi[a] <= lo[a]) {
            return Err(MapError::Geometry(format!("empty grid bounds {lo:?}..{hi:?}")));
        }
        if (0..3).any(|a| lo[a] < -PACK_BIAS || hi[a] > PACK_BIAS) {
            return Err(MapError::Geometry("grid bounds exceed the packable range".into()));
        }
        Ok(SparseGrid {
            s_v,
            lo,
            hi,
            active: FxHashSet::default(),
            free: FxHashMap::default(),
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.s_v
    }

    pub fn bounds(&self) -> (VoxelCoord, VoxelCoord) {
        (self.lo, self.hi)
    }

    pub fn dims(&self) -> VoxelCoord {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    /// Enlarges the bounds to cover `[lo, hi)`; stored voxels are untouched.
    pub fn grow_to(&mut self, lo: VoxelCoord, hi: VoxelCoord) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(lo[a]).max(-PACK_BIAS);
            self.hi[a] = self.hi[a].max(hi[a]).min(PACK_BIAS);
        }
    }

    pub fn in_bounds(&self, c: VoxelCoord) -> bool {
        (0..3).all(|a| c[a] >= self.lo[a] && c[a] < self.hi[a])
    }

    pub fn is_active(&self, c: VoxelCoord) -> bool {
        self.active.contains(&pack(c))
    }

    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    pub fn free_hits(&self, c: VoxelCoord) -> u32 {
        self.free.get(&pack(c)).copied().unwrap_or(0)
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Inserts an active voxel; returns false if out of bounds or already present.
    pub fn insert_active(&mut self, c: VoxelCoord) -> bool {
        if !self.in_bounds(c) {
            return false;
        }
        let key = pack(c);
        self.free.remove(&key);
        self.active.insert(key)
    }

    /// Records one free-space observation unless the voxel is active.
    pub fn mark_free(&mut self, c: VoxelCoord) {
        if !self.in_bounds(c) {
            return;
        }
        let key = pack(c);
        if !self.active.contains(&key) {
            *self.free.entry(key).or_insert(0) += 1;
        }
    }

    /// Adds `n` free-space observations unless the voxel is active.
    pub fn add_free_hits(&mut self, c: VoxelCoord, n: u32) {
        if n == 0 || !self.in_bounds(c) {
            return;
        }
        let key = pack(c);
        if !self.active.contains(&key) {
            *self.free.entry(key).or_insert(0) += n;
        }
    }

    /// Free-marked voxels and their hit counts in lexicographic order.
    pub fn free_sorted(&self) -> Vec<(VoxelCoord, u32)> {
        let mut v: Vec<(VoxelCoord, u32)> = self.free.iter().map(|(&k, &n)| (unpack(k), n)).collect();
        v.sort_unstable();
        v
    }

    /// Drops free marks on active voxels.
    pub fn resolve_conflicts(&mut self) {
        let active = &self.active;
        self.free.retain(|k, _| !active.contains(k));
    }

    /// Active voxels in lexicographic order.
    pub fn active_sorted(&self) -> Vec<VoxelCoord> {
        let mut v: Vec<VoxelCoord> = self.active.iter().map(|&k| unpack(k)).collect();
        v.sort_unstable();
        v
    }

    /// Activates every in-bounds voxel that intersects the closed `T_r`-ball
    /// around each point. Returns the number of newly activated voxels.
    pub fn activate(&mut self, points_local: &[Vec3], truncation: f64) -> usize {
        let n = (truncation / self.s_v).ceil() as i64;
        let r2 = truncation * truncation;
        let mut added = 0;
        for p in points_local {
            let c = voxel_of(p, self.s_v);
            for dx in -n..=n {
                for dy in -n..=n {
                    for dz in -n..=n {
                        let v = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if self.in_bounds(v) && voxel_sq_distance(p, v, self.s_v) <= r2 {
                            let key = pack(v);
                            if self.active.insert(key) {
                                added += 1;
                            }
                        }
                    }
                }
            }
        }
        added
    }

    /// Parameter interval `[t0, t1]` of the ray inside the grid box, if any.
    fn clip(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let lo = self.lo[a] as f64 * self.s_v;
            let hi = self.hi[a] as f64 * self.s_v;
            if dir[a] == 0.0 {
                if origin[a] < lo || origin[a] >= hi {
                    return None;
                }
            } else {
                let ta = (lo - origin[a]) / dir[a];
                let tb = (hi - origin[a]) / dir[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        (t0 < t1).then_some((t0, t1))
    }

    /// Visits the voxels intersected by the segment `origin + t*dir`,
    /// `t in [0, t_max]`, clipped to the grid box, in increasing `t`.
    ///
    /// Boundary ties advance x before y before z. The callback receives each
    /// voxel and its entry parameter.
    pub fn walk_ray(
        &self,
        origin: &Vec3,
        dir: &Vec3,
        t_max: f64,
        mut visit: impl FnMut(VoxelCoord, f64),
    ) -> Result<()> {
        let norm = dir.norm();
        if !(norm.is_finite() && norm > 0.0) || (norm - 1.0).abs() > 1e-9 {
            return Err(MapError::Geometry(format!("ray direction must be unit length, |d| = {norm}")));
        }
        if !(t_max > 0.0) {
            return Ok(());
        }
        let Some((t0, t1)) = self.clip(origin, dir, t_max) else {
            return Ok(());
        };
        let s = self.s_v;
        let entry = origin + dir * t0;
        let mut v = voxel_of(&entry, s);
        for a in 0..3 {
            v[a] = v[a].clamp(self.lo[a], self.hi[a] - 1);
        }
        let step: [i64; 3] = std::array::from_fn(|a| {
            if dir[a] > 0.0 {
                1
            } else if dir[a] < 0.0 {
                -1
            } else {
                0
            }
        });
        // Parameter at which the ray crosses the next boundary on each axis,
        // recomputed from the integer boundary index to avoid drift.
        let crossing = |a: usize, v: &VoxelCoord| -> f64 {
            match step[a] {
                1 => ((v[a] + 1) as f64 * s - origin[a]) / dir[a],
                -1 => (v[a] as f64 * s - origin[a]) / dir[a],
                _ => f64::INFINITY,
            }
        };
        let mut t_next: [f64; 3] = std::array::from_fn(|a| crossing(a, &v));
        let mut t_enter = t0;
        loop {
            visit(v, t_enter);
            let mut axis = 0;
            for a in 1..3 {
                if t_next[a] < t_next[axis] {
                    axis = a;
                }
            }
            let t = t_next[axis];
            if t >= t1 {
                break;
            }
            v[axis] += step[axis];
            if v[axis] < self.lo[axis] || v[axis] >= self.hi[axis] {
                break;
            }
            t_enter = t.max(t_enter);
            t_next[axis] = crossing(axis, &v);
        }
        Ok(())
    }

    pub fn traverse_ray(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Result<Vec<(VoxelCoord, f64)>> {
        let mut out = Vec::new();
        self.walk_ray(origin, dir, t_max, |v, t| out.push((v, t)))?;
        Ok(out)
    }

    /// Number of voxels the ray crosses before leaving the grid box.
    pub fn count_to_exit(&self, origin: &Vec3, dir: &Vec3) -> usize {
        let diag = (0..3)
            .map(|a| (self.hi[a] - self.lo[a]) as f64 * self.s_v)
            .map(|l| l * l)
            .sum::<f64>()
            .sqrt();
        let reach = origin.norm() + diag + self.s_v;
        let mut n = 0;
        let _ = self.walk_ray(origin, dir, reach * 2.0, |_, _| n += 1);
        n
    }

    /// Writes active voxel centers, one `x y z` line per voxel, in local coordinates.
    pub fn dump_active_xyz(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| MapError::io(path, e))?);
        for c in self.active_sorted() {
            writeln!(
                f,
                "{} {} {}",
                (c[0] as f64 + 0.5) * self.s_v,
                (c[1] as f64 + 0.5) * self.s_v,
                (c[2] as f64 + 0.5) * self.s_v
            )
            .map_err(|e| MapError::io(path, e))?;
        }
        f.flush().map_err(|e| MapError::io(path, e))
    }
}

/// Active voxels shared by two consecutive submaps, in the newer submap's
/// local lattice. `offset` maps them back: `v_prev = v_next + offset`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverlapSet {
    pub voxels: Vec<VoxelCoord>,
    pub offset: VoxelCoord,
}

impl OverlapSet {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn to_prev(&self, v_next: VoxelCoord) -> VoxelCoord {
        std::array::from_fn(|a| v_next[a] + self.offset[a])
    }
}

/// Copies every active voxel of `prev` that falls inside `next` into `next`
/// and returns the copied set, sorted.
pub fn overlap_voxels(prev: &Submap, next: &mut Submap) -> Result<OverlapSet> {
    let offset = prev.bbox.offset_to(&next.bbox)?;
    let mut voxels: Vec<VoxelCoord> = prev
        .grid
        .active_sorted()
        .into_iter()
        .map(|v| std::array::from_fn(|a| v[a] - offset[a]))
        .filter(|v| next.grid.in_bounds(*v))
        .collect();
    voxels.sort_unstable();
    for &v in &voxels {
        next.grid.insert_active(v);
    }
    Ok(OverlapSet { voxels, offset })
}

/// Carries free-space evidence of `prev` into the overlapping part of `next`
/// so that dynamic-object detection survives a submap transition.
pub fn carry_free_space(prev: &Submap, next: &mut Submap) -> Result<usize> {
    let offset = prev.bbox.offset_to(&next.bbox)?;
    let mut carried = 0;
    for (v, n) in prev.grid.free_sorted() {
        let w = std::array::from_fn(|a| v[a] - offset[a]);
        if next.grid.in_bounds(w) && !next.grid.is_active(w) {
            next.grid.add_free_hits(w, n);
            carried += 1;
        }
    }
    Ok(carried)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn voxel_of_examples() {
        assert_eq!(voxel_of(&Vec3::new(0.05, 0.05, 0.05), 0.2), [0, 0, 0]);
        assert_eq!(voxel_of(&Vec3::new(0.2, 0.0, 0.0), 0.2), [1, 0, 0]);
        assert_eq!(voxel_of(&Vec3::new(-0.01, 0.0, 0.0), 0.2), [-1, 0, 0]);
    }

    #[test]
    fn hand_traced_ray() {
        let g = SparseGrid::new([10, 10, 10], 0.2).unwrap();
        let out = g
            .traverse_ray(&Vec3::new(0.1, 0.1, 0.1), &Vec3::x(), 0.5)
            .unwrap();
        let voxels: Vec<_> = out.iter().map(|x| x.0).collect();
        assert_eq!(voxels, vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        for (got, want) in out.iter().map(|x| x.1).zip([0.0, 0.1, 0.3]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn ray_outside_box_is_empty() {
        let g = SparseGrid::new([4, 4, 4], 0.2).unwrap();
        let out = g
            .traverse_ray(&Vec3::new(-1.0, 5.0, 0.1), &Vec3::x(), 3.0)
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn diagonal_ray_visits_at_most_four() {
        let g = SparseGrid::new([2, 2, 2], 0.2).unwrap();
        let d = Vec3::new(1.0, 1.0, 1.0).normalize();
        let out = g.traverse_ray(&Vec3::zeros(), &d, 1.0).unwrap();
        assert!(out.len() <= 4, "{out:?}");
        assert_eq!(out.first().unwrap().0, [0, 0, 0]);
        assert_eq!(out.last().unwrap().0, [1, 1, 1]);
    }

    #[test]
    fn zero_direction_is_error() {
        let g = SparseGrid::new([2, 2, 2], 0.2).unwrap();
        assert!(g.traverse_ray(&Vec3::zeros(), &Vec3::zeros(), 1.0).is_err());
    }

    #[test]
    fn activation_matches_brute_force_ball_box() {
        let s = 0.2;
        let tr = 0.25;
        let mut g = SparseGrid::new([10, 10, 10], s).unwrap();
        let p = Vec3::new(1.1, 1.1, 1.1);
        g.activate(&[p], tr);
        // Independent oracle: sample each candidate voxel densely and keep it
        // if some sample lies inside the ball.
        let mut expect = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    let mut hit = false;
                    let m = 20;
                    'scan: for a in 0..=m {
                        for b in 0..=m {
                            for c in 0..=m {
                                let q = Vec3::new(
                                    (i as f64 + a as f64 / m as f64) * s,
                                    (j as f64 + b as f64 / m as f64) * s,
                                    (k as f64 + c as f64 / m as f64) * s,
                                );
                                if (q - p).norm() <= tr {
                                    hit = true;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    if hit {
                        expect.push([i, j, k]);
                    }
                }
            }
        }
        assert_eq!(g.active_sorted(), expect);
        assert_eq!(expect.len(), 27);
    }

    #[test]
    fn activation_idempotent_and_empty_noop() {
        let mut g = SparseGrid::new([20, 20, 20], 0.2).unwrap();
        g.activate(&[], 0.25);
        assert_eq!(g.num_active(), 0);
        let pts = vec![Vec3::new(1.0, 2.0, 0.5), Vec3::new(2.3, 0.7, 1.9)];
        g.activate(&pts, 0.25);
        let first = g.active_sorted();
        assert_eq!(g.activate(&pts, 0.25), 0);
        assert_eq!(g.active_sorted(), first);
    }

    #[test]
    fn free_marks_yield_to_active() {
        let mut g = SparseGrid::new([4, 4, 4], 0.2).unwrap();
        g.insert_active([1, 1, 1]);
        g.mark_free([1, 1, 1]);
        g.mark_free([2, 1, 1]);
        assert_eq!(g.free_hits([1, 1, 1]), 0);
        assert_eq!(g.free_hits([2, 1, 1]), 1);
        g.insert_active([2, 1, 1]);
        assert_eq!(g.free_hits([2, 1, 1]), 0);
    }

    proptest! {
        #[test]
        fn pack_round_trip(c in proptest::array::uniform3(-1_000_000i64..1_000_000)) {
            prop_assert_eq!(unpack(pack(c)), c);
        }

        #[test]
        fn activation_band(pts in proptest::collection::vec(proptest::array::uniform3(0.0f64..4.0), 1..20)) {
            let s = 0.2;
            let tr = 0.25;
            let pts: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            let mut g = SparseGrid::new([20, 20, 20], s).unwrap();
            g.activate(&pts, tr);
            let bound = tr + 3f64.sqrt() / 2.0 * s;
            for c in g.active_sorted() {
                let center = Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * s;
                let near = pts.iter().map(|p| (p - center).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(near <= bound + 1e-12);
            }
        }

        #[test]
        fn t_enter_increasing(o in proptest::array::uniform3(-1.0f64..5.0),
                              d in proptest::array::uniform3(-1.0f64..1.0),
                              t in 0.1f64..8.0) {
            let d = Vec3::from(d);
            prop_assume!(d.norm() > 1e-3);
            let g = SparseGrid::new([20, 20, 20], 0.2).unwrap();
            let out = g.traverse_ray(&Vec3::from(o), &d.normalize(), t).unwrap();
            for w in out.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
                let step: i64 = (0..3).map(|a| (w[0].0[a] - w[1].0[a]).abs()).sum();
                prop_assert_eq!(step, 1);
            }
        }
    }
}
