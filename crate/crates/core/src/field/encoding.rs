use rand::Rng;

use crate::error::{MapError, Result};
use crate::{Vec3, VoxelCoord};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Shape of a multiresolution hash encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingSpec {
    pub levels: usize,
    pub features: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
}

impl EncodingSpec {
    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn width(&self) -> usize {
        self.levels * self.features
    }
}

/// Spatial hash of an integer cell into `[0, 2^log2_table_size)`.
pub fn hash_index(cell: [i64; 3], log2_table_size: u32) -> usize {
    let h = (cell[0] as u32).wrapping_mul(PRIMES[0])
        ^ (cell[1] as u32).wrapping_mul(PRIMES[1])
        ^ (cell[2] as u32).wrapping_mul(PRIMES[2]);
    (h as usize) & ((1usize << log2_table_size) - 1)
}

/// Per-level grid resolutions, geometric from `base` to `finest` with the
/// growth factor `exp((ln finest - ln base) / (L - 1))`, forced strictly
/// increasing.
pub fn level_resolutions(levels: usize, base: usize, finest: usize) -> Vec<u32> {
    if levels == 1 {
        return vec![finest.max(1) as u32];
    }
    let base = base.max(1) as f64;
    let growth = ((finest as f64).ln() - base.ln()) / (levels - 1) as f64;
    let mut res: Vec<u32> = (0..levels)
        .map(|l| (base * (growth * l as f64).exp()).floor().max(1.0) as u32)
        .collect();
    res[levels - 1] = finest as u32;
    for l in 1..levels {
        if res[l] <= res[l - 1] {
            res[l] = res[l - 1] + 1;
        }
    }
    res
}

/// Trilinear corners of `x` in a unit-spaced grid: cell offsets are the bits
/// of the corner index (x in bit 0, y in bit 1, z in bit 2).
#[inline]
pub fn trilinear_corners(x: [f64; 3]) -> ([i64; 3], [f64; 8]) {
    let base = [x[0].floor(), x[1].floor(), x[2].floor()];
    let f = [x[0] - base[0], x[1] - base[1], x[2] - base[2]];
    (base.map(|b| b as i64), corner_weights(f))
}

#[inline]
pub fn corner_offset(c: usize) -> [i64; 3] {
    [(c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64]
}

/// Learnable hash tables over one submap.
///
/// Positions are expressed in voxel units of the submap lattice. Level `l`
/// sees the position shifted by `anchor` (the submap's offset on the shared
/// world lattice) and scaled by `resolution[l] / finest`. Submaps with equal
/// extents therefore share level grids and hash slots wherever they overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct HashEncoding {
    spec: EncodingSpec,
    resolutions: Vec<u32>,
    scales: Vec<f64>,
    finest: u32,
    lo: VoxelCoord,
    hi: VoxelCoord,
    anchor: VoxelCoord,
    /// Layout `[level][table entry][feature]`.
    pub params: Vec<f64>,
}

impl HashEncoding {
    pub fn new(spec: &EncodingSpec, dims: VoxelCoord, rng: &mut impl Rng) -> Result<Self> {
        let mut enc = Self::zeros(spec, dims)?;
        for p in enc.params.iter_mut() {
            *p = rng.gen_range(-1e-4..1e-4);
        }
        Ok(enc)
    }

    pub fn zeros(spec: &EncodingSpec, dims: VoxelCoord) -> Result<Self> {
        if spec.levels == 0 || spec.features == 0 || spec.log2_table_size == 0 || spec.log2_table_size > 30 {
            return Err(MapError::Config(format!("invalid encoding shape {spec:?}")));
        }
        if dims.iter().any(|&d| d <= 0) {
            return Err(MapError::Geometry(format!("invalid field dimensions {dims:?}")));
        }
        let finest = *dims.iter().max().unwrap() as usize;
        let resolutions = level_resolutions(spec.levels, spec.base_resolution, finest);
        Self::from_parts(*spec, resolutions, finest as u32, [0; 3], dims, vec![0.0; spec.levels * spec.table_size() * spec.features])
    }

    pub(crate) fn from_parts(
        spec: EncodingSpec,
        resolutions: Vec<u32>,
        finest: u32,
        lo: VoxelCoord,
        hi: VoxelCoord,
        params: Vec<f64>,
    ) -> Result<Self> {
        if resolutions.len() != spec.levels || params.len() != spec.levels * spec.table_size() * spec.features {
            return Err(MapError::Shape("encoding parameters do not match the level layout".into()));
        }
        if resolutions.windows(2).any(|w| w[1] <= w[0]) || finest == 0 {
            return Err(MapError::Shape("level resolutions must be strictly increasing".into()));
        }
        let scales = resolutions.iter().map(|&r| r as f64 / finest as f64).collect();
        Ok(HashEncoding {
            spec,
            resolutions,
            scales,
            finest,
            lo,
            hi,
            anchor: [0; 3],
            params,
        })
    }

    pub fn spec(&self) -> &EncodingSpec {
        &self.spec
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn finest(&self) -> u32 {
        self.finest
    }

    pub fn width(&self) -> usize {
        self.spec.width()
    }

    /// Vertex domain `[lo, hi]` (inclusive) in voxel units.
    pub fn domain(&self) -> (VoxelCoord, VoxelCoord) {
        (self.lo, self.hi)
    }

    pub fn set_domain(&mut self, lo: VoxelCoord, hi: VoxelCoord) {
        self.lo = lo;
        self.hi = hi;
    }

    pub fn anchor(&self) -> VoxelCoord {
        self.anchor
    }

    pub fn set_anchor(&mut self, anchor: VoxelCoord) {
        self.anchor = anchor;
    }

    pub fn contains_units(&self, u: &Vec3) -> bool {
        (0..3).all(|a| u[a] >= self.lo[a] as f64 && u[a] <= self.hi[a] as f64)
    }

    pub fn contains_vertex(&self, v: VoxelCoord) -> bool {
        (0..3).all(|a| v[a] >= self.lo[a] && v[a] <= self.hi[a])
    }

    /// Global entry id (level-major) of a table slot.
    #[inline]
    pub fn entry_id(&self, level: usize, slot: usize) -> usize {
        level * self.spec.table_size() + slot
    }

    /// Calls `visit(level, entry_id, weight)` for every table entry that
    /// contributes to the encoding at `u` (voxel units). Zero weights are skipped.
    #[inline]
    pub fn for_each_entry(&self, u: [f64; 3], mut visit: impl FnMut(usize, usize, f64)) {
        let g = [
            u[0] + self.anchor[0] as f64,
            u[1] + self.anchor[1] as f64,
            u[2] + self.anchor[2] as f64,
        ];
        for (l, &s) in self.scales.iter().enumerate() {
            let x = [g[0] * s, g[1] * s, g[2] * s];
            let (base, w) = trilinear_corners(x);
            for (c, &wc) in w.iter().enumerate() {
                if wc == 0.0 {
                    continue;
                }
                let o = corner_offset(c);
                let cell = [base[0] + o[0], base[1] + o[1], base[2] + o[2]];
                let slot = hash_index(cell, self.spec.log2_table_size);
                visit(l, self.entry_id(l, slot), wc);
            }
        }
    }

    /// Concatenated per-level features at `u` (voxel units), written into `out`.
    pub fn encode_into(&self, u: [f64; 3], out: &mut [f64]) {
        let f = self.spec.features;
        out.iter_mut().for_each(|x| *x = 0.0);
        self.for_each_entry(u, |l, e, w| {
            let src = &self.params[e * f..(e + 1) * f];
            for k in 0..f {
                out[l * f + k] += w * src[k];
            }
        });
    }

    /// Feature vector of a lattice vertex.
    pub fn vertex_feature(&self, v: VoxelCoord) -> Result<Vec<f64>> {
        if !self.contains_vertex(v) {
            return Err(MapError::OutOfDomain(v.map(|x| x as f64)));
        }
        let mut out = vec![0.0; self.width()];
        self.encode_into(v.map(|x| x as f64), &mut out);
        Ok(out)
    }

    /// Feature vector at an arbitrary position (voxel units), by per-level
    /// trilinear interpolation.
    pub fn point_encoding(&self, u: &Vec3) -> Result<Vec<f64>> {
        if !self.contains_units(u) {
            return Err(MapError::OutOfDomain([u.x, u.y, u.z]));
        }
        let mut out = vec![0.0; self.width()];
        self.encode_into([u.x, u.y, u.z], &mut out);
        Ok(out)
    }

    /// Voxel containing `u` and the fractional position inside it. Points on
    /// the upper domain face belong to the last voxel.
    pub fn locate(&self, u: &Vec3) -> Result<(VoxelCoord, [f64; 3])> {
        if !self.contains_units(u) {
            return Err(MapError::OutOfDomain([u.x, u.y, u.z]));
        }
        let mut v = [0i64; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let b = (u[a].floor() as i64).min(self.hi[a] - 1).max(self.lo[a]);
            v[a] = b;
            f[a] = u[a] - b as f64;
        }
        Ok((v, f))
    }

    /// Voxel-level double interpolation: the 8 corner vertex features of the
    /// voxel containing `u`, blended trilinearly.
    pub fn interpolate(&self, u: &Vec3) -> Result<Vec<f64>> {
        let (v, f) = self.locate(u)?;
        let width = self.width();
        let mut out = vec![0.0; width];
        let mut corner = vec![0.0; width];
        let w = corner_weights(f);
        for (c, &wc) in w.iter().enumerate() {
            let o = corner_offset(c);
            self.encode_into([(v[0] + o[0]) as f64, (v[1] + o[1]) as f64, (v[2] + o[2]) as f64], &mut corner);
            for k in 0..width {
                out[k] += wc * corner[k];
            }
        }
        Ok(out)
    }

    pub fn num_entries(&self) -> usize {
        self.spec.levels * self.spec.table_size()
    }
}

/// Trilinear weights for a fractional position in a unit cell.
#[inline]
pub fn corner_weights(f: [f64; 3]) -> [f64; 8] {
    let mut w = [0.0; 8];
    for (c, wc) in w.iter_mut().enumerate() {
        let wx = if c & 1 == 1 { f[0] } else { 1.0 - f[0] };
        let wy = if c & 2 == 2 { f[1] } else { 1.0 - f[1] };
        let wz = if c & 4 == 4 { f[2] } else { 1.0 - f[2] };
        *wc = wx * wy * wz;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> EncodingSpec {
        EncodingSpec {
            levels: 4,
            features: 2,
            log2_table_size: 10,
            base_resolution: 4,
        }
    }

    #[test]
    fn origin_hashes_to_zero() {
        assert_eq!(hash_index([0, 0, 0], 19), 0);
        assert_eq!(hash_index([3, -7, 11], 19), hash_index([3, -7, 11], 19));
    }

    #[test]
    fn hash_buckets_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = 12;
        let mut load = vec![0u32; 1 << t];
        let n = 1_000_000;
        for _ in 0..n {
            let c = [rng.gen_range(-5000..5000), rng.gen_range(-5000..5000), rng.gen_range(-5000..5000)];
            load[hash_index(c, t)] += 1;
        }
        let mean = n as f64 / load.len() as f64;
        let max = *load.iter().max().unwrap() as f64;
        assert!(max <= 10.0 * mean, "max {max} mean {mean}");
    }

    #[test]
    fn resolutions_geometric_and_increasing() {
        let r = level_resolutions(16, 16, 200);
        assert_eq!(r[0], 16);
        assert_eq!(r[15], 200);
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        let r = level_resolutions(4, 16, 10);
        assert!(r.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_tables_give_zero_features() {
        let enc = HashEncoding::zeros(&spec(), [10, 10, 10]).unwrap();
        assert!(enc.vertex_feature([3, 4, 5]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn node_lookup_has_unit_weight() {
        let mut enc = HashEncoding::zeros(&spec(), [8, 8, 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in enc.params.iter_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
        // Finest level has resolution 8 = finest, so lattice vertices are nodes.
        let v = [3, 5, 2];
        let feat = enc.vertex_feature(v).unwrap();
        let l = 3;
        let slot = hash_index(v, 10);
        let e = enc.entry_id(l, slot);
        assert_eq!(feat[l * 2], enc.params[e * 2]);
        assert_eq!(feat[l * 2 + 1], enc.params[e * 2 + 1]);
    }

    #[test]
    fn perturbation_is_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut enc = HashEncoding::new(&spec(), [12, 12, 12], &mut rng).unwrap();
        let v0 = [6, 6, 6];
        let mut touched = Vec::new();
        enc.for_each_entry(v0.map(|x| x as f64), |_, e, _| touched.push(e));
        let before: Vec<Vec<f64>> = (0..=12)
            .flat_map(|i| (0..=12).map(move |j| [i, j, 3]))
            .map(|v| enc.vertex_feature(v).unwrap())
            .collect();
        let e = touched[touched.len() - 1];
        enc.params[e * 2] += 1.0;
        let mut idx = 0;
        for i in 0..=12 {
            for j in 0..=12 {
                let v = [i, j, 3];
                let mut reaches = false;
                enc.for_each_entry(v.map(|x| x as f64), |_, e2, _| reaches |= e2 == e);
                let after = enc.vertex_feature(v).unwrap();
                if !reaches {
                    assert_eq!(after, before[idx]);
                }
                idx += 1;
            }
        }
    }

    #[test]
    fn interpolation_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = HashEncoding::new(&spec(), [6, 6, 6], &mut rng).unwrap();
        let center = enc.interpolate(&Vec3::new(2.5, 3.5, 1.5)).unwrap();
        let mut mean = vec![0.0; enc.width()];
        for c in 0..8 {
            let o = corner_offset(c);
            let f = enc.vertex_feature([2 + o[0], 3 + o[1], 1 + o[2]]).unwrap();
            for k in 0..mean.len() {
                mean[k] += f[k] / 8.0;
            }
        }
        for k in 0..mean.len() {
            assert!((center[k] - mean[k]).abs() < 1e-15);
        }
        let corner = enc.interpolate(&Vec3::new(2.0, 3.0, 1.0)).unwrap();
        assert_eq!(corner, enc.vertex_feature([2, 3, 1]).unwrap());
        assert!(enc.interpolate(&Vec3::new(6.5, 0.0, 0.0)).is_err());
    }

    #[test]
    fn weights_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let f = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let s: f64 = corner_weights(f).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let (_, w) = trilinear_corners([rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 0.3]);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn continuity_across_faces() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let enc = HashEncoding::new(&spec(), [10, 10, 10], &mut rng).unwrap();
        for _ in 0..100 {
            let axis = rng.gen_range(0..3);
            let mut u = Vec3::new(rng.gen_range(1.0..9.0), rng.gen_range(1.0..9.0), rng.gen_range(1.0..9.0));
            u[axis] = rng.gen_range(1..9) as f64;
            let eps = 1e-9;
            let mut a = u;
            let mut b = u;
            a[axis] -= eps;
            b[axis] += eps;
            let fa = enc.interpolate(&a).unwrap();
            let fb = enc.interpolate(&b).unwrap();
            for k in 0..fa.len() {
                assert!((fa[k] - fb[k]).abs() < 1e-10);
            }
        }
    }
}
