//! Compiled lookup structure for batched forward and reverse passes.
//!
//! A plan resolves a set of query points once: the voxel containing each
//! query, the unique lattice vertices those voxels touch, and the hash-table
//! entries each vertex reads at every level. Parameters can then change
//! between iterations without recomputing any hashing.

use ndarray::Array2;
use rustc_hash::FxHashMap;

use super::encoding::{corner_offset, corner_weights, HashEncoding};
use crate::error::Result;
use crate::{Vec3, VoxelCoord};

#[derive(Debug, Clone)]
pub struct FieldPlan {
    width: usize,
    features: usize,
    vertices: Vec<VoxelCoord>,
    vert_offsets: Vec<u32>,
    st_slot: Vec<u32>,
    st_level: Vec<u8>,
    st_weight: Vec<f64>,
    entries: Vec<u32>,
    q_vert: Vec<[u32; 8]>,
    q_weight: Vec<[f64; 8]>,
}

#[derive(Default)]
struct Builder {
    vertex_ids: FxHashMap<VoxelCoord, u32>,
    vertices: Vec<VoxelCoord>,
}

impl Builder {
    fn vertex(&mut self, v: VoxelCoord) -> u32 {
        let n = self.vertices.len() as u32;
        *self.vertex_ids.entry(v).or_insert_with(|| {
            self.vertices.push(v);
            n
        })
    }
}

impl FieldPlan {
    /// Compiles `queries` (voxel units, inside the encoding domain) plus
    /// `extra_vertices`. Returns the plan and the vertex ids of the extras.
    pub fn build(enc: &HashEncoding, queries: &[Vec3], extra_vertices: &[VoxelCoord]) -> Result<(Self, Vec<u32>)> {
        let mut b = Builder::default();
        let mut q_vert = Vec::with_capacity(queries.len());
        let mut q_weight = Vec::with_capacity(queries.len());
        for u in queries {
            let (v, f) = enc.locate(u)?;
            let w = corner_weights(f);
            let mut ids = [0u32; 8];
            for (c, id) in ids.iter_mut().enumerate() {
                let o = corner_offset(c);
                *id = b.vertex([v[0] + o[0], v[1] + o[1], v[2] + o[2]]);
            }
            q_vert.push(ids);
            q_weight.push(w);
        }
        let mut extra_ids = Vec::with_capacity(extra_vertices.len());
        for &v in extra_vertices {
            if !enc.contains_vertex(v) {
                return Err(crate::MapError::OutOfDomain(v.map(|x| x as f64)));
            }
            extra_ids.push(b.vertex(v));
        }

        let mut entry_slots: FxHashMap<u32, u32> = FxHashMap::default();
        let mut entries = Vec::new();
        let mut vert_offsets = Vec::with_capacity(b.vertices.len() + 1);
        let mut st_slot = Vec::new();
        let mut st_level = Vec::new();
        let mut st_weight = Vec::new();
        vert_offsets.push(0u32);
        for v in &b.vertices {
            enc.for_each_entry(v.map(|x| x as f64), |l, e, w| {
                let e = e as u32;
                let slot = *entry_slots.entry(e).or_insert_with(|| {
                    entries.push(e);
                    (entries.len() - 1) as u32
                });
                st_slot.push(slot);
                st_level.push(l as u8);
                st_weight.push(w);
            });
            vert_offsets.push(st_slot.len() as u32);
        }
        Ok((
            FieldPlan {
                width: enc.width(),
                features: enc.spec().features,
                vertices: b.vertices,
                vert_offsets,
                st_slot,
                st_level,
                st_weight,
                entries,
                q_vert,
                q_weight,
            },
            extra_ids,
        ))
    }

    pub fn num_queries(&self) -> usize {
        self.q_vert.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[VoxelCoord] {
        &self.vertices
    }

    /// Global table entry ids touched by this plan, in slot order.
    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Vertex feature matrix `(num_vertices, L*F)`.
    pub fn vertex_features(&self, enc: &HashEncoding) -> Array2<f64> {
        let f = self.features;
        let mut out = Array2::zeros((self.vertices.len(), self.width));
        let gathered: Vec<f64> = self
            .entries
            .iter()
            .flat_map(|&e| enc.params[e as usize * f..(e as usize + 1) * f].iter().copied())
            .collect();
        for (vi, mut row) in out.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("contiguous row");
            for s in self.vert_offsets[vi] as usize..self.vert_offsets[vi + 1] as usize {
                let slot = self.st_slot[s] as usize;
                let base = self.st_level[s] as usize * f;
                let w = self.st_weight[s];
                for k in 0..f {
                    row[base + k] += w * gathered[slot * f + k];
                }
            }
        }
        out
    }

    /// Query feature matrix `(num_queries, L*F)` from vertex features.
    pub fn query_features(&self, vf: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.q_vert.len(), self.width));
        let vs = vf.as_slice().expect("contiguous");
        for (qi, mut row) in out.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("contiguous row");
            for c in 0..8 {
                let w = self.q_weight[qi][c];
                if w == 0.0 {
                    continue;
                }
                let v = self.q_vert[qi][c] as usize;
                let src = &vs[v * self.width..(v + 1) * self.width];
                for k in 0..self.width {
                    row[k] += w * src[k];
                }
            }
        }
        out
    }

    /// Accumulates query-feature gradients into vertex-feature gradients.
    pub fn backprop_queries(&self, dq: &Array2<f64>, dv: &mut Array2<f64>) {
        let width = self.width;
        let dvs = dv.as_slice_mut().expect("contiguous");
        for (qi, row) in dq.rows().into_iter().enumerate() {
            for c in 0..8 {
                let w = self.q_weight[qi][c];
                if w == 0.0 {
                    continue;
                }
                let v = self.q_vert[qi][c] as usize;
                let dst = &mut dvs[v * width..(v + 1) * width];
                for k in 0..width {
                    dst[k] += w * row[k];
                }
            }
        }
    }

    /// Table gradient in plan slot order (`entries().len() * F` values).
    pub fn backprop_vertices(&self, dv: &Array2<f64>) -> Vec<f64> {
        let f = self.features;
        let mut g = vec![0.0; self.entries.len() * f];
        for (vi, row) in dv.rows().into_iter().enumerate() {
            for s in self.vert_offsets[vi] as usize..self.vert_offsets[vi + 1] as usize {
                let slot = self.st_slot[s] as usize;
                let base = self.st_level[s] as usize * f;
                let w = self.st_weight[s];
                for k in 0..f {
                    g[slot * f + k] += w * row[base + k];
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::EncodingSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plan_matches_direct_interpolation() {
        let spec = EncodingSpec {
            levels: 3,
            features: 2,
            log2_table_size: 9,
            base_resolution: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut enc = HashEncoding::new(&spec, [8, 8, 6], &mut rng).unwrap();
        enc.params.iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
        let queries: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.gen_range(0.0..8.0), rng.gen_range(0.0..8.0), rng.gen_range(0.0..6.0)))
            .collect();
        let (plan, extra) = FieldPlan::build(&enc, &queries, &[[2, 3, 4]]).unwrap();
        let vf = plan.vertex_features(&enc);
        let qf = plan.query_features(&vf);
        for (i, u) in queries.iter().enumerate() {
            let direct = enc.interpolate(u).unwrap();
            for k in 0..direct.len() {
                assert!((direct[k] - qf[(i, k)]).abs() < 1e-12);
            }
        }
        let v = enc.vertex_feature([2, 3, 4]).unwrap();
        assert_eq!(vf.row(extra[0] as usize).to_vec(), v);
    }

    #[test]
    fn reverse_pass_is_adjoint() {
        // <dq, Q(theta)> is linear in theta, so its table gradient equals the
        // table read back through the plan.
        let spec = EncodingSpec {
            levels: 2,
            features: 2,
            log2_table_size: 6,
            base_resolution: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = HashEncoding::new(&spec, [5, 5, 5], &mut rng).unwrap();
        enc.params.iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
        let queries: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)))
            .collect();
        let (plan, _) = FieldPlan::build(&enc, &queries, &[]).unwrap();
        let dq = Array2::from_shape_fn((20, 4), |_| rng.gen_range(-1.0..1.0));
        let mut dv = Array2::zeros((plan.num_vertices(), 4));
        plan.backprop_queries(&dq, &mut dv);
        let g = plan.backprop_vertices(&dv);
        let objective = |enc: &HashEncoding| -> f64 {
            let qf = plan.query_features(&plan.vertex_features(enc));
            (&qf * &dq).sum()
        };
        for (slot, &e) in plan.entries().iter().enumerate() {
            for k in 0..2 {
                let mut p = enc.clone();
                p.params[e as usize * 2 + k] += 1.0;
                let d = objective(&p) - objective(&enc);
                assert!((d - g[slot * 2 + k]).abs() < 1e-10);
            }
        }
    }
}
