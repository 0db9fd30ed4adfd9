//! Marching-cubes surface extraction, overlap ownership and mesh merging.
//!
//! Extraction runs over the active voxels of a submap dilated by one voxel,
//! optionally subdividing every voxel `k` times per axis. Vertices on shared
//! cell edges are created once, so closed surfaces come out watertight.

mod tables;

use ndarray::Axis;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::config::Config;
use crate::error::{MapError, Result};
use crate::field::{FieldPlan, Mlp};
use crate::sparse_grid::SparseGrid;
use crate::submap::{Submap, SubmapBox};
use crate::{Vec3, VoxelCoord};

pub use tables::{EDGE_TABLE, TRIANGLE_TABLE};

/// Cell corner offsets in table order.
pub const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cell edges as corner pairs in table order.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Lattice points evaluated per field batch.
const EVAL_CHUNK: usize = 16_384;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.vertices.iter().find(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(MapError::NonFinite(format!("mesh vertex {v:?}")));
        }
        let n = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(MapError::Geometry(format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    pub fn vertex(&self, i: u32) -> Vec3 {
        let v = self.vertices[i as usize];
        Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertex(i))
    }

    /// Unnormalised normal `(b - a) x (c - a)`.
    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.triangle_normal(t).norm()
    }
}

/// Incremental marching cubes over an integer lattice with edge-keyed
/// vertex sharing. Lattice coordinates are mapped to the output frame by
/// `to_world` after dividing by `scale`.
struct LatticeMesher<W: Fn(&Vec3) -> Vec3> {
    to_world: W,
    scale: f64,
    edge_vertex: FxHashMap<(VoxelCoord, u8), u32>,
    mesh: Mesh,
}

impl<W: Fn(&Vec3) -> Vec3> LatticeMesher<W> {
    fn new(to_world: W, scale: f64) -> Self {
        LatticeMesher {
            to_world,
            scale,
            edge_vertex: FxHashMap::default(),
            mesh: Mesh::default(),
        }
    }

    fn edge_point(&mut self, base: VoxelCoord, edge: usize, vals: &[f64; 8]) -> u32 {
        let [a, b] = EDGES[edge];
        let (mut pa, mut pb) = (CORNERS[a], CORNERS[b]);
        let (mut va, mut vb) = (vals[a], vals[b]);
        if pa > pb {
            std::mem::swap(&mut pa, &mut pb);
            std::mem::swap(&mut va, &mut vb);
        }
        let lower = [base[0] + pa[0], base[1] + pa[1], base[2] + pa[2]];
        let axis = (0..3).find(|&k| pa[k] != pb[k]).expect("edge spans one axis") as u8;
        let next = self.mesh.vertices.len() as u32;
        if let Some(&id) = self.edge_vertex.get(&(lower, axis)) {
            return id;
        }
        let t = va / (va - vb);
        let mut u = Vec3::new(lower[0] as f64, lower[1] as f64, lower[2] as f64);
        u[axis as usize] += t;
        let w = (self.to_world)(&(u / self.scale));
        self.mesh.vertices.push([w.x as f32, w.y as f32, w.z as f32]);
        self.edge_vertex.insert((lower, axis), next);
        next
    }

    fn cell(&mut self, base: VoxelCoord, vals: &[f64; 8]) -> Result<()> {
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(MapError::NonFinite(format!("SDF value at lattice cell {base:?}")));
        }
        let mut case = 0usize;
        for (c, &v) in vals.iter().enumerate() {
            if v < 0.0 {
                case |= 1 << c;
            }
        }
        if EDGE_TABLE[case] == 0 {
            return Ok(());
        }
        for tri in TRIANGLE_TABLE[case].chunks(3) {
            if tri[0] < 0 {
                break;
            }
            let a = self.edge_point(base, tri[0] as usize, vals);
            let b = self.edge_point(base, tri[1] as usize, vals);
            let c = self.edge_point(base, tri[2] as usize, vals);
            // The table winds counter-clockwise seen from inside; reverse so
            // normals face increasing SDF.
            self.mesh.triangles.push([a, c, b]);
        }
        Ok(())
    }

    fn finish(self) -> Mesh {
        self.mesh
    }
}

/// Active voxels and their 26-neighbours that lie inside the grid bounds,
/// in lexicographic order.
pub fn dilated_cells(grid: &SparseGrid) -> Vec<VoxelCoord> {
    let mut set = FxHashSet::default();
    for v in grid.active_sorted() {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let n = [v[0] + dx, v[1] + dy, v[2] + dz];
                    if grid.in_bounds(n) {
                        set.insert(n);
                    }
                }
            }
        }
    }
    let mut cells: Vec<VoxelCoord> = set.into_iter().collect();
    cells.sort_unstable();
    cells
}

/// Marching cubes over `cells` (voxel coordinates), each split into
/// `subdiv^3` sub-cells. `sdf` receives fine lattice points (voxel units
/// times `subdiv`) and returns one value per point; `to_world` maps voxel
/// units to output coordinates.
pub fn extract_cells(
    cells: &[VoxelCoord],
    subdiv: usize,
    to_world: impl Fn(&Vec3) -> Vec3,
    mut sdf: impl FnMut(&[VoxelCoord]) -> Result<Vec<f64>>,
) -> Result<Mesh> {
    if subdiv == 0 {
        return Err(MapError::Config("mesh subdivision must be positive".into()));
    }
    let k = subdiv as i64;
    let mut index: FxHashMap<VoxelCoord, u32> = FxHashMap::default();
    let mut points = Vec::new();
    for v in cells {
        for i in 0..=k {
            for j in 0..=k {
                for l in 0..=k {
                    let p = [v[0] * k + i, v[1] * k + j, v[2] * k + l];
                    index.entry(p).or_insert_with(|| {
                        points.push(p);
                        (points.len() - 1) as u32
                    });
                }
            }
        }
    }
    let mut values = Vec::with_capacity(points.len());
    for chunk in points.chunks(EVAL_CHUNK) {
        let vals = sdf(chunk)?;
        if vals.len() != chunk.len() {
            return Err(MapError::Shape("SDF callback returned the wrong number of values".into()));
        }
        values.extend(vals);
    }
    let mut mesher = LatticeMesher::new(to_world, k as f64);
    for v in cells {
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    let base = [v[0] * k + i, v[1] * k + j, v[2] * k + l];
                    let vals = CORNERS.map(|o| values[index[&[base[0] + o[0], base[1] + o[1], base[2] + o[2]]] as usize]);
                    mesher.cell(base, &vals)?;
                }
            }
        }
    }
    Ok(mesher.finish())
}

/// Which of two consecutive submaps owns each voxel of the older one: the
/// newer submap owns every voxel inside its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ownership {
    pub prev_id: usize,
    pub next_id: usize,
    /// `v_next = v_prev - offset`.
    pub offset: VoxelCoord,
    pub next_dims: VoxelCoord,
}

impl Ownership {
    pub fn between(prev: &SubmapBox, next: &SubmapBox, prev_id: usize, next_id: usize) -> Result<Self> {
        Ok(Ownership {
            prev_id,
            next_id,
            offset: prev.offset_to(next)?,
            next_dims: next.dims(),
        })
    }

    pub fn prev_owns(&self, v_prev: VoxelCoord) -> bool {
        !(0..3).all(|a| {
            let n = v_prev[a] - self.offset[a];
            n >= 0 && n < self.next_dims[a]
        })
    }

    /// Owner id of a voxel given in the older submap's lattice.
    pub fn owner(&self, v_prev: VoxelCoord) -> usize {
        if self.prev_owns(v_prev) {
            self.prev_id
        } else {
            self.next_id
        }
    }
}

pub fn assign_ownership(prev: &Submap, next: &Submap) -> Result<Ownership> {
    Ownership::between(&prev.bbox, &next.bbox, prev.id, next.id)
}

/// Decoded SDF at fine lattice points of a submap field.
pub fn field_sdf(submap: &Submap, mlp: &Mlp, subdiv: usize, points: &[VoxelCoord]) -> Result<Vec<f64>> {
    let enc = &submap.encoding;
    let features = if subdiv == 1 {
        let (plan, ids) = FieldPlan::build(enc, &[], points)?;
        let vf = plan.vertex_features(enc);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        vf.select(Axis(0), &idx)
    } else {
        let k = subdiv as f64;
        let units: Vec<Vec3> = points
            .iter()
            .map(|p| Vec3::new(p[0] as f64 / k, p[1] as f64 / k, p[2] as f64 / k))
            .collect();
        let (plan, _) = FieldPlan::build(enc, &units, &[])?;
        plan.query_features(&plan.vertex_features(enc))
    };
    let (sdf, _) = mlp.forward(features.view())?;
    if let Some(i) = sdf.iter().position(|s| !s.is_finite()) {
        return Err(MapError::NonFinite(format!("decoded SDF at lattice point {:?}", points[i])));
    }
    Ok(sdf.to_vec())
}

/// World-frame mesh of a submap's field. Cells owned by a newer submap
/// (per `ownership`) are skipped.
pub fn extract_mesh(submap: &Submap, mlp: &Mlp, config: &Config, ownership: Option<&Ownership>) -> Result<Mesh> {
    if submap.grid.num_active() == 0 {
        return Ok(Mesh::default());
    }
    let mut cells = dilated_cells(&submap.grid);
    if let Some(own) = ownership {
        cells.retain(|&v| own.prev_owns(v));
    }
    let k = config.mesh_subdivision();
    let bbox = submap.bbox;
    extract_cells(&cells, k, |u| bbox.local_units_to_world(u), |pts| field_sdf(submap, mlp, k, pts))
}

/// Marching cubes over a dense lattice of `counts` points per axis starting
/// at `origin` with spacing `step`, evaluated one z-slab at a time.
pub fn dense_marching_cubes(origin: &Vec3, step: f64, counts: [usize; 3], sdf: impl Fn(&Vec3) -> f64) -> Result<Mesh> {
    if counts.iter().any(|&c| c < 2) || !(step > 0.0) {
        return Err(MapError::Geometry("dense lattice needs two points per axis and a positive step".into()));
    }
    let [nx, ny, nz] = counts;
    let o = *origin;
    let at = |i: usize, j: usize, k: usize| o + Vec3::new(i as f64, j as f64, k as f64) * step;
    let slab = |k: usize| -> Vec<f64> {
        let mut s = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                s.push(sdf(&at(i, j, k)));
            }
        }
        s
    };
    let mut mesher = LatticeMesher::new(|u: &Vec3| o + u * step, 1.0);
    let mut lower = slab(0);
    for k in 0..nz - 1 {
        let upper = slab(k + 1);
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let vals = CORNERS.map(|c| {
                    let s = if c[2] == 0 { &lower } else { &upper };
                    s[(j + c[1] as usize) * nx + i + c[0] as usize]
                });
                mesher.cell([i as i64, j as i64, k as i64], &vals)?;
            }
        }
        lower = upper;
        // Edges below the current slab can no longer be shared.
        let floor = k as i64;
        mesher.edge_vertex.retain(|(p, _), _| p[2] >= floor);
    }
    Ok(mesher.finish())
}

/// Concatenates meshes with index offsetting. With `dedup_tol`, vertices
/// closer than the tolerance are welded and collapsed triangles dropped.
pub fn merge_meshes(meshes: &[Mesh], dedup_tol: Option<f64>) -> Mesh {
    let mut out = Mesh::default();
    for m in meshes {
        let base = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&m.vertices);
        out.triangles.extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
    }
    match dedup_tol {
        Some(tol) if tol > 0.0 => weld(out, tol),
        _ => out,
    }
}

fn weld(mesh: Mesh, tol: f64) -> Mesh {
    let key = |v: &[f32; 3]| v.map(|x| (x as f64 / tol).floor() as i64);
    let mut buckets: FxHashMap<[i64; 3], Vec<u32>> = FxHashMap::default();
    let mut remap = Vec::with_capacity(mesh.vertices.len());
    let mut vertices: Vec<[f32; 3]> = Vec::new();
    for v in &mesh.vertices {
        let k = key(v);
        let p = Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &id in ids {
                            let q = vertices[id as usize];
                            let q = Vec3::new(q[0] as f64, q[1] as f64, q[2] as f64);
                            if (p - q).norm() <= tol {
                                found = Some(id);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        let id = found.unwrap_or_else(|| {
            vertices.push(*v);
            let id = (vertices.len() - 1) as u32;
            buckets.entry(k).or_default().push(id);
            id
        });
        remap.push(id);
    }
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| t.map(|i| remap[i as usize]))
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    Mesh { vertices, triangles }
}
