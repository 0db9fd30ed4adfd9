//! Static/dynamic point labelling by free-space carving and seed growing.
//!
//! Every ray of a frame marks the voxels it crosses well before its endpoint
//! as observed-free. In later frames, a point landing in observed-free space
//! seeds a dynamic region, which then grows over nearby scan points.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{MapError, Result};
use crate::sparse_grid::{voxel_of, SparseGrid};
use crate::spatial::KdTree;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointLabel {
    Static,
    Dynamic,
}

/// Smallest incidence cosine used when widening the carving margin.
const MIN_INCIDENCE: f64 = 0.1;
const NORMAL_NEIGHBOURS: usize = 10;
const NORMAL_RADIUS: f64 = 1.0;

/// Per-ray carving margins `T_r / max(|u . n|, 0.1)` from local PCA normals.
///
/// Points whose neighbourhood is a line get the widest margin (the surface
/// orientation is unknown, so grazing is assumed). Points with fewer than two
/// neighbours keep the plain margin `T_r`.
pub fn incidence_margins(origin: &Vec3, endpoints: &[Vec3], truncation: f64) -> Vec<f64> {
    let tree = KdTree::new(endpoints);
    endpoints
        .iter()
        .map(|p| {
            let nb: Vec<Vec3> = tree
                .knn(p, NORMAL_NEIGHBOURS)
                .into_iter()
                .filter(|&(_, d2)| d2 <= NORMAL_RADIUS * NORMAL_RADIUS)
                .map(|(i, _)| *tree.point(i))
                .collect();
            if nb.len() < 3 {
                return truncation;
            }
            let mean = nb.iter().fold(Vec3::zeros(), |a, q| a + q) / nb.len() as f64;
            let cov = nb.iter().fold(Matrix3::zeros(), |a, q| {
                let d = q - mean;
                a + d * d.transpose()
            });
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
            if l_max <= 0.0 || l_mid < 0.05 * l_max {
                return truncation / MIN_INCIDENCE;
            }
            let n = eig.eigenvectors.column(order[0]).into_owned();
            let u = (p - origin).normalize();
            truncation / u.dot(&n).abs().max(MIN_INCIDENCE)
        })
        .collect()
}

/// Marks voxels crossed by each ray with entry parameter `t < d_i - margin_i`
/// as free. Active voxels are never marked. `margins` defaults to `T_r` for
/// every ray. Returns the number of free marks recorded.
pub fn carve_free_space(
    grid: &mut SparseGrid,
    origin_local: &Vec3,
    endpoints_local: &[Vec3],
    truncation: f64,
    margins: Option<&[f64]>,
) -> Result<usize> {
    if let Some(m) = margins {
        if m.len() != endpoints_local.len() {
            return Err(MapError::Shape("one carving margin per endpoint required".into()));
        }
    }
    let mut visited = Vec::new();
    let mut marks = 0;
    for (i, e) in endpoints_local.iter().enumerate() {
        let d = (e - origin_local).norm();
        let margin = margins.map_or(truncation, |m| m[i]);
        let reach = d - margin;
        if !(reach > 0.0) {
            continue;
        }
        let dir = (e - origin_local) / d;
        visited.clear();
        grid.walk_ray(origin_local, &dir, reach, |v, _| visited.push(v))?;
        for &v in &visited {
            if !grid.is_active(v) {
                grid.mark_free(v);
                marks += 1;
            }
        }
    }
    Ok(marks)
}

fn is_seed(grid: &SparseGrid, p: &Vec3, min_hits: u32, support: bool) -> bool {
    let v = voxel_of(p, grid.voxel_size());
    if grid.free_hits(v) < min_hits {
        return false;
    }
    if support {
        for a in 0..3 {
            for s in [-1, 1] {
                let mut n = v;
                n[a] += s;
                if grid.free_hits(n) < min_hits {
                    return false;
                }
            }
        }
    }
    true
}

/// Labels points dynamic when they land in observed-free space, then grows
/// the dynamic set over scan points within one voxel diagonal until no label
/// changes. Growth never enters a point whose voxel is active.
pub fn classify_points(
    grid: &SparseGrid,
    points_local: &[Vec3],
    min_free_hits: u32,
    require_support: bool,
) -> Vec<PointLabel> {
    let mut labels = vec![PointLabel::Static; points_local.len()];
    let mut frontier: Vec<usize> = (0..points_local.len())
        .filter(|&i| is_seed(grid, &points_local[i], min_free_hits, require_support))
        .collect();
    if frontier.is_empty() {
        return labels;
    }
    for &i in &frontier {
        labels[i] = PointLabel::Dynamic;
    }
    let s = grid.voxel_size();
    let radius = 3f64.sqrt() * s;
    let tree = KdTree::new(points_local);
    while let Some(i) = frontier.pop() {
        for j in tree.within(&points_local[i], radius) {
            if labels[j] == PointLabel::Static && !grid.is_active(voxel_of(&points_local[j], s)) {
                labels[j] = PointLabel::Dynamic;
                frontier.push(j);
            }
        }
    }
    labels
}

pub fn filter_static(points: &[Vec3], labels: &[PointLabel]) -> Result<Vec<Vec3>> {
    if points.len() != labels.len() {
        return Err(MapError::Shape(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    Ok(points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == PointLabel::Static)
        .map(|(p, _)| *p)
        .collect())
}
