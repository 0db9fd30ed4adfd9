//! Reconstruction metrics between predicted and ground-truth surfaces.
//!
//! Distances are nearest-neighbour distances between point sets, reported in
//! centimetres. A point counts toward precision or recall when its distance
//! is strictly below the threshold.

use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::error::{MapError, Result};
use crate::mesher::Mesh;
use crate::spatial::KdTree;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub acc_cm: f64,
    pub comp_cm: f64,
    pub chamfer_l1_cm: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score_pct: f64,
    pub threshold_cm: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "acc_cm,comp_cm,chamfer_l1_cm,precision,recall,f_score_pct,threshold_cm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.acc_cm,
            self.comp_cm,
            self.chamfer_l1_cm,
            self.precision,
            self.recall,
            self.f_score_pct,
            self.threshold_cm
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy      {:>10.3} cm", self.acc_cm)?;
        writeln!(f, "completeness  {:>10.3} cm", self.comp_cm)?;
        writeln!(f, "chamfer-L1    {:>10.3} cm", self.chamfer_l1_cm)?;
        writeln!(f, "precision     {:>10.2} %", self.precision * 100.0)?;
        writeln!(f, "recall        {:>10.2} %", self.recall * 100.0)?;
        write!(f, "F-score@{:<4} {:>10.2} %", format!("{}", self.threshold_cm), self.f_score_pct)
    }
}

/// `n` points drawn uniformly over the mesh surface (area-weighted).
pub fn sample_surface(mesh: &Mesh, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
    if mesh.triangles.is_empty() {
        return Err(MapError::Empty("surface sampling of an empty mesh"));
    }
    mesh.validate()?;
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(MapError::Geometry("mesh has zero surface area".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        let s = rng.gen::<f64>().sqrt();
        let u = rng.gen::<f64>();
        out.push(a * (1.0 - s) + b * (s * (1.0 - u)) + c * (s * u));
    }
    Ok(out)
}

/// Distance from each query point to its nearest neighbour in `target`.
pub fn nn_distances(queries: &[Vec3], target: &KdTree) -> Vec<f64> {
    queries
        .iter()
        .map(|q| target.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect()
}

pub fn compute_metrics(pred: &[Vec3], gt: &[Vec3], threshold_cm: f64) -> Result<MetricReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MapError::Empty("metric point set"));
    }
    if !(threshold_cm > 0.0) {
        return Err(MapError::Config(format!("threshold must be positive, got {threshold_cm}")));
    }
    let d_pred = nn_distances(pred, &KdTree::new(gt));
    let d_gt = nn_distances(gt, &KdTree::new(pred));
    Ok(metrics_from_distances(&d_pred, &d_gt, threshold_cm))
}

/// Metrics from precomputed nearest-neighbour distances (m).
pub fn metrics_from_distances(d_pred: &[f64], d_gt: &[f64], threshold_cm: f64) -> MetricReport {
    let mean_cm = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64 * 100.0;
    let frac = |d: &[f64]| d.iter().filter(|&&x| x * 100.0 < threshold_cm).count() as f64 / d.len() as f64;
    let acc_cm = mean_cm(d_pred);
    let comp_cm = mean_cm(d_gt);
    let precision = frac(d_pred);
    let recall = frac(d_gt);
    let f_score_pct = if precision + recall > 0.0 {
        200.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricReport {
        acc_cm,
        comp_cm,
        chamfer_l1_cm: (acc_cm + comp_cm) / 2.0,
        precision,
        recall,
        f_score_pct,
        threshold_cm,
    }
}

/// Samples both meshes and compares the samples.
pub fn evaluate_meshes(pred: &Mesh, gt: &Mesh, samples: usize, threshold_cm: f64, rng: &mut impl Rng) -> Result<MetricReport> {
    let p = sample_surface(pred, samples, rng)?;
    let g = sample_surface(gt, samples, rng)?;
    compute_metrics(&p, &g, threshold_cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(pred: &[Vec3], gt: &[Vec3], thr: f64) -> MetricReport {
        let nn = |a: &[Vec3], b: &[Vec3]| -> Vec<f64> {
            a.iter()
                .map(|p| b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
                .collect()
        };
        metrics_from_distances(&nn(pred, gt), &nn(gt, pred), thr)
    }

    #[test]
    fn identity_and_single_pair() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::new(0.3, 0.2, 0.1)];
        let r = compute_metrics(&pts, &pts, 20.0).unwrap();
        assert_eq!((r.acc_cm, r.comp_cm, r.chamfer_l1_cm, r.f_score_pct), (0.0, 0.0, 0.0, 100.0));
        let r = compute_metrics(&[Vec3::zeros()], &[Vec3::new(0.1, 0.0, 0.0)], 20.0).unwrap();
        assert!((r.acc_cm - 10.0).abs() < 1e-12 && (r.comp_cm - 10.0).abs() < 1e-12);
        assert!((r.chamfer_l1_cm - 10.0).abs() < 1e-12);
        assert_eq!(r.f_score_pct, 100.0);
        let r = compute_metrics(&[Vec3::zeros()], &[Vec3::new(0.1, 0.0, 0.0)], 5.0).unwrap();
        assert_eq!(r.f_score_pct, 0.0);
        assert!(compute_metrics(&[], &pts, 5.0).is_err());
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = rng.gen_range(1..400);
            let m = rng.gen_range(1..400);
            let a: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let b: Vec<Vec3> = (0..m).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            assert_eq!(compute_metrics(&a, &b, 5.0).unwrap(), brute(&a, &b, 5.0));
        }
    }

    fn tri_mesh(tris: &[[[f32; 3]; 3]]) -> Mesh {
        let mut m = Mesh::default();
        for t in tris {
            let b = m.vertices.len() as u32;
            m.vertices.extend_from_slice(t);
            m.triangles.push([b, b + 1, b + 2]);
        }
        m
    }

    #[test]
    fn samples_lie_on_triangle() {
        let m = tri_mesh(&[[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in sample_surface(&m, 2000, &mut rng).unwrap() {
            assert!(p.z == 0.0 && p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12);
        }
        assert!(sample_surface(&Mesh::default(), 5, &mut rng).is_err());
    }

    #[test]
    fn area_weighting() {
        // Areas 1 : 3, plus a degenerate triangle.
        let m = tri_mesh(&[
            [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            [[0.0, 0.0, 5.0], [3.0, 0.0, 5.0], [0.0, 2.0, 5.0]],
            [[0.0, 0.0, 9.0], [1.0, 0.0, 9.0], [2.0, 0.0, 9.0]],
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let pts = sample_surface(&m, n, &mut rng).unwrap();
        let first = pts.iter().filter(|p| p.z == 0.0).count() as f64;
        assert_eq!(pts.iter().filter(|p| p.z == 9.0).count(), 0);
        let p = 0.25;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((first - n as f64 * p).abs() < 3.0 * sigma, "{first}");
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(
            a in proptest::collection::vec(proptest::array::uniform3(0.0f64..1.0), 1..40),
            b in proptest::collection::vec(proptest::array::uniform3(0.0f64..1.0), 1..40),
            t1 in 1.0f64..50.0, t2 in 1.0f64..50.0,
        ) {
            let a: Vec<Vec3> = a.into_iter().map(Vec3::from).collect();
            let b: Vec<Vec3> = b.into_iter().map(Vec3::from).collect();
            let ab = compute_metrics(&a, &b, t1).unwrap();
            let ba = compute_metrics(&b, &a, t1).unwrap();
            prop_assert_eq!(ab.acc_cm, ba.comp_cm);
            prop_assert_eq!(ab.chamfer_l1_cm, ba.chamfer_l1_cm);
            prop_assert!((ab.f_score_pct - ba.f_score_pct).abs() < 1e-12);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(compute_metrics(&a, &b, lo).unwrap().f_score_pct <= compute_metrics(&a, &b, hi).unwrap().f_score_pct + 1e-12);
        }
    }
}
