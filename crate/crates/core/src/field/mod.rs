//! Implicit SDF field: per-submap multiresolution hash tables decoded by an
//! MLP shared across submaps.
//!
//! A query point is located in its sparse-grid voxel; the feature vector of
//! each of the voxel's 8 corner vertices is read from the hash tables (with
//! per-level trilinear interpolation), and the 8 vertex features are blended
//! trilinearly before decoding.

mod checkpoint;
mod encoding;
mod mlp;
mod plan;

use ndarray::{Array1, Array2};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoding::{
    corner_offset, corner_weights, hash_index, level_resolutions, trilinear_corners, EncodingSpec, HashEncoding,
};
pub use mlp::{Mlp, MlpCache, MlpGrads};
pub use plan::FieldPlan;

use crate::error::{MapError, Result};
use crate::{Vec3, VoxelCoord};

/// Borrowed encoding plus decoder; the unit every query runs against.
#[derive(Debug, Clone, Copy)]
pub struct FieldView<'a> {
    pub encoding: &'a HashEncoding,
    pub mlp: &'a Mlp,
    pub voxel_size: f64,
}

impl<'a> FieldView<'a> {
    pub fn new(encoding: &'a HashEncoding, mlp: &'a Mlp, voxel_size: f64) -> Result<Self> {
        if mlp.input_width() != encoding.width() {
            return Err(MapError::Shape(format!(
                "MLP input width {} does not match feature width {}",
                mlp.input_width(),
                encoding.width()
            )));
        }
        Ok(FieldView {
            encoding,
            mlp,
            voxel_size,
        })
    }

    fn units(&self, p_local: &Vec3) -> Vec3 {
        p_local / self.voxel_size
    }

    pub fn vertex_feature(&self, v: VoxelCoord) -> Result<Vec<f64>> {
        self.encoding.vertex_feature(v)
    }

    /// Feature vector of a local point (m) by vertex-driven interpolation.
    pub fn interpolate_sample(&self, p_local: &Vec3) -> Result<Vec<f64>> {
        self.encoding.interpolate(&self.units(p_local))
    }

    pub fn predict_sdf(&self, p_local: &Vec3) -> Result<f64> {
        let f = self.interpolate_sample(p_local)?;
        let s = self.mlp.predict(&f);
        if !s.is_finite() {
            return Err(MapError::NonFinite(format!("predicted SDF at {p_local:?}")));
        }
        Ok(s)
    }

    /// Central-difference gradient with step `h` (m) per axis.
    pub fn sdf_spatial_gradient(&self, p_local: &Vec3, h: f64) -> Result<Vec3> {
        let (lo, hi) = self.encoding.domain();
        let s = self.voxel_size;
        for a in 0..3 {
            if p_local[a] - h < lo[a] as f64 * s || p_local[a] + h > hi[a] as f64 * s {
                return Err(MapError::OutOfDomain([p_local.x, p_local.y, p_local.z]));
            }
        }
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut p = *p_local;
            let mut m = *p_local;
            p[a] += h;
            m[a] -= h;
            g[a] = (self.predict_sdf(&p)? - self.predict_sdf(&m)?) / (2.0 * h);
        }
        Ok(g)
    }

    /// Forward-difference gradient `(s(p + h e_a) - s(p)) / h`, the
    /// four-evaluation stencil used by the training loss.
    pub fn sdf_forward_gradient(&self, p_local: &Vec3, h: f64) -> Result<Vec3> {
        let s0 = self.predict_sdf(p_local)?;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut p = *p_local;
            p[a] += h;
            g[a] = (self.predict_sdf(&p)? - s0) / h;
        }
        Ok(g)
    }

    /// Batched forward pass over a compiled plan.
    pub fn forward(&self, plan: &FieldPlan) -> Result<ForwardPass> {
        let vf = plan.vertex_features(self.encoding);
        let qf = plan.query_features(&vf);
        let (sdf, cache) = self.mlp.forward(qf.view())?;
        if sdf.iter().any(|v| !v.is_finite()) {
            return Err(MapError::NonFinite("predicted SDF in batch".into()));
        }
        Ok(ForwardPass { vf, sdf, cache })
    }

    /// Reverse pass: `d_sdf` is the loss gradient per query and `d_vertex`
    /// an optional extra gradient on the plan's vertex features.
    pub fn backward(
        &self,
        plan: &FieldPlan,
        pass: &ForwardPass,
        d_sdf: &Array1<f64>,
        d_vertex: Option<&Array2<f64>>,
    ) -> Result<FieldGrads> {
        let (mlp, dq) = self.mlp.backward(&pass.cache, d_sdf)?;
        let mut dv = match d_vertex {
            Some(d) => {
                if d.dim() != pass.vf.dim() {
                    return Err(MapError::Shape("vertex gradient shape mismatch".into()));
                }
                d.clone()
            }
            None => Array2::zeros(pass.vf.dim()),
        };
        plan.backprop_queries(&dq, &mut dv);
        let table = plan.backprop_vertices(&dv);
        Ok(FieldGrads { mlp, table })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Vertex features `(num_vertices, L*F)`.
    pub vf: Array2<f64>,
    pub sdf: Array1<f64>,
    cache: MlpCache,
}

/// Gradients of one reverse pass. `table` is dense over the plan's touched
/// entries (see [`FieldPlan::entries`]); all other entries have zero gradient.
#[derive(Debug, Clone)]
pub struct FieldGrads {
    pub mlp: MlpGrads,
    pub table: Vec<f64>,
}

/// A standalone field owning its tables and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub encoding: HashEncoding,
    pub mlp: Mlp,
    pub voxel_size: f64,
}

impl FeatureField {
    pub fn new(
        spec: &EncodingSpec,
        dims: VoxelCoord,
        voxel_size: f64,
        hidden: usize,
        layers: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let encoding = HashEncoding::new(spec, dims, rng)?;
        let mlp = Mlp::new(spec.width(), hidden, layers, rng)?;
        Ok(FeatureField {
            encoding,
            mlp,
            voxel_size,
        })
    }

    pub fn view(&self) -> FieldView<'_> {
        FieldView {
            encoding: &self.encoding,
            mlp: &self.mlp,
            voxel_size: self.voxel_size,
        }
    }
}
