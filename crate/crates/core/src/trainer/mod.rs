//! Online optimisation of submap feature tables and the shared decoder.
//!
//! Each iteration draws a fresh ray batch, compiles a [`FieldPlan`] over the
//! samples and their three forward-difference neighbours, evaluates
//! `lambda_bce * L_bce + lambda_eik * L_eik (+ lambda_align * L_align)` and
//! applies one Adam step to the decoder and to the touched table entries.

mod adam;
mod loss;

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;

pub use adam::Adam;
pub use loss::{align_l1, bce, bce_loss, eikonal, eikonal_loss, occupancy, target_entropy, LOG_CLAMP};

use crate::config::Config;
use crate::error::{MapError, Result};
use crate::field::{corner_offset, FieldPlan, FieldView, ForwardPass, HashEncoding, Mlp, MlpGrads};
use crate::sampler::{build_batch_from, RaySource, SampleBatch};
use crate::sparse_grid::OverlapSet;
use crate::submap::Submap;
use crate::{Vec3, VoxelCoord};

/// Loss values of one iteration, measured before its update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub iteration: usize,
    pub l_bce: f64,
    pub l_eik: f64,
    pub l_align: f64,
    pub l_total: f64,
    /// Wall time of the iteration; zero when not measured.
    pub wall_ms: f64,
}

/// Frozen teacher features on the overlap lattice vertices, deduplicated.
/// `multiplicity[i]` counts the (voxel, corner) pairs sharing vertex `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignTarget {
    pub vertices: Vec<VoxelCoord>,
    pub multiplicity: Vec<f64>,
    pub teacher: Vec<f64>,
    pub width: usize,
}

impl AlignTarget {
    pub fn build(prev: &HashEncoding, overlap: &OverlapSet) -> Result<Self> {
        let mut counts: rustc_hash::FxHashMap<VoxelCoord, u32> = Default::default();
        for v in &overlap.voxels {
            for c in 0..8 {
                let o = corner_offset(c);
                *counts.entry([v[0] + o[0], v[1] + o[1], v[2] + o[2]]).or_default() += 1;
            }
        }
        let mut vertices: Vec<VoxelCoord> = counts.keys().copied().collect();
        vertices.sort_unstable();
        let multiplicity = vertices.iter().map(|v| counts[v] as f64).collect();
        let prev_vertices: Vec<VoxelCoord> = vertices.iter().map(|&v| overlap.to_prev(v)).collect();
        let (plan, ids) = FieldPlan::build(prev, &[], &prev_vertices)?;
        let vf = plan.vertex_features(prev);
        let width = prev.width();
        let mut teacher = Vec::with_capacity(vertices.len() * width);
        for &id in &ids {
            teacher.extend(vf.row(id as usize).iter().copied());
        }
        Ok(AlignTarget {
            vertices,
            multiplicity,
            teacher,
            width,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Raw L1 distance of `next`'s vertex features to the teacher.
    pub fn loss(&self, next: &HashEncoding) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let (plan, ids) = FieldPlan::build(next, &[], &self.vertices)?;
        let vf = plan.vertex_features(next);
        let student = gather_rows(&vf, &ids);
        align_l1(&student, &self.teacher, self.width, &self.multiplicity).map(|(l, _)| l)
    }
}

fn gather_rows(vf: &Array2<f64>, ids: &[u32]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * vf.ncols());
    for &id in ids {
        out.extend(vf.row(id as usize).iter().copied());
    }
    out
}

/// Sum over overlap voxels and their 8 corners of the L1 distance between the
/// previous submap's vertex features and the next submap's.
pub fn align_loss(overlap: &OverlapSet, prev: &HashEncoding, next: &HashEncoding) -> Result<f64> {
    AlignTarget::build(prev, overlap)?.loss(next)
}

/// Points evaluated per sample: the sample and its `+x, +y, +z` neighbours.
const STENCIL: usize = 4;

/// Forward-difference stencil around a sample, in voxel units.
fn stencil(p_local: &Vec3, s_v: f64, h: f64) -> [Vec3; STENCIL] {
    let u = p_local / s_v;
    let mut out = [u; STENCIL];
    for a in 0..3 {
        out[1 + a][a] += h / s_v;
    }
    out
}

struct Prepared {
    plan: FieldPlan,
    pass: ForwardPass,
    d_sdf: Array1<f64>,
    d_vertex: Option<Array2<f64>>,
}

/// Owns the shared decoder and its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub mlp: Mlp,
    mlp_opt: Adam,
    config: Config,
}

impl Trainer {
    pub fn new(mlp: Mlp, config: &Config) -> Result<Self> {
        config.validate()?;
        if mlp.input_width() != config.encoding_spec().width() {
            return Err(MapError::Shape("decoder input does not match the encoding width".into()));
        }
        let mlp_opt = Adam::new(
            mlp.num_params(),
            config.lr_mlp,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        Ok(Trainer {
            mlp,
            mlp_opt,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Fresh optimizer state for a submap's feature table.
    pub fn table_optimizer(&self, encoding: &HashEncoding) -> Adam {
        Adam::new(
            encoding.params.len(),
            self.config.lr_features,
            self.config.adam_beta1,
            self.config.adam_beta2,
            self.config.adam_eps,
        )
    }

    /// Loss values of `batch` without updating anything.
    pub fn evaluate(
        &self,
        encoding: &HashEncoding,
        batch: &SampleBatch,
        align: Option<&AlignTarget>,
    ) -> Result<LossReport> {
        self.forward_losses(encoding, batch, align, 0).map(|(r, _)| r)
    }

    /// Loss and its gradient without updating anything. The table gradient is
    /// dense over `encoding.params`.
    pub fn gradients(
        &self,
        encoding: &HashEncoding,
        batch: &SampleBatch,
        align: Option<&AlignTarget>,
    ) -> Result<(LossReport, Vec<f64>, MlpGrads)> {
        let (report, prep) = self.forward_losses(encoding, batch, align, 0)?;
        let view = FieldView::new(encoding, &self.mlp, self.config.voxel_size)?;
        let grads = view.backward(&prep.plan, &prep.pass, &prep.d_sdf, prep.d_vertex.as_ref())?;
        let f = prep.plan.features();
        let mut table = vec![0.0; encoding.params.len()];
        for (k, &e) in prep.plan.entries().iter().enumerate() {
            let e = e as usize * f;
            table[e..e + f].copy_from_slice(&grads.table[k * f..(k + 1) * f]);
        }
        Ok((report, table, grads.mlp))
    }

    /// One optimisation step on `batch`. Returns losses before the update.
    pub fn step(
        &mut self,
        encoding: &mut HashEncoding,
        table_opt: &mut Adam,
        batch: &SampleBatch,
        align: Option<&AlignTarget>,
        iteration: usize,
    ) -> Result<LossReport> {
        let (report, prep) = self.forward_losses(encoding, batch, align, iteration)?;
        let view = FieldView::new(encoding, &self.mlp, self.config.voxel_size)?;
        let grads = view.backward(&prep.plan, &prep.pass, &prep.d_sdf, prep.d_vertex.as_ref())?;
        if grads.table.iter().any(|g| !g.is_finite()) {
            return Err(MapError::NonFinite(format!("feature gradient at iteration {iteration}")));
        }
        let mlp_grads = grads.mlp.slices();
        if mlp_grads.iter().any(|s| s.iter().any(|g| !g.is_finite())) {
            return Err(MapError::NonFinite(format!("decoder gradient at iteration {iteration}")));
        }
        self.mlp_opt.step_slices(&mut self.mlp.param_slices_mut(), &mlp_grads);
        table_opt.step_rows(&mut encoding.params, prep.plan.entries(), prep.plan.features(), &grads.table);
        Ok(report)
    }

    fn forward_losses(
        &self,
        encoding: &HashEncoding,
        batch: &SampleBatch,
        align: Option<&AlignTarget>,
        iteration: usize,
    ) -> Result<(LossReport, Prepared)> {
        let cfg = &self.config;
        let s_v = cfg.voxel_size;
        let h = cfg.gradient_step();
        let n = batch.len();
        if n == 0 {
            return Err(MapError::Empty("training batch"));
        }
        let mut queries = Vec::with_capacity(STENCIL * n);
        for s in &batch.samples {
            queries.extend_from_slice(&stencil(&s.position, s_v, h));
        }
        let extra: &[VoxelCoord] = align.map_or(&[], |a| &a.vertices);
        let (plan, extra_ids) = FieldPlan::build(encoding, &queries, extra)?;
        let view = FieldView::new(encoding, &self.mlp, s_v)?;
        let pass = view.forward(&plan)?;

        let mut d_sdf = Array1::zeros(STENCIL * n);
        let gt: Vec<f64> = batch.samples.iter().map(|s| s.gt_sdf).collect();
        let pred: Vec<f64> = (0..n).map(|i| pass.sdf[STENCIL * i]).collect();
        let (l_bce, g_bce) = bce(&gt, &pred, cfg.temperature)?;
        for i in 0..n {
            d_sdf[STENCIL * i] += cfg.lambda_bce * g_bce[i];
        }

        let grads: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let c = STENCIL * i;
                std::array::from_fn(|a| (pass.sdf[c + 1 + a] - pass.sdf[c]) / h)
            })
            .collect();
        let (l_eik, g_eik) = eikonal(&grads)?;
        for i in 0..n {
            let c = STENCIL * i;
            for a in 0..3 {
                let g = cfg.lambda_eik * g_eik[i][a] / h;
                d_sdf[c + 1 + a] += g;
                d_sdf[c] -= g;
            }
        }

        let mut l_align = 0.0;
        let mut d_vertex = None;
        if let Some(target) = align.filter(|t| !t.is_empty()) {
            let student = gather_rows(&pass.vf, &extra_ids);
            let (l, g) = align_l1(&student, &target.teacher, target.width, &target.multiplicity)?;
            l_align = l;
            let mut dv = Array2::zeros(pass.vf.dim());
            for (r, &id) in extra_ids.iter().enumerate() {
                for k in 0..target.width {
                    dv[(id as usize, k)] += cfg.lambda_align * g[r * target.width + k];
                }
            }
            d_vertex = Some(dv);
        }

        let l_total = cfg.lambda_bce * l_bce + cfg.lambda_eik * l_eik + cfg.lambda_align * l_align;
        if !l_total.is_finite() {
            return Err(MapError::NonFinite(format!(
                "loss at iteration {iteration}: bce {l_bce}, eikonal {l_eik}, align {l_align}"
            )));
        }
        let report = LossReport {
            iteration,
            l_bce,
            l_eik,
            l_align,
            l_total,
            wall_ms: 0.0,
        };
        Ok((
            report,
            Prepared {
                plan,
                pass,
                d_sdf,
                d_vertex,
            },
        ))
    }

    fn iterate(
        &mut self,
        submap: &mut Submap,
        table_opt: &mut Adam,
        sources: &[RaySource<'_>],
        align: Option<&AlignTarget>,
        iters: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<LossReport>> {
        let margin = self.config.gradient_step();
        let mut reports = Vec::with_capacity(iters);
        for it in 0..iters {
            let start = Instant::now();
            let batch = build_batch_from(sources, &submap.grid, &self.config, margin, rng)?;
            let mut r = self.step(&mut submap.encoding, table_opt, &batch, align, it)?;
            r.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            reports.push(r);
        }
        Ok(reports)
    }

    /// `iters_per_frame` steps on the current frame's static rays.
    pub fn train_frame(
        &mut self,
        submap: &mut Submap,
        table_opt: &mut Adam,
        origin_local: &Vec3,
        static_local: &[Vec3],
        rng: &mut impl Rng,
    ) -> Result<Vec<LossReport>> {
        let sources = [RaySource {
            origin: *origin_local,
            endpoints: static_local,
        }];
        let iters = self.config.iters_per_frame;
        self.iterate(submap, table_opt, &sources, None, iters, rng)
    }

    /// `overlap_iters` steps on the new submap with the alignment term
    /// pulling its overlap features toward the frozen previous submap.
    pub fn train_overlap(
        &mut self,
        next: &mut Submap,
        table_opt: &mut Adam,
        target: &AlignTarget,
        origin_local: &Vec3,
        static_local: &[Vec3],
        rng: &mut impl Rng,
    ) -> Result<Vec<LossReport>> {
        let sources = [RaySource {
            origin: *origin_local,
            endpoints: static_local,
        }];
        let iters = self.config.overlap_iters;
        self.iterate(next, table_opt, &sources, Some(target), iters, rng)
    }

    /// `replay_iters` steps over batches drawn from all of the submap's
    /// key-scans, which are released afterwards. Does nothing when the
    /// submap holds no key-scans.
    pub fn replay_submap(
        &mut self,
        submap: &mut Submap,
        table_opt: &mut Adam,
        rng: &mut impl Rng,
    ) -> Result<Vec<LossReport>> {
        if submap.keyscans.is_empty() {
            return Ok(Vec::new());
        }
        let keyscans = std::mem::take(&mut submap.keyscans);
        let sources: Vec<RaySource<'_>> = keyscans
            .iter()
            .map(|k| RaySource {
                origin: k.origin_local,
                endpoints: &k.points_local,
            })
            .collect();
        let iters = self.config.replay_iters;
        self.iterate(submap, table_opt, &sources, None, iters, rng)
    }
}
