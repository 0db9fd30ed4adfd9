//! Run configuration, stored on disk as a flat `key = value` text file.
//!
//! Every key matches a field name of [`Config`]. Unknown keys are rejected so
//! that a typo never silently falls back to a default.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};

/// How the raw center of a new submap is derived from the triggering scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterMode {
    /// Componentwise mean of the world-frame scan points.
    Centroid,
    /// World-frame sensor position.
    Sensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Edge length of one sparse-grid voxel (m).
    pub voxel_size: f64,
    /// Truncation half-width of the narrow band (m).
    pub truncation: f64,
    /// Submap box size per axis (m); integer multiple of `voxel_size`.
    pub submap_extent: [f64; 3],
    /// A new submap is created when the entry rate drops strictly below this.
    pub entry_threshold: f64,
    /// Minimum sensor displacement between key-scans (m).
    pub keyscan_distance: f64,
    pub hash_levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    /// Resolution (cells per axis across the largest submap side) of the coarsest level.
    pub base_resolution: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub iters_per_frame: usize,
    pub overlap_iters: usize,
    pub replay_iters: usize,
    pub lambda_bce: f64,
    pub lambda_eik: f64,
    pub lambda_align: f64,
    /// Sigmoid temperature mapping signed distance to occupancy (m).
    pub temperature: f64,
    pub samples_per_ray: usize,
    pub rays_per_batch: usize,
    pub rng_seed: u64,
    pub lr_features: f64,
    pub lr_mlp: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Number of free-space observations needed before a voxel seeds dynamic points.
    pub min_free_hits: u32,
    /// Scale the carving margin by the incidence angle of each ray on the local surface.
    pub carve_incidence: bool,
    /// Require the six face neighbours of a seed voxel to be free as well.
    pub seed_support: bool,
    pub dynamic_removal: bool,
    pub alignment: bool,
    pub keyscan: bool,
    pub center_mode: CenterMode,
    /// Marching-cubes cell size (m); must divide `voxel_size` evenly.
    pub mesh_resolution: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            voxel_size: 0.2,
            truncation: 0.25,
            submap_extent: [40.0, 40.0, 12.0],
            entry_threshold: 0.75,
            keyscan_distance: 2.0,
            hash_levels: 16,
            features_per_level: 2,
            log2_table_size: 19,
            base_resolution: 16,
            mlp_hidden: 256,
            mlp_layers: 2,
            iters_per_frame: 5,
            overlap_iters: 30,
            replay_iters: 100,
            lambda_bce: 1.0,
            lambda_eik: 0.1,
            lambda_align: 1.0,
            temperature: 0.0625,
            samples_per_ray: 2,
            rays_per_batch: 1024,
            rng_seed: 42,
            lr_features: 1e-2,
            lr_mlp: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-15,
            min_free_hits: 1,
            carve_incidence: false,
            seed_support: false,
            dynamic_removal: true,
            alignment: true,
            keyscan: true,
            center_mode: CenterMode::Centroid,
            mesh_resolution: 0.2,
        }
    }
}

fn parse_f64(key: &str, v: &str, line: usize) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|e| MapError::parse("config", format!("line {line}"), format!("{key}: {e}")))
}

fn parse_usize(key: &str, v: &str, line: usize) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|e| MapError::parse("config", format!("line {line}"), format!("{key}: {e}")))
}

fn parse_bool(key: &str, v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(MapError::parse(
            "config",
            format!("line {line}"),
            format!("{key}: expected a boolean, got {v:?}"),
        )),
    }
}

impl Config {
    /// Half-width of the central-difference stencil used for spatial gradients.
    pub fn gradient_step(&self) -> f64 {
        self.voxel_size / 4.0
    }

    /// Submap box size in voxels per axis.
    pub fn extent_voxels(&self) -> [i64; 3] {
        self.submap_extent
            .map(|l| (l / self.voxel_size).round() as i64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MapError::Config(m));
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return bad(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        if !(self.truncation >= self.voxel_size) {
            return bad(format!(
                "truncation ({}) must be at least voxel_size ({})",
                self.truncation, self.voxel_size
            ));
        }
        if !(self.entry_threshold > 0.0 && self.entry_threshold <= 1.0) {
            return bad(format!("entry_threshold must lie in (0, 1], got {}", self.entry_threshold));
        }
        for (name, v) in [
            ("lambda_bce", self.lambda_bce),
            ("lambda_eik", self.lambda_eik),
            ("lambda_align", self.lambda_align),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for &l in &self.submap_extent {
            let cells = l / self.voxel_size;
            if !(l > 0.0) || (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
                return bad(format!(
                    "submap_extent component {l} is not a positive multiple of voxel_size {}",
                    self.voxel_size
                ));
            }
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.hash_levels == 0 || self.features_per_level == 0 {
            return bad("hash_levels and features_per_level must be positive".into());
        }
        if self.log2_table_size == 0 || self.log2_table_size > 30 {
            return bad(format!("log2_table_size out of range: {}", self.log2_table_size));
        }
        if self.base_resolution == 0 || self.mlp_hidden == 0 {
            return bad("base_resolution and mlp_hidden must be positive".into());
        }
        if self.samples_per_ray == 0 || self.rays_per_batch == 0 {
            return bad("samples_per_ray and rays_per_batch must be positive".into());
        }
        if self.min_free_hits == 0 {
            return bad("min_free_hits must be at least 1".into());
        }
        let sub = self.voxel_size / self.mesh_resolution;
        if !(self.mesh_resolution > 0.0) || (sub - sub.round()).abs() > 1e-9 || sub.round() < 1.0 {
            return bad(format!(
                "mesh_resolution {} must divide voxel_size {} evenly",
                self.mesh_resolution, self.voxel_size
            ));
        }
        Ok(())
    }

    pub fn encoding_spec(&self) -> crate::field::EncodingSpec {
        crate::field::EncodingSpec {
            levels: self.hash_levels,
            features: self.features_per_level,
            log2_table_size: self.log2_table_size,
            base_resolution: self.base_resolution,
        }
    }

    /// Number of marching-cubes cells per voxel edge.
    pub fn mesh_subdivision(&self) -> usize {
        (self.voxel_size / self.mesh_resolution).round() as usize
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MapError::parse("config", format!("line {line_no}"), "expected key = value")
            })?;
            let key = key.trim();
            let v = value.trim();
            let f = |v: &str| parse_f64(key, v, line_no);
            let u = |v: &str| parse_usize(key, v, line_no);
            let b = |v: &str| parse_bool(key, v, line_no);
            match key {
                "voxel_size" => cfg.voxel_size = f(v)?,
                "truncation" => cfg.truncation = f(v)?,
                "submap_extent" => {
                    let parts: Vec<&str> = v
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .collect();
                    if parts.len() != 3 {
                        return Err(MapError::parse(
                            "config",
                            format!("line {line_no}"),
                            "submap_extent needs three values",
                        ));
                    }
                    for (slot, p) in cfg.submap_extent.iter_mut().zip(parts) {
                        *slot = f(p)?;
                    }
                }
                "entry_threshold" => cfg.entry_threshold = f(v)?,
                "keyscan_distance" => cfg.keyscan_distance = f(v)?,
                "hash_levels" => cfg.hash_levels = u(v)?,
                "features_per_level" => cfg.features_per_level = u(v)?,
                "log2_table_size" => cfg.log2_table_size = u(v)? as u32,
                "base_resolution" => cfg.base_resolution = u(v)?,
                "mlp_hidden" => cfg.mlp_hidden = u(v)?,
                "mlp_layers" => cfg.mlp_layers = u(v)?,
                "iters_per_frame" => cfg.iters_per_frame = u(v)?,
                "overlap_iters" => cfg.overlap_iters = u(v)?,
                "replay_iters" => cfg.replay_iters = u(v)?,
                "lambda_bce" => cfg.lambda_bce = f(v)?,
                "lambda_eik" => cfg.lambda_eik = f(v)?,
                "lambda_align" => cfg.lambda_align = f(v)?,
                "temperature" => cfg.temperature = f(v)?,
                "samples_per_ray" => cfg.samples_per_ray = u(v)?,
                "rays_per_batch" => cfg.rays_per_batch = u(v)?,
                "rng_seed" => cfg.rng_seed = u(v)? as u64,
                "lr_features" => cfg.lr_features = f(v)?,
                "lr_mlp" => cfg.lr_mlp = f(v)?,
                "adam_beta1" => cfg.adam_beta1 = f(v)?,
                "adam_beta2" => cfg.adam_beta2 = f(v)?,
                "adam_eps" => cfg.adam_eps = f(v)?,
                "min_free_hits" => cfg.min_free_hits = u(v)? as u32,
                "carve_incidence" => cfg.carve_incidence = b(v)?,
                "seed_support" => cfg.seed_support = b(v)?,
                "dynamic_removal" => cfg.dynamic_removal = b(v)?,
                "alignment" => cfg.alignment = b(v)?,
                "keyscan" => cfg.keyscan = b(v)?,
                "center_mode" => {
                    cfg.center_mode = match v {
                        "centroid" => CenterMode::Centroid,
                        "sensor" => CenterMode::Sensor,
                        other => {
                            return Err(MapError::parse(
                                "config",
                                format!("line {line_no}"),
                                format!("center_mode: unknown value {other:?}"),
                            ))
                        }
                    }
                }
                "mesh_resolution" => cfg.mesh_resolution = f(v)?,
                other => {
                    return Err(MapError::parse(
                        "config",
                        format!("line {line_no}"),
                        format!("unknown key {other:?}"),
                    ))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| MapError::io(path, e))?;
        Config::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let e = self.submap_extent;
        let center = match self.center_mode {
            CenterMode::Centroid => "centroid",
            CenterMode::Sensor => "sensor",
        };
        // `{:?}` on f64 prints the shortest representation that round-trips.
        let _ = writeln!(s, "voxel_size = {:?}", self.voxel_size);
        let _ = writeln!(s, "truncation = {:?}", self.truncation);
        let _ = writeln!(s, "submap_extent = {:?}, {:?}, {:?}", e[0], e[1], e[2]);
        let _ = writeln!(s, "entry_threshold = {:?}", self.entry_threshold);
        let _ = writeln!(s, "keyscan_distance = {:?}", self.keyscan_distance);
        let _ = writeln!(s, "hash_levels = {}", self.hash_levels);
        let _ = writeln!(s, "features_per_level = {}", self.features_per_level);
        let _ = writeln!(s, "log2_table_size = {}", self.log2_table_size);
        let _ = writeln!(s, "base_resolution = {}", self.base_resolution);
        let _ = writeln!(s, "mlp_hidden = {}", self.mlp_hidden);
        let _ = writeln!(s, "mlp_layers = {}", self.mlp_layers);
        let _ = writeln!(s, "iters_per_frame = {}", self.iters_per_frame);
        let _ = writeln!(s, "overlap_iters = {}", self.overlap_iters);
        let _ = writeln!(s, "replay_iters = {}", self.replay_iters);
        let _ = writeln!(s, "lambda_bce = {:?}", self.lambda_bce);
        let _ = writeln!(s, "lambda_eik = {:?}", self.lambda_eik);
        let _ = writeln!(s, "lambda_align = {:?}", self.lambda_align);
        let _ = writeln!(s, "temperature = {:?}", self.temperature);
        let _ = writeln!(s, "samples_per_ray = {}", self.samples_per_ray);
        let _ = writeln!(s, "rays_per_batch = {}", self.rays_per_batch);
        let _ = writeln!(s, "rng_seed = {}", self.rng_seed);
        let _ = writeln!(s, "lr_features = {:?}", self.lr_features);
        let _ = writeln!(s, "lr_mlp = {:?}", self.lr_mlp);
        let _ = writeln!(s, "adam_beta1 = {:?}", self.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {:?}", self.adam_beta2);
        let _ = writeln!(s, "adam_eps = {:?}", self.adam_eps);
        let _ = writeln!(s, "min_free_hits = {}", self.min_free_hits);
        let _ = writeln!(s, "carve_incidence = {}", self.carve_incidence);
        let _ = writeln!(s, "seed_support = {}", self.seed_support);
        let _ = writeln!(s, "dynamic_removal = {}", self.dynamic_removal);
        let _ = writeln!(s, "alignment = {}", self.alignment);
        let _ = writeln!(s, "keyscan = {}", self.keyscan);
        let _ = writeln!(s, "center_mode = {center}");
        let _ = writeln!(s, "mesh_resolution = {:?}", self.mesh_resolution);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = Config::default();
        cfg.submap_extent = [16.0, 16.0, 8.0];
        cfg.center_mode = CenterMode::Sensor;
        cfg.lambda_eik = 0.3;
        let back = Config::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = Config::parse("voxel_sise = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("voxel_sise"), "{err}");
    }

    #[test]
    fn extent_must_be_lattice_multiple() {
        assert!(Config::parse("submap_extent = 40, 40, 12.1").is_err());
        assert!(Config::parse("submap_extent = 40, 40, 12.2").is_ok());
    }

    #[test]
    fn truncation_below_voxel_size_is_rejected() {
        assert!(Config::parse("truncation = 0.1").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = Config::parse("# header\n\nrng_seed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.rng_seed, 7);
    }
}
