//! Binary little-endian field checkpoint.
//!
//! Layout: magic `HMFIELD2`; `u32` levels, features, log2 table size, base
//! resolution, finest resolution; `f64` voxel size; `i64 x 3` domain lo, hi
//! and lattice anchor; `u32 x L` level resolutions; `u32` layer count `n` then `u32 x n` layer
//! widths; table parameters; then per layer the weight matrix (row-major)
//! followed by the bias vector, all `f64`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{EncodingSpec, FeatureField, HashEncoding, Mlp};
use crate::error::{MapError, Result};

const MAGIC: &[u8; 8] = b"HMFIELD2";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: String,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            MapError::parse(&self.name, format!("byte {}", self.pos), "unexpected end of checkpoint")
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| MapError::parse(&self.name, "header", "size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn save_checkpoint(field: &FeatureField, path: &Path) -> Result<()> {
    let enc = &field.encoding;
    let spec = enc.spec();
    let mut out = Vec::with_capacity(enc.params.len() * 8 + field.mlp.num_params() * 8 + 256);
    out.extend_from_slice(MAGIC);
    for v in [
        spec.levels as u32,
        spec.features as u32,
        spec.log2_table_size,
        spec.base_resolution as u32,
        enc.finest(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&field.voxel_size.to_le_bytes());
    let (lo, hi) = enc.domain();
    for v in lo.iter().chain(hi.iter()).chain(enc.anchor().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in enc.resolutions() {
        out.extend_from_slice(&r.to_le_bytes());
    }
    let dims = field.mlp.dims();
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for p in &enc.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for (w, b) in field.mlp.weights.iter().zip(&field.mlp.biases) {
        for p in w.iter().chain(b.iter()) {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| MapError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FeatureField> {
    let bytes = fs::read(path).map_err(|e| MapError::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        name: path.display().to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(MapError::parse(&r.name, "byte 0", "not a field checkpoint"));
    }
    let spec = EncodingSpec {
        levels: r.u32()? as usize,
        features: r.u32()? as usize,
        log2_table_size: r.u32()?,
        base_resolution: r.u32()? as usize,
    };
    if spec.levels == 0 || spec.features == 0 || spec.log2_table_size == 0 || spec.log2_table_size > 30 {
        return Err(MapError::parse(&r.name, "header", "invalid encoding shape"));
    }
    let finest = r.u32()?;
    let voxel_size = r.f64()?;
    let lo = [r.i64()?, r.i64()?, r.i64()?];
    let hi = [r.i64()?, r.i64()?, r.i64()?];
    let anchor = [r.i64()?, r.i64()?, r.i64()?];
    let resolutions = (0..spec.levels).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let n_dims = r.u32()? as usize;
    if n_dims < 2 {
        return Err(MapError::parse(&r.name, "header", "MLP needs at least two layer widths"));
    }
    let dims = (0..n_dims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let params = r.f64s(spec.levels * spec.table_size() * spec.features)?;
    let mut encoding = HashEncoding::from_parts(spec, resolutions, finest, lo, hi, params)?;
    encoding.set_anchor(anchor);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let wv = r.f64s(w[0] * w[1])?;
        weights.push(Array2::from_shape_vec((w[0], w[1]), wv).map_err(|e| MapError::Shape(e.to_string()))?);
        biases.push(Array1::from(r.f64s(w[1])?));
    }
    if r.pos != bytes.len() {
        return Err(MapError::parse(&r.name, format!("byte {}", r.pos), "trailing data"));
    }
    let mlp = Mlp { weights, biases };
    if mlp.input_width() != encoding.width() || dims[dims.len() - 1] != 1 {
        return Err(MapError::Shape("checkpoint MLP does not match the encoding".into()));
    }
    Ok(FeatureField {
        encoding,
        mlp,
        voxel_size,
    })
}
