//! Scan, pose and mesh file formats.
//!
//! * KITTI velodyne `.bin`: little-endian `f32` quadruples `(x, y, z, intensity)`.
//! * PLY (ascii or binary little-endian): `x`, `y`, `z` vertex properties.
//! * PCD ascii: `FIELDS` must include `x`, `y`, `z`.
//! * KITTI odometry poses: 12 numbers per line, row-major 3x4 `[R | t]`.
//!
//! Meshes are written as binary little-endian PLY with `f32` vertices and
//! `i32` triangle indices.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::mesher::Mesh;
use crate::Vec3;

/// One LiDAR frame in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: Vec<Vec3>,
    pub origin: Vec3,
    pub frame_index: usize,
}

impl Scan {
    pub fn new(points: Vec<Vec3>, frame_index: usize) -> Self {
        Scan {
            points,
            origin: Vec3::zeros(),
            frame_index,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rigid sensor-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

const ORTHO_TOL: f64 = 1e-6;
const REORTHO_TOL: f64 = 1e-3;

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).amax()
}

/// Closest rotation to `m` in the Frobenius sense (polar decomposition).
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    r
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(MapError::InvalidPose("non-finite entries".into()));
        }
        let err = orthonormality_error(&self.rotation);
        let det = self.rotation.determinant();
        if err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(MapError::InvalidPose(format!(
                "rotation not orthonormal (|RR^T - I| = {err:.3e}, det = {det:.6})"
            )));
        }
        Ok(())
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Parses the 12 row-major entries of a 3x4 `[R | t]` matrix.
    ///
    /// Rotations within `1e-3` of orthonormal are projected back onto SO(3);
    /// anything further off is an error.
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Self> {
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vec3::new(v[3], v[7], v[11]);
        if !v.iter().all(|x| x.is_finite()) {
            return Err(MapError::InvalidPose("non-finite entries".into()));
        }
        let err = orthonormality_error(&r);
        let det = r.determinant();
        if err <= 1e-12 && (det - 1.0).abs() <= 1e-12 {
            return Ok(Pose {
                rotation: r,
                translation: t,
            });
        }
        if err > REORTHO_TOL || (det - 1.0).abs() > REORTHO_TOL {
            return Err(MapError::InvalidPose(format!(
                "rotation too far from orthonormal (|RR^T - I| = {err:.3e}, det = {det:.6})"
            )));
        }
        Pose::new(nearest_rotation(&r), t)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFormat {
    KittiBin,
    Ply,
    PcdAscii,
}

impl ScanFormat {
    pub fn from_path(path: &Path) -> Option<ScanFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "bin" => Some(ScanFormat::KittiBin),
            "ply" => Some(ScanFormat::Ply),
            "pcd" => Some(ScanFormat::PcdAscii),
            _ => None,
        }
    }
}

pub fn load_scan(path: &Path, format: ScanFormat) -> Result<Scan> {
    let bytes = fs::read(path).map_err(|e| MapError::io(path, e))?;
    let name = path.display().to_string();
    let points = match format {
        ScanFormat::KittiBin => decode_kitti_bin(&bytes, &name)?,
        ScanFormat::Ply => PlyData::parse(&bytes, &name)?.vertices,
        ScanFormat::PcdAscii => decode_pcd_ascii(&bytes, &name)?,
    };
    if points.is_empty() {
        return Err(MapError::EmptyScan(name));
    }
    Ok(Scan::new(points, 0))
}

pub fn decode_kitti_bin(bytes: &[u8], name: &str) -> Result<Vec<Vec3>> {
    if bytes.len() % 16 != 0 {
        return Err(MapError::parse(
            name,
            format!("byte {}", bytes.len() - bytes.len() % 16),
            format!("file length {} is not a multiple of 16", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(bytes.len() / 16);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Vec3::new(f(0), f(1), f(2));
        if !p.iter().all(|v| v.is_finite()) {
            return Err(MapError::parse(name, format!("byte {}", i * 16), "non-finite coordinate"));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn encode_kitti_bin(points: &[Vec3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_pcd_ascii(bytes: &[u8], name: &str) -> Result<Vec<Vec3>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| MapError::parse(name, format!("byte {}", e.valid_up_to()), "not utf-8"))?;
    let mut fields: Vec<String> = Vec::new();
    let mut lines = text.lines().enumerate();
    let mut in_data = false;
    for (no, line) in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("FIELDS") => fields = tok.map(str::to_string).collect(),
            Some("DATA") => {
                if tok.next() != Some("ascii") {
                    return Err(MapError::parse(name, format!("line {}", no + 1), "only DATA ascii is supported"));
                }
                in_data = true;
                break;
            }
            _ => {}
        }
    }
    if !in_data {
        return Err(MapError::parse(name, "header", "missing DATA line"));
    }
    let col = |f: &str| {
        fields
            .iter()
            .position(|x| x == f)
            .ok_or_else(|| MapError::parse(name, "header", format!("missing field {f}")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut out = Vec::new();
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != fields.len() {
            return Err(MapError::parse(
                name,
                format!("line {}", no + 1),
                format!("expected {} values, found {}", fields.len(), vals.len()),
            ));
        }
        let g = |i: usize| {
            vals[i]
                .parse::<f64>()
                .map_err(|e| MapError::parse(name, format!("line {}", no + 1), e.to_string()))
        };
        let p = Vec3::new(g(ix)?, g(iy)?, g(iz)?);
        // NaN entries mark missing returns in organized clouds.
        if p.iter().all(|v| v.is_finite()) {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyScalar::I8,
            "uchar" | "uint8" => PlyScalar::U8,
            "short" | "int16" => PlyScalar::I16,
            "ushort" | "uint16" => PlyScalar::U16,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyScalar::I8 | PlyScalar::U8 => 1,
            PlyScalar::I16 | PlyScalar::U16 => 2,
            PlyScalar::I32 | PlyScalar::U32 | PlyScalar::F32 => 4,
            PlyScalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            PlyScalar::I8 => b[0] as i8 as f64,
            PlyScalar::U8 => b[0] as f64,
            PlyScalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyScalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyScalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyScalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyScalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyScalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

/// Vertex positions and faces read from a PLY file. Vertex coordinates keep
/// the precision of the stored type.
#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<Vec<i64>>,
}

impl PlyData {
    pub fn parse(bytes: &[u8], name: &str) -> Result<PlyData> {
        let header_end = find_subslice(bytes, b"end_header")
            .ok_or_else(|| MapError::parse(name, "header", "missing end_header"))?;
        let mut body_start = header_end + b"end_header".len();
        if bytes.get(body_start) == Some(&b'\r') {
            body_start += 1;
        }
        if bytes.get(body_start) == Some(&b'\n') {
            body_start += 1;
        }
        let header = std::str::from_utf8(&bytes[..header_end])
            .map_err(|_| MapError::parse(name, "header", "header is not utf-8"))?;
        let mut lines = header.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(MapError::parse(name, "line 1", "missing ply magic"));
        }
        let mut binary = None;
        let mut elements: Vec<PlyElement> = Vec::new();
        for (no, line) in lines.enumerate() {
            let loc = || format!("line {}", no + 2);
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                [] => {}
                ["comment", ..] | ["obj_info", ..] => {}
                ["format", "ascii", _] => binary = Some(false),
                ["format", "binary_little_endian", _] => binary = Some(true),
                ["format", other, _] => {
                    return Err(MapError::parse(name, loc(), format!("unsupported format {other}")))
                }
                ["element", ename, count] => elements.push(PlyElement {
                    name: ename.to_string(),
                    count: count
                        .parse()
                        .map_err(|_| MapError::parse(name, loc(), "bad element count"))?,
                    props: Vec::new(),
                }),
                ["property", "list", ct, it, pname] => {
                    let el = elements
                        .last_mut()
                        .ok_or_else(|| MapError::parse(name, loc(), "property before element"))?;
                    let ct = PlyScalar::parse(ct)
                        .ok_or_else(|| MapError::parse(name, loc(), "bad list count type"))?;
                    let it = PlyScalar::parse(it)
                        .ok_or_else(|| MapError::parse(name, loc(), "bad list item type"))?;
                    el.props.push(PlyProperty::List(pname.to_string(), ct, it));
                }
                ["property", ty, pname] => {
                    let el = elements
                        .last_mut()
                        .ok_or_else(|| MapError::parse(name, loc(), "property before element"))?;
                    let ty = PlyScalar::parse(ty)
                        .ok_or_else(|| MapError::parse(name, loc(), format!("bad property type {ty}")))?;
                    el.props.push(PlyProperty::Scalar(pname.to_string(), ty));
                }
                _ => return Err(MapError::parse(name, loc(), format!("unrecognized header line {line:?}"))),
            }
        }
        let binary = binary.ok_or_else(|| MapError::parse(name, "header", "missing format line"))?;
        let body = &bytes[body_start..];
        let mut out = PlyData::default();
        if binary {
            let mut off = 0usize;
            for el in &elements {
                read_element_binary(el, body, &mut off, body_start, name, &mut out)?;
            }
        } else {
            let text = std::str::from_utf8(body)
                .map_err(|e| MapError::parse(name, format!("byte {}", body_start + e.valid_up_to()), "not utf-8"))?;
            let header_lines = header.lines().count() + 1;
            let mut rows = text
                .lines()
                .enumerate()
                .map(|(i, l)| (i + header_lines + 1, l))
                .filter(|(_, l)| !l.trim().is_empty());
            for el in &elements {
                read_element_ascii(el, &mut rows, name, &mut out)?;
            }
        }
        Ok(out)
    }
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn xyz_slots(el: &PlyElement) -> Option<[usize; 3]> {
    let idx = |n: &str| {
        el.props
            .iter()
            .position(|p| matches!(p, PlyProperty::Scalar(pn, _) if pn == n))
    };
    Some([idx("x")?, idx("y")?, idx("z")?])
}

fn is_face_list(name: &str) -> bool {
    name == "vertex_indices" || name == "vertex_index"
}

fn read_element_binary(
    el: &PlyElement,
    body: &[u8],
    off: &mut usize,
    base: usize,
    name: &str,
    out: &mut PlyData,
) -> Result<()> {
    let truncated = |off: usize| MapError::parse(name, format!("byte {}", base + off), "unexpected end of data");
    let slots = if el.name == "vertex" { xyz_slots(el) } else { None };
    if el.name == "vertex" && slots.is_none() {
        return Err(MapError::parse(name, "header", "vertex element lacks x/y/z"));
    }
    let mut scalars = vec![0.0f64; el.props.len()];
    for _ in 0..el.count {
        let mut face: Option<Vec<i64>> = None;
        for (k, prop) in el.props.iter().enumerate() {
            match prop {
                PlyProperty::Scalar(_, ty) => {
                    let end = *off + ty.size();
                    let b = body.get(*off..end).ok_or_else(|| truncated(*off))?;
                    scalars[k] = ty.read_le(b);
                    *off = end;
                }
                PlyProperty::List(pname, ct, it) => {
                    let b = body.get(*off..*off + ct.size()).ok_or_else(|| truncated(*off))?;
                    let n = ct.read_le(b) as usize;
                    *off += ct.size();
                    let mut items = Vec::with_capacity(n);
                    for _ in 0..n {
                        let b = body.get(*off..*off + it.size()).ok_or_else(|| truncated(*off))?;
                        items.push(it.read_le(b) as i64);
                        *off += it.size();
                    }
                    if el.name == "face" && is_face_list(pname) {
                        face = Some(items);
                    }
                }
            }
        }
        if let Some([ix, iy, iz]) = slots {
            let p = Vec3::new(scalars[ix], scalars[iy], scalars[iz]);
            if !p.iter().all(|v| v.is_finite()) {
                return Err(MapError::parse(name, format!("byte {}", base + *off), "non-finite vertex"));
            }
            out.vertices.push(p);
        }
        if let Some(f) = face {
            out.faces.push(f);
        }
    }
    Ok(())
}

fn read_element_ascii<'a>(
    el: &PlyElement,
    rows: &mut impl Iterator<Item = (usize, &'a str)>,
    name: &str,
    out: &mut PlyData,
) -> Result<()> {
    let slots = if el.name == "vertex" { xyz_slots(el) } else { None };
    if el.name == "vertex" && slots.is_none() {
        return Err(MapError::parse(name, "header", "vertex element lacks x/y/z"));
    }
    for _ in 0..el.count {
        let (line_no, row) = rows
            .next()
            .ok_or_else(|| MapError::parse(name, "end of file", format!("missing {} rows", el.name)))?;
        let loc = || format!("line {line_no}");
        let mut tok = row.split_whitespace();
        let mut next = || -> Result<f64> {
            tok.next()
                .ok_or_else(|| MapError::parse(name, loc(), "too few values"))?
                .parse::<f64>()
                .map_err(|e| MapError::parse(name, loc(), e.to_string()))
        };
        let mut scalars = vec![0.0f64; el.props.len()];
        let mut face = None;
        for (k, prop) in el.props.iter().enumerate() {
            match prop {
                PlyProperty::Scalar(..) => scalars[k] = next()?,
                PlyProperty::List(pname, ..) => {
                    let n = next()? as usize;
                    let items = (0..n).map(|_| next().map(|v| v as i64)).collect::<Result<Vec<_>>>()?;
                    if el.name == "face" && is_face_list(pname) {
                        face = Some(items);
                    }
                }
            }
        }
        if let Some([ix, iy, iz]) = slots {
            let p = Vec3::new(scalars[ix], scalars[iy], scalars[iz]);
            if !p.iter().all(|v| v.is_finite()) {
                return Err(MapError::parse(name, loc(), "non-finite vertex"));
            }
            out.vertices.push(p);
        }
        if let Some(f) = face {
            out.faces.push(f);
        }
    }
    Ok(())
}

/// Writes a point set as a binary little-endian PLY with `f32` coordinates.
pub fn write_points_ply(points: &[Vec3], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(points.len() * 12 + 128);
    let _ = write!(
        buf,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| MapError::io(path, e))
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    let file = fs::File::create(path).map_err(|e| MapError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    let io = |e| MapError::io(path, e);
    w.write_all(header.as_bytes()).map_err(io)?;
    for v in &mesh.vertices {
        for c in v {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8]).map_err(io)?;
        for &i in t {
            w.write_all(&(i as i32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a triangle mesh from PLY. Polygons with more than three vertices are fan-triangulated.
pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let bytes = fs::read(path).map_err(|e| MapError::io(path, e))?;
    let name = path.display().to_string();
    let data = PlyData::parse(&bytes, &name)?;
    let mut mesh = Mesh {
        vertices: data.vertices.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect(),
        triangles: Vec::with_capacity(data.faces.len()),
    };
    for (fi, f) in data.faces.iter().enumerate() {
        if f.len() < 3 {
            return Err(MapError::parse(&name, format!("face {fi}"), "face with fewer than 3 vertices"));
        }
        for k in 1..f.len() - 1 {
            let tri = [f[0], f[k], f[k + 1]];
            if tri.iter().any(|&i| i < 0 || i as usize >= mesh.vertices.len()) {
                return Err(MapError::parse(&name, format!("face {fi}"), "vertex index out of range"));
            }
            mesh.triangles.push(tri.map(|i| i as u32));
        }
    }
    Ok(mesh)
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| MapError::io(path, e))?;
    parse_poses(&text, &path.display().to_string())
}

pub fn parse_poses(text: &str, name: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("line {}", no + 1);
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| MapError::parse(name, loc(), e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        let arr: [f64; 12] = vals.as_slice().try_into().map_err(|_| {
            MapError::parse(name, loc(), format!("expected 12 numbers, found {}", vals.len()))
        })?;
        let pose = Pose::from_row_major_3x4(&arr)
            .map_err(|e| MapError::parse(name, loc(), e.to_string()))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let row = p.to_row_major_3x4();
        let parts: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", parts.join(" "));
    }
    s
}

pub fn write_poses(poses: &[Pose], path: &Path) -> Result<()> {
    fs::write(path, format_poses(poses)).map_err(|e| MapError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kitti_single_record() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let pts = decode_kitti_bin(&bytes, "t").unwrap();
        assert_eq!(pts, vec![Vec3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn kitti_truncated_is_error() {
        let err = decode_kitti_bin(&[0u8; 20], "t").unwrap_err();
        assert!(err.to_string().contains("byte 16"), "{err}");
    }

    #[test]
    fn kitti_empty_file_is_empty_scan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        fs::write(&p, []).unwrap();
        assert!(matches!(load_scan(&p, ScanFormat::KittiBin), Err(MapError::EmptyScan(_))));
    }

    #[test]
    fn ply_ascii_three_vertices_in_order() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar intensity\nend_header\n0 0 0 9\n1 2 3 9\n-1 -2 -3 9\n";
        let data = PlyData::parse(text.as_bytes(), "t").unwrap();
        assert_eq!(
            data.vertices,
            vec![Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, -2.0, -3.0)]
        );
    }

    #[test]
    fn ply_ascii_bad_value_names_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 x 3\n";
        let err = PlyData::parse(text.as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("line 9"), "{err}");
    }

    #[test]
    fn pcd_ascii() {
        let text = "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\nWIDTH 2\nHEIGHT 1\nPOINTS 2\nDATA ascii\n1 2 3 0\n4 5 6 0\n";
        let pts = decode_pcd_ascii(text.as_bytes(), "t").unwrap();
        assert_eq!(pts, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn identity_pose_line() {
        let poses = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", "t").unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0], Pose::identity());
    }

    #[test]
    fn pose_with_eleven_numbers_is_rejected() {
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 1\n", "t").unwrap_err();
        assert!(err.to_string().contains("expected 12"), "{err}");
    }

    #[test]
    fn scaled_rotation_is_rejected() {
        assert!(parse_poses("1.1 0 0 0 0 1.1 0 0 0 0 1.1 0\n", "t").is_err());
    }

    #[test]
    fn slightly_drifted_rotation_is_repaired() {
        let poses = parse_poses("1.0002 0 0 0 0 0.9999 0.0001 0 0 0 1 0\n", "t").unwrap();
        poses[0].validate().unwrap();
        assert!(orthonormality_error(&poses[0].rotation) < 1e-12);
    }

    #[test]
    fn mesh_round_trip_single_triangle() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tri.ply");
        let mesh = Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.5, -0.25, 3.0], [0.1, 0.2, 0.3]],
            triangles: vec![[0, 1, 2]],
        };
        write_mesh(&mesh, &p).unwrap();
        assert_eq!(read_mesh(&p).unwrap(), mesh);
    }

    #[test]
    fn empty_mesh_writes_valid_ply() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ply");
        write_mesh(&Mesh::default(), &p).unwrap();
        let back = read_mesh(&p).unwrap();
        assert!(back.vertices.is_empty() && back.triangles.is_empty());
    }

    #[test]
    fn out_of_range_face_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh {
            vertices: vec![[0.0; 3]; 3],
            triangles: vec![[0, 1, 5]],
        };
        assert!(write_mesh(&mesh, &dir.path().join("bad.ply")).is_err());
    }

    fn arb_rotation() -> impl Strategy<Value = Matrix3<f64>> {
        (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1).prop_map(|(a, b, c)| {
            nalgebra::Rotation3::from_euler_angles(a, b, c).into_inner()
        })
    }

    proptest! {
        #[test]
        fn poses_round_trip(rot in arb_rotation(), t in proptest::array::uniform3(-1e3f64..1e3)) {
            let pose = Pose { rotation: rot, translation: Vec3::from(t) };
            prop_assume!(orthonormality_error(&rot) <= 1e-12 && (rot.determinant() - 1.0).abs() <= 1e-12);
            let back = parse_poses(&format_poses(&[pose]), "t").unwrap();
            prop_assert_eq!(back[0], pose);
        }

        #[test]
        fn mesh_round_trip(verts in proptest::collection::vec(proptest::array::uniform3(-1e4f32..1e4), 1..40),
                           seed in 0u32..1000) {
            let n = verts.len() as u32;
            let tris = (0..n).map(|i| [i, (i + seed) % n, (i * 7 + 1) % n]).collect();
            let mesh = Mesh { vertices: verts, triangles: tris };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.ply");
            write_mesh(&mesh, &p).unwrap();
            prop_assert_eq!(read_mesh(&p).unwrap(), mesh);
        }
    }
}
