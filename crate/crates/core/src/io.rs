//! File formats shared by every stage.
//!
//! Encoders produce bytes so callers can write them atomically; decoders take
//! bytes plus the originating path for error messages.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, Pose, Vec3};
use crate::reconstruction::TriangleMesh;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- poses

/// Parses `frame_id tx ty tz qx qy qz qw` lines; `#` starts a comment.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>> {
    let mut poses: Vec<Pose> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: String| Error::parse(path, format!("line {}: {msg}", lineno + 1));
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", fields.len())));
        }
        let frame_id: u32 = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad frame id {:?}", fields[0])))?;
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(format!("bad number {f:?}")))?;
        }
        if !seen.insert(frame_id) {
            return Err(bad(format!("duplicate frame id {frame_id}")));
        }
        let pose = Pose::from_quaternion(frame_id, Vec3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]])
            .map_err(|e| bad(e.to_string()))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    parse_poses(&read_string(path)?, path)
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::from("# frame_id tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.translation();
        let q = p.quaternion_xyzw();
        out.push_str(&format!(
            "{} {:.9} {:.9} {:.9} {:.12} {:.12} {:.12} {:.12}\n",
            p.frame_id, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        ));
    }
    out
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let k: Intrinsics = read_json(path)?;
    k.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(k)
}

// ---------------------------------------------------------------- json

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

pub fn to_jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable value");
        out.push(b'\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read_string(path)?, path)
}

/// `categories.json`: `"<frame_id>:<label>"` -> category.
pub fn parse_categories(text: &str, path: &Path) -> Result<BTreeMap<(u32, u16), String>> {
    let raw: BTreeMap<String, String> = serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut out = BTreeMap::new();
    for (key, cat) in raw {
        let parsed = key
            .split_once(':')
            .and_then(|(f, l)| Some((f.parse::<u32>().ok()?, l.parse::<u16>().ok()?)));
        match parsed {
            Some(k) => {
                out.insert(k, cat);
            }
            None => return Err(Error::parse(path, format!("bad category key {key:?}"))),
        }
    }
    Ok(out)
}

pub fn format_categories(map: &BTreeMap<(u32, u16), String>) -> Vec<u8> {
    let raw: BTreeMap<String, &String> = map.iter().map(|((f, l), c)| (format!("{f}:{l}"), c)).collect();
    to_json_bytes(&raw)
}

// ---------------------------------------------------------------- png

/// 16-bit PNG, millimeters, 0 = invalid. Depths beyond 65.535 m saturate.
pub fn encode_depth_png(depth: &DepthMap) -> Vec<u8> {
    let mm: Vec<u16> = depth
        .raw()
        .iter()
        .map(|&d| if d > 0.0 { (d as f64 * 1000.0).round().clamp(1.0, 65535.0) as u16 } else { 0 })
        .collect();
    encode_u16_png(depth.width(), depth.height(), mm)
}

pub fn decode_depth_png(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let (w, h, mm) = decode_u16_png(bytes, path)?;
    let values = mm.iter().map(|&v| v as f32 / 1000.0).collect();
    DepthMap::from_values(w, h, values)
}

/// Row-major `u16` label image, 0 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u16) {
        self.labels[y * self.width + x] = label;
    }
}

pub fn encode_label_png(labels: &LabelImage) -> Vec<u8> {
    encode_u16_png(labels.width, labels.height, labels.labels.clone())
}

pub fn decode_label_png(bytes: &[u8], path: &Path) -> Result<LabelImage> {
    let (width, height, labels) = decode_u16_png(bytes, path)?;
    Ok(LabelImage { width, height, labels })
}

fn encode_u16_png(w: usize, h: usize, data: Vec<u16>) -> Vec<u8> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory png encode");
    out.into_inner()
}

fn decode_u16_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if img.color().channel_count() != 1 {
        return Err(Error::parse(path, "expected a single-channel image"));
    }
    let g = img.into_luma16();
    Ok((g.width() as usize, g.height() as usize, g.into_raw()))
}

// ---------------------------------------------------------------- ply

const PLY_HEADER_END: &[u8] = b"end_header\n";

/// Binary little-endian PLY: float32 vertices, uchar-count int32 faces.
pub fn encode_mesh_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )
    .into_bytes();
    push_vertices(&mut out, &mesh.vertices);
    for tri in &mesh.triangles {
        out.push(3);
        for &i in tri {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

/// Vertex-only binary PLY.
pub fn encode_points_ply(points: &[Vec3]) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )
    .into_bytes();
    push_vertices(&mut out, points);
    out
}

fn push_vertices(out: &mut Vec<u8>, points: &[Vec3]) {
    for p in points {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
}

/// Decodes the PLY layout written by [`encode_mesh_ply`] / [`encode_points_ply`].
pub fn decode_ply(bytes: &[u8], path: &Path) -> Result<TriangleMesh> {
    let bad = |m: &str| Error::parse(path, m.to_string());
    let end = bytes
        .windows(PLY_HEADER_END.len())
        .position(|w| w == PLY_HEADER_END)
        .ok_or_else(|| bad("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("non-utf8 header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("not a ply file"));
    }
    let (mut n_vert, mut n_face) = (0usize, 0usize);
    let mut props = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", fmt, _] if *fmt != "binary_little_endian" => return Err(bad("only binary_little_endian is supported")),
            ["element", "vertex", n] => n_vert = n.parse().map_err(|_| bad("bad vertex count"))?,
            ["element", "face", n] => n_face = n.parse().map_err(|_| bad("bad face count"))?,
            ["property", "float", name] => props.push(*name),
            _ => {}
        }
    }
    if props != ["x", "y", "z"] {
        return Err(bad("expected float x, y, z vertex properties"));
    }
    let mut cur = end + PLY_HEADER_END.len();
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(cur..cur + n).ok_or_else(|| bad("truncated body"))?;
        cur += n;
        Ok(s)
    };
    let mut vertices = Vec::with_capacity(n_vert);
    for _ in 0..n_vert {
        let b = take(12)?;
        let c = |i: usize| f32::from_le_bytes(b[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        vertices.push(Vec3::new(c(0), c(1), c(2)));
    }
    let mut triangles = Vec::with_capacity(n_face);
    for _ in 0..n_face {
        if take(1)?[0] != 3 {
            return Err(bad("only triangular faces are supported"));
        }
        let b = take(12)?;
        let idx = |i: usize| i32::from_le_bytes(b[i * 4..i * 4 + 4].try_into().unwrap());
        let tri = [idx(0), idx(1), idx(2)];
        if tri.iter().any(|&i| i < 0 || i as usize >= n_vert) {
            return Err(bad("face index out of range"));
        }
        triangles.push(tri.map(|i| i as u32));
    }
    Ok(TriangleMesh { vertices, triangles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GroundPose;

    #[test]
    fn pose_file_round_trip() {
        let poses: Vec<Pose> = (0..4)
            .map(|i| Pose::from_ground(i, &GroundPose::new(i as f64, 1.0, 30.0 * i as f64), 1.5, 10.0))
            .collect();
        let text = format_poses(&poses);
        let back = parse_poses(&text, Path::new("p.txt")).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in poses.iter().zip(&back) {
            assert_eq!(a.frame_id, b.frame_id);
            assert!((a.rotation() - b.rotation()).abs().max() < 1e-9);
            assert!((a.translation() - b.translation()).norm() < 1e-8);
        }
    }

    #[test]
    fn pose_file_errors_name_the_line() {
        let err = parse_poses("# c\n0 0 0 0 0 0 0 1\n1 0 0\n", Path::new("poses.txt")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("poses.txt") && msg.contains("line 3"), "{msg}");
        assert!(parse_poses("0 0 0 0 0 0 0 1\n0 1 1 1 0 0 0 1\n", Path::new("p")).is_err());
        assert!(parse_poses("0 0 0 0 0 0 0 0\n", Path::new("p")).is_err());
    }

    #[test]
    fn depth_png_millimeters() {
        let mut d = DepthMap::new(3, 2);
        d.set(0, 0, 1.2345);
        d.set(2, 1, 10.0);
        let bytes = encode_depth_png(&d);
        let back = decode_depth_png(&bytes, Path::new("d.png")).unwrap();
        assert_eq!(back.get(0, 0), Some(1.235));
        assert_eq!(back.get(2, 1), Some(10.0));
        assert_eq!(back.get(1, 0), None);
        assert_eq!(back.valid_count(), 2);
    }

    #[test]
    fn ply_round_trip() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
        };
        let back = decode_ply(&encode_mesh_ply(&mesh), Path::new("m.ply")).unwrap();
        assert_eq!(back, mesh);
        let pts = decode_ply(&encode_points_ply(&mesh.vertices), Path::new("p.ply")).unwrap();
        assert_eq!(pts.vertices, mesh.vertices);
        assert!(pts.triangles.is_empty());
    }

    #[test]
    fn categories_keys() {
        let mut m = BTreeMap::new();
        m.insert((3, 2), "chair".to_string());
        let bytes = format_categories(&m);
        let back = parse_categories(std::str::from_utf8(&bytes).unwrap(), Path::new("c")).unwrap();
        assert_eq!(back, m);
        assert!(parse_categories(r#"{"x": "a"}"#, Path::new("c")).is_err());
    }
}
