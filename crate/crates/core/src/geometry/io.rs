//! Mesh and camera file formats: ASCII OBJ, binary little-endian PLY
//! (float64 positions, uint32 indices) and camera JSON.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::Point3;

use super::camera::Camera;
use super::mesh::TriMesh;
use crate::error::{Error, Result};

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(mesh.vertex_count() * 48 + mesh.triangle_count() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads `v` and `f` records; faces may use `v/vt/vn` syntax, only the
/// position index is kept. Non-triangular faces are rejected.
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(Error::parse(path, format!("line {}: short vertex", lineno + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<i64>()
                            .map_err(|e| e.to_string())
                            .and_then(|i| {
                                if i >= 1 {
                                    Ok((i - 1) as u32)
                                } else {
                                    Err(format!("unsupported face index {i}"))
                                }
                            })
                    })
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
                if idx.len() != 3 {
                    return Err(Error::parse(
                        path,
                        format!("line {}: only triangles are supported", lineno + 1),
                    ));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn write_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    fs::write(path, ply_bytes(mesh)).map_err(|e| Error::io(path, e))
}

pub fn ply_bytes(mesh: &TriMesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.triangle_count()
    );
    let mut out = Vec::with_capacity(header.len() + mesh.vertex_count() * 24 + mesh.triangle_count() * 13);
    out.extend_from_slice(header.as_bytes());
    for v in mesh.vertices() {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        out.push(3);
        for k in t {
            out.extend_from_slice(&k.to_le_bytes());
        }
    }
    out
}

pub fn read_ply(path: &Path) -> Result<TriMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes).map_err(|msg| Error::parse(path, msg))?
}

#[derive(Clone, Copy)]
enum Scalar {
    F32,
    F64,
}

fn parse_ply(bytes: &[u8]) -> std::result::Result<Result<TriMesh>, String> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or("missing end_header")?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| e.to_string())?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err("not a PLY file".into());
    }
    let (mut nv, mut nf) = (None, None);
    let mut scalar = None;
    let mut in_vertex = false;
    let mut vertex_props = 0;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, _] if *fmt != "binary_little_endian" => {
                return Err(format!("unsupported PLY format {fmt}"));
            }
            ["element", "vertex", n] => {
                nv = Some(n.parse::<usize>().map_err(|e| e.to_string())?);
                in_vertex = true;
            }
            ["element", "face", n] => {
                nf = Some(n.parse::<usize>().map_err(|e| e.to_string())?);
                in_vertex = false;
            }
            ["element", ..] => return Err("unsupported PLY element".into()),
            ["property", ty, _] if in_vertex => {
                let s = match *ty {
                    "double" | "float64" => Scalar::F64,
                    "float" | "float32" => Scalar::F32,
                    other => return Err(format!("unsupported vertex property type {other}")),
                };
                scalar = Some(s);
                vertex_props += 1;
            }
            ["property", "list", "uchar", "uint" | "int" | "uint32" | "int32", _] => {}
            _ => {}
        }
    }
    if vertex_props != 3 {
        return Err("expected exactly x, y, z vertex properties".into());
    }
    let nv = nv.ok_or("missing vertex element")?;
    let nf = nf.ok_or("missing face element")?;
    let scalar = scalar.ok_or("missing vertex properties")?;
    let mut rd = &bytes[end..];
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut c = [0.0f64; 3];
        for x in &mut c {
            *x = match scalar {
                Scalar::F64 => {
                    let mut b = [0u8; 8];
                    rd.read_exact(&mut b).map_err(|_| "truncated vertex data")?;
                    f64::from_le_bytes(b)
                }
                Scalar::F32 => {
                    let mut b = [0u8; 4];
                    rd.read_exact(&mut b).map_err(|_| "truncated vertex data")?;
                    f32::from_le_bytes(b) as f64
                }
            };
        }
        vertices.push(Point3::new(c[0], c[1], c[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let mut n = [0u8; 1];
        rd.read_exact(&mut n).map_err(|_| "truncated face data")?;
        if n[0] != 3 {
            return Err(format!("face with {} vertices; only triangles supported", n[0]));
        }
        let mut t = [0u32; 3];
        for x in &mut t {
            let mut b = [0u8; 4];
            rd.read_exact(&mut b).map_err(|_| "truncated face data")?;
            *x = u32::from_le_bytes(b);
        }
        triangles.push(t);
    }
    Ok(TriMesh::new(vertices, triangles))
}

pub fn write_camera(cam: &Camera, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(cam)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::parse(path, e.to_string()))
}

/// Loads a mesh by extension (`.obj` or `.ply`).
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => read_obj(path),
        Some("ply") => read_ply(path),
        _ => Err(Error::parse(path, "unknown mesh extension (expected .obj or .ply)")),
    }
}

pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => write_obj(mesh, path),
        Some("ply") => write_ply(mesh, path),
        _ => Err(Error::parse(path, "unknown mesh extension (expected .obj or .ply)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn mesh() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.1, 0.2, 0.3),
                Point3::new(1.0 / 3.0, 0.0, -2.5),
                Point3::new(0.0, 1e-7, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn ply_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        write_ply(&mesh(), &p).unwrap();
        assert_eq!(read_ply(&p).unwrap(), mesh());
    }

    #[test]
    fn obj_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.obj");
        write_obj(&mesh(), &p).unwrap();
        let back = read_obj(&p).unwrap();
        assert_eq!(back, mesh());
    }

    #[test]
    fn obj_rejects_quads_and_accepts_slashes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.obj");
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert!(read_obj(&p).is_err());
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1/1/1 2/2/2 3/3/3\n").unwrap();
        assert_eq!(read_obj(&p).unwrap().triangle_count(), 1);
    }

    #[test]
    fn camera_json_keys() {
        let cam = Camera::new(
            100.0,
            110.0,
            32.0,
            30.0,
            64,
            60,
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 2.0),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&cam).unwrap();
        for key in ["fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["rotation"].as_array().unwrap().len(), 9);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam.json");
        write_camera(&cam, &p).unwrap();
        assert_eq!(read_camera(&p).unwrap(), cam);
    }
}
