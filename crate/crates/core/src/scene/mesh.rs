use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Vec3;

/// Untextured triangle mesh with per-face semantic and instance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    face_semantic: Vec<u16>,
    face_instance: Vec<u32>,
    face_normal: Vec<Vec3>,
}

impl LabeledMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        face_semantic: Vec<u16>,
        face_instance: Vec<u32>,
    ) -> Result<Self> {
        if face_semantic.len() != triangles.len() || face_instance.len() != triangles.len() {
            return Err(Error::Schema(format!(
                "label arrays ({}, {}) do not match triangle count {}",
                face_semantic.len(),
                face_instance.len(),
                triangles.len()
            )));
        }
        let mut face_normal = Vec::with_capacity(triangles.len());
        for (f, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(Error::Schema(format!(
                    "face {f} references vertex {bad} but only {} vertices exist",
                    vertices.len()
                )));
            }
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            let len = n.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::Schema(format!("face {f} is degenerate")));
            }
            face_normal.push(n / len);
        }
        Ok(LabeledMesh { vertices, triangles, face_semantic, face_instance, face_normal })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn face_semantic(&self) -> &[u16] {
        &self.face_semantic
    }

    pub fn face_instance(&self) -> &[u32] {
        &self.face_instance
    }

    pub fn face_normal(&self) -> &[Vec3] {
        &self.face_normal
    }

    pub fn face_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        self.triangles[f].map(|i| self.vertices[i as usize])
    }

    /// Concatenate two meshes, re-indexing the second.
    pub fn merged(&self, other: &LabeledMesh) -> LabeledMesh {
        let offset = self.vertices.len() as u32;
        let mut out = self.clone();
        out.vertices.extend_from_slice(&other.vertices);
        out.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + offset)));
        out.face_semantic.extend_from_slice(&other.face_semantic);
        out.face_instance.extend_from_slice(&other.face_instance);
        out.face_normal.extend_from_slice(&other.face_normal);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarKind {
    Float,
    Int,
}

#[derive(Debug)]
struct FaceLayout {
    list_pos: usize,
    semantic_pos: usize,
    instance_pos: usize,
    props: usize,
}

/// Read an ASCII PLY with `vertex {x,y,z}` and
/// `face {vertex_indices, semantic, instance}` elements.
pub fn load_mesh(path: &Path) -> Result<LabeledMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, &path.display().to_string())
}

pub(crate) fn parse_mesh(text: &str, origin: &str) -> Result<LabeledMesh> {
    let fmt = |line: usize, msg: String| Error::Format { path: origin.to_string(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(fmt(1, "missing 'ply' magic".into())),
    }

    let mut n_vertices = None;
    let mut n_faces = None;
    let mut current: Option<&str> = None;
    let mut vertex_props: Vec<(String, ScalarKind)> = Vec::new();
    let mut face_props: Vec<String> = Vec::new();
    let mut face_list_ok = false;
    let mut saw_format = false;

    loop {
        let (ln, line) = lines.next().ok_or_else(|| fmt(0, "unterminated header".into()))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", other, ..] => return Err(fmt(ln, format!("unsupported format '{other}'"))),
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| fmt(ln, format!("bad element count '{count}'")))?;
                match *name {
                    "vertex" => {
                        n_vertices = Some(count);
                        current = Some("vertex");
                    }
                    "face" => {
                        n_faces = Some(count);
                        current = Some("face");
                    }
                    other => return Err(fmt(ln, format!("unexpected element '{other}'"))),
                }
            }
            ["property", "list", _, _, name] => {
                if current != Some("face") || *name != "vertex_indices" {
                    return Err(fmt(ln, format!("unexpected list property '{name}'")));
                }
                face_list_ok = true;
                face_props.push("vertex_indices".into());
            }
            ["property", ty, name] => {
                let kind = match *ty {
                    "float" | "float32" | "double" | "float64" => ScalarKind::Float,
                    "uchar" | "uint8" | "char" | "int8" | "ushort" | "uint16" | "short" | "int16" | "uint"
                    | "uint32" | "int" | "int32" => ScalarKind::Int,
                    other => return Err(fmt(ln, format!("unknown property type '{other}'"))),
                };
                match current {
                    Some("vertex") => vertex_props.push((name.to_string(), kind)),
                    Some("face") => {
                        if kind != ScalarKind::Int {
                            return Err(fmt(ln, format!("face property '{name}' must be integral")));
                        }
                        face_props.push(name.to_string());
                    }
                    _ => return Err(fmt(ln, "property outside element".into())),
                }
            }
            ["end_header"] => break,
            _ => return Err(fmt(ln, format!("unrecognized header line '{line}'"))),
        }
    }
    if !saw_format {
        return Err(fmt(2, "missing 'format ascii 1.0'".into()));
    }
    let n_vertices = n_vertices.ok_or_else(|| Error::Schema("no vertex element".into()))?;
    let n_faces = n_faces.ok_or_else(|| Error::Schema("no face element".into()))?;

    let pos = |name: &str| vertex_props.iter().position(|(n, _)| n == name);
    let (px, py, pz) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Schema("vertex element needs x, y, z".into())),
    };
    if !face_list_ok {
        return Err(Error::Schema("face element needs vertex_indices".into()));
    }
    let fpos = |name: &str| face_props.iter().position(|n| n == name);
    let layout = FaceLayout {
        list_pos: fpos("vertex_indices").unwrap_or(0),
        semantic_pos: fpos("semantic").ok_or_else(|| Error::Schema("face property 'semantic' missing".into()))?,
        instance_pos: fpos("instance").ok_or_else(|| Error::Schema("face property 'instance' missing".into()))?,
        props: face_props.len(),
    };

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (ln, line) = body.next().ok_or_else(|| fmt(0, "unexpected end of vertex data".into()))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| fmt(ln, format!("vertex: bad number '{t}'"))))
            .collect::<Result<_>>()?;
        if vals.len() != vertex_props.len() {
            return Err(fmt(ln, format!("vertex: expected {} values, got {}", vertex_props.len(), vals.len())));
        }
        vertices.push(Vec3::new(vals[px], vals[py], vals[pz]));
    }

    let mut triangles = Vec::with_capacity(n_faces);
    let mut semantic = Vec::with_capacity(n_faces);
    let mut instance = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (ln, line) = body.next().ok_or_else(|| fmt(0, "unexpected end of face data".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let mut cursor = 0;
        let mut scalars = vec![0u64; layout.props];
        let mut tri = [0u32; 3];
        for p in 0..layout.props {
            let int = |t: Option<&&str>| -> Result<u64> {
                let t = t.ok_or_else(|| fmt(ln, "face: too few values".into()))?;
                t.parse::<u64>().map_err(|_| fmt(ln, format!("face: bad integer '{t}'")))
            };
            if p == layout.list_pos {
                let count = int(toks.get(cursor))?;
                if count != 3 {
                    return Err(fmt(ln, format!("face: only triangles supported, got {count} indices")));
                }
                for slot in tri.iter_mut() {
                    cursor += 1;
                    *slot = u32::try_from(int(toks.get(cursor))?).map_err(|_| fmt(ln, "face: index overflow".into()))?;
                }
                cursor += 1;
            } else {
                scalars[p] = int(toks.get(cursor))?;
                cursor += 1;
            }
        }
        if cursor != toks.len() {
            return Err(fmt(ln, "face: trailing values".into()));
        }
        triangles.push(tri);
        semantic.push(
            u16::try_from(scalars[layout.semantic_pos]).map_err(|_| fmt(ln, "face: semantic out of range".into()))?,
        );
        instance.push(
            u32::try_from(scalars[layout.instance_pos]).map_err(|_| fmt(ln, "face: instance out of range".into()))?,
        );
    }
    LabeledMesh::new(vertices, triangles, semantic, instance)
}

/// Serialize in the same ASCII PLY dialect `load_mesh` reads. Coordinates use
/// the shortest round-trip decimal form, so reading back is bit-exact.
pub fn write_mesh(path: &Path, mesh: &LabeledMesh) -> Result<()> {
    fs::write(path, mesh_to_ply(mesh)).map_err(|e| Error::io(path, e))
}

pub(crate) fn mesh_to_ply(mesh: &LabeledMesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    let _ = writeln!(s, "element face {}", mesh.triangles.len());
    s.push_str("property list uchar int vertex_indices\nproperty ushort semantic\nproperty uint instance\nend_header\n");
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for ((t, sem), inst) in mesh.triangles.iter().zip(&mesh.face_semantic).zip(&mesh.face_instance) {
        let _ = writeln!(s, "3 {} {} {} {} {}", t[0], t[1], t[2], sem, inst);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI: &str = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
element face 1\nproperty list uchar int vertex_indices\nproperty ushort semantic\nproperty uint instance\nend_header\n\
0 0 0\n1 0 0\n0 1 0\n3 0 1 2 3 7\n";

    #[test]
    fn single_triangle_with_labels() {
        let m = parse_mesh(TRI, "tri.ply").unwrap();
        assert_eq!(m.face_count(), 1);
        assert_eq!(m.face_semantic(), &[3]);
        assert_eq!(m.face_instance(), &[7]);
        assert!((m.face_normal()[0] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn index_equal_to_vertex_count_is_schema_error() {
        let bad = TRI.replace("3 0 1 2 3 7", "3 0 1 3 3 7");
        assert!(matches!(parse_mesh(&bad, "bad.ply"), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_label_property_is_schema_error() {
        let bad = TRI.replace("property uint instance\n", "").replace("3 0 1 2 3 7", "3 0 1 2 3");
        assert!(matches!(parse_mesh(&bad, "bad.ply"), Err(Error::Schema(_))));
    }

    #[test]
    fn garbage_reports_line() {
        let bad = TRI.replace("1 0 0\n", "1 zero 0\n");
        match parse_mesh(&bad, "bad.ply") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 13),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unit_cube_normals_are_axis_aligned() {
        let cube = crate::scene::toy::unit_cube(1, 1);
        let text = mesh_to_ply(&cube);
        let m = parse_mesh(&text, "cube.ply").unwrap();
        assert_eq!(m.face_count(), 12);
        for n in m.face_normal() {
            assert!((n.norm() - 1.0).abs() < 1e-9);
            let big = n.iter().filter(|c| c.abs() > 1.0 - 1e-12).count();
            let zero = n.iter().filter(|c| c.abs() < 1e-12).count();
            assert_eq!((big, zero), (1, 2), "normal {n:?} not axis aligned");
        }
    }
}
