//! OBJ (text) and binary little-endian PLY mesh IO.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TriMesh;
use crate::{Error, Point3, Result, Vec3};

/// Writes `v`, `vn` and `f v//vn` records.
pub fn write_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(mesh.vertex_count() * 64);
    for p in mesh.vertices() {
        writeln!(s, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    for n in mesh.normals() {
        writeln!(s, "vn {} {} {}", n.x, n.y, n.z).unwrap();
    }
    for f in mesh.faces() {
        let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
        writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}").unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", lineno + 1));
        match it.next() {
            Some("v") => vertices.push(Point3::from(parse3(&mut it).ok_or_else(|| bad("vertex"))?)),
            Some("vn") => normals.push(Vec3::from(parse3(&mut it).ok_or_else(|| bad("normal"))?)),
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("face index"))?;
                        let n = vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(bad("face index"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if !normals.is_empty() && normals.len() == vertices.len() {
        TriMesh::with_normals(vertices, faces, normals)
    } else {
        TriMesh::new(vertices, faces)
    }
}

fn parse3<'a>(it: &mut impl Iterator<Item = &'a str>) -> Option<[f64; 3]> {
    let x = it.next()?.parse().ok()?;
    let y = it.next()?.parse().ok()?;
    let z = it.next()?.parse().ok()?;
    Some([x, y, z])
}

/// Binary little-endian PLY with double positions and normals.
pub fn write_ply(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property double nx\nproperty double ny\nproperty double nz\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    )
    .into_bytes();
    for (p, n) in mesh.vertices().iter().zip(mesh.normals()) {
        for v in [p.x, p.y, p.z, n.x, n.y, n.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for f in mesh.faces() {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::format(path, "missing end_header"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::format(path, "header is not utf-8"))?;
    let mut elements: Vec<Element> = Vec::new();
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::format(path, "not a ply file"));
    }
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => {
                return Err(Error::format(path, format!("unsupported format {other}")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::format(path, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format(path, "property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| Error::format(path, "bad list type"))?;
                let it = Scalar::parse(it).ok_or_else(|| Error::format(path, "bad list type"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format(path, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| Error::format(path, "bad property type"))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => {}
        }
    }

    let mut pos = header_end;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(path, "truncated body"))?;
        pos += n;
        Ok(s)
    };
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut nrm = [0.0; 3];
            let mut has_normal = false;
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = ty.read(take(ty.size())?);
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "nx" => (nrm[0], has_normal) = (v, true),
                            "ny" => nrm[1] = v,
                            "nz" => nrm[2] = v,
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = ct.read(take(ct.size())?) as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(it.read(take(it.size())?) as usize);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            for k in 1..n.saturating_sub(1) {
                                faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Point3::from(xyz));
                if has_normal {
                    normals.push(Vec3::from(nrm));
                }
            }
        }
    }
    if normals.len() == vertices.len() && !normals.is_empty() {
        TriMesh::with_normals(vertices, faces, normals)
    } else {
        TriMesh::new(vertices, faces)
    }
}

/// Dispatches on extension (`.obj` or `.ply`).
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => read_obj(path),
        Some("ply") => read_ply(path),
        _ => Err(Error::format(path, "unknown mesh extension")),
    }
}
