//! Triangle meshes as OBJ or PLY, and `NRM1` per-vertex normal sidecars.
//!
//! OBJ vertex colors use the common `v x y z r g b` extension; normals are
//! written one `vn` per vertex. PLY output is binary little-endian with
//! float normals and uchar colors; the reader also takes ASCII PLY.

use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use voxelmesh_core::math::Vec3;
use voxelmesh_core::TriMesh;

use super::{checked_len, expect_magic, load_with, read_f32s, read_u32, save_with, write_f32s};
use crate::error::{invalid, Error, Result};

pub const NRM_MAGIC: &[u8; 4] = b"NRM1";

pub fn write_obj(w: &mut impl Write, mesh: &TriMesh) -> io::Result<()> {
    writeln!(w, "# {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len())?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => writeln!(w, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[i].x, c[i].y, c[i].z)?,
            None => writeln!(w, "v {} {} {}", v.x, v.y, v.z)?,
        }
    }
    if let Some(n) = &mesh.normals {
        for n in n {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z)?;
        }
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if mesh.normals.is_some() {
            writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}")?;
        } else {
            writeln!(w, "f {a} {b} {c}")?;
        }
    }
    Ok(())
}

fn parse_floats<'a>(it: impl Iterator<Item = &'a str>, line: usize) -> io::Result<Vec<f64>> {
    it.map(|t| t.parse::<f64>().map_err(|_| invalid(format!("line {line}: bad number {t:?}")))).collect()
}

fn obj_index(token: &str, count: usize, line: usize) -> io::Result<usize> {
    let i: i64 = token.parse().map_err(|_| invalid(format!("line {line}: bad index {token:?}")))?;
    let idx = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || idx < 0 || idx as usize >= count {
        return Err(invalid(format!("line {line}: index {i} out of range")));
    }
    Ok(idx as usize)
}

pub fn read_obj(r: &mut impl BufRead) -> io::Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut vn = Vec::new();
    let mut faces = Vec::new();
    // (vertex, normal index) references from faces.
    let mut normal_refs = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let ln = ln + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let v = parse_floats(it, ln)?;
                if v.len() < 3 {
                    return Err(invalid(format!("line {ln}: vertex needs 3 coordinates")));
                }
                vertices.push(Vec3::new(v[0], v[1], v[2]));
                if v.len() >= 6 {
                    colors.push(Vec3::new(v[3], v[4], v[5]));
                }
            }
            Some("vn") => {
                let v = parse_floats(it, ln)?;
                if v.len() != 3 {
                    return Err(invalid(format!("line {ln}: normal needs 3 components")));
                }
                vn.push(Vec3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let v = obj_index(parts.next().unwrap_or(""), vertices.len(), ln)?;
                    let _texcoord = parts.next();
                    if let Some(n) = parts.next().filter(|s| !s.is_empty()) {
                        normal_refs.push((v, obj_index(n, vn.len(), ln)?));
                    }
                    poly.push(v as u32);
                }
                if poly.len() < 3 {
                    return Err(invalid(format!("line {ln}: face needs 3 vertices")));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    if !colors.is_empty() {
        if colors.len() != mesh.vertices.len() {
            return Err(invalid("vertex colors given for only some vertices"));
        }
        mesh.colors = Some(colors);
    }
    if !vn.is_empty() {
        let mut normals = if vn.len() == mesh.vertices.len() { vn.clone() } else { vec![Vec3::zeros(); mesh.vertices.len()] };
        for (v, n) in normal_refs {
            normals[v] = vn[n];
        }
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

pub fn write_ply(w: &mut impl Write, mesh: &TriMesh) -> io::Result<()> {
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if mesh.normals.is_some() {
        writeln!(w, "property float nx\nproperty float ny\nproperty float nz")?;
    }
    if mesh.colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    let mut buf = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        write_f32s(&mut buf, &[v.x, v.y, v.z])?;
        if let Some(n) = &mesh.normals {
            write_f32s(&mut buf, &[n[i].x, n[i].y, n[i].z])?;
        }
        if let Some(c) = &mesh.colors {
            for k in 0..3 {
                buf.push((c[i][k].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    for f in &mesh.faces {
        buf.push(3);
        for i in f {
            buf.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> io::Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(invalid(format!("unknown PLY type {other:?}"))),
        })
    }

    fn read_binary(self, r: &mut impl Read) -> io::Result<f64> {
        let mut b = [0u8; 8];
        Ok(match self {
            Scalar::I8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as i8 as f64
            }
            Scalar::U8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as f64
            }
            Scalar::I16 => {
                r.read_exact(&mut b[..2])?;
                i16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::U16 => {
                r.read_exact(&mut b[..2])?;
                u16::from_le_bytes([b[0], b[1]]) as f64
            }
            Scalar::I32 => {
                r.read_exact(&mut b[..4])?;
                i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::U32 => {
                r.read_exact(&mut b[..4])?;
                u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F32 => {
                r.read_exact(&mut b[..4])?;
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Scalar::F64 => {
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }

    fn is_integer_byte(self) -> bool {
        matches!(self, Scalar::U8 | Scalar::I8)
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Pulls whitespace-separated tokens from an ASCII PLY body.
struct Tokens<'a, R: BufRead> {
    r: &'a mut R,
    pending: std::vec::IntoIter<String>,
}

impl<R: BufRead> Tokens<'_, R> {
    fn next(&mut self) -> io::Result<f64> {
        loop {
            if let Some(t) = self.pending.next() {
                return t.parse().map_err(|_| invalid(format!("bad PLY value {t:?}")));
            }
            let mut line = String::new();
            if self.r.read_line(&mut line)? == 0 {
                return Err(invalid("PLY body ended early"));
            }
            self.pending = line.split_whitespace().map(str::to_owned).collect::<Vec<_>>().into_iter();
        }
    }
}

pub fn read_ply(r: &mut impl BufRead) -> io::Result<TriMesh> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(invalid("missing ply header"));
    }
    let mut ascii = false;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(invalid("PLY header not terminated"));
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", "binary_little_endian", _] => ascii = false,
            ["format", other, _] => return Err(invalid(format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: checked_len(count.parse().map_err(|_| invalid("bad element count"))?, 1 << 30)?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => elements
                .last_mut()
                .ok_or_else(|| invalid("property before element"))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(ct)?, Scalar::parse(it)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| invalid("property before element"))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            ["end_header"] => break,
            _ => {}
        }
    }

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut tokens = Tokens { r, pending: Vec::new().into_iter() };
    for el in &elements {
        for _ in 0..el.count {
            let mut named = std::collections::HashMap::new();
            let mut color_is_byte = false;
            let mut list: Vec<u32> = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = if ascii { tokens.next()? } else { ty.read_binary(tokens.r)? };
                        if name == "red" {
                            color_is_byte = ty.is_integer_byte();
                        }
                        named.insert(name.as_str(), v);
                    }
                    Property::List(name, ct, it) => {
                        let n = if ascii { tokens.next()? } else { ct.read_binary(tokens.r)? } as usize;
                        let mut items = Vec::with_capacity(n.min(64));
                        for _ in 0..n {
                            let v = if ascii { tokens.next()? } else { it.read_binary(tokens.r)? };
                            items.push(v);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            list = items.iter().map(|v| *v as u32).collect();
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let get = |k: &str| named.get(k).copied();
                    let (Some(x), Some(y), Some(z)) = (get("x"), get("y"), get("z")) else {
                        return Err(invalid("vertex without x/y/z"));
                    };
                    vertices.push(Vec3::new(x, y, z));
                    if let (Some(a), Some(b), Some(c)) = (get("nx"), get("ny"), get("nz")) {
                        normals.push(Vec3::new(a, b, c));
                    }
                    if let (Some(a), Some(b), Some(c)) = (get("red"), get("green"), get("blue")) {
                        let s = if color_is_byte { 1.0 / 255.0 } else { 1.0 };
                        colors.push(Vec3::new(a, b, c) * s);
                    }
                }
                "face" => {
                    if list.len() < 3 {
                        return Err(invalid("face with fewer than 3 vertices"));
                    }
                    for k in 1..list.len() - 1 {
                        faces.push([list[0], list[k], list[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    if faces.iter().flatten().any(|i| *i as usize >= vertices.len()) {
        return Err(invalid("face index out of range"));
    }
    let n = vertices.len();
    let mut mesh = TriMesh::new(vertices, faces);
    if normals.len() == n && n > 0 {
        mesh.normals = Some(normals);
    }
    if colors.len() == n && n > 0 {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

pub fn write_normals(w: &mut impl Write, normals: &[Vec3]) -> io::Result<()> {
    w.write_all(NRM_MAGIC)?;
    w.write_all(&(normals.len() as u32).to_le_bytes())?;
    let flat: Vec<f64> = normals.iter().flat_map(|n| [n.x, n.y, n.z]).collect();
    write_f32s(w, &flat)
}

pub fn read_normals(r: &mut impl Read) -> io::Result<Vec<Vec3>> {
    expect_magic(r, NRM_MAGIC)?;
    let n = checked_len(read_u32(r)? as u64, 1 << 28)?;
    let flat = read_f32s(r, n * 3)?;
    Ok(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Writes OBJ or PLY depending on the extension.
pub fn save_mesh(path: &Path, mesh: &TriMesh) -> Result<()> {
    match extension(path).as_str() {
        "obj" => save_with(path, |w| write_obj(w, mesh)),
        "ply" => save_with(path, |w| write_ply(w, mesh)),
        other => Err(Error::Usage(format!("{}: unsupported mesh extension {other:?} (use .obj or .ply)", path.display()))),
    }
}

pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    match extension(path).as_str() {
        "obj" => load_with(path, |r| read_obj(r)),
        "ply" => load_with(path, |r| read_ply(r)),
        other => Err(Error::Usage(format!("{}: unsupported mesh extension {other:?} (use .obj or .ply)", path.display()))),
    }
}

pub fn save_normals(path: &Path, normals: &[Vec3]) -> Result<()> {
    save_with(path, |w| write_normals(w, normals))
}

pub fn load_normals(path: &Path) -> Result<Vec<Vec3>> {
    load_with(path, read_normals)
}
