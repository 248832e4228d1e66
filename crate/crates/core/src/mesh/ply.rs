//! PLY reader/writer. Writes binary little-endian; reads ASCII and binary
//! little-endian files with `x y z` vertices and list faces.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};

pub fn write_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(64 + mesh.vertices.len() * 24 + mesh.faces.len() * 13);
    let normals = mesh.normals.as_ref();
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\ncomment units: scene units, right-handed\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        mesh.vertices.len()
    )
    .expect("in-memory write");
    if normals.is_some() {
        out.extend_from_slice(b"property double nx\nproperty double ny\nproperty double nz\n");
    }
    write!(
        out,
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.faces.len()
    )
    .expect("in-memory write");
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(n) = normals {
            for c in n[i] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for i in f {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    let tmp = path.with_extension("ply.tmp");
    fs::write(&tmp, &out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Kind {
    fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "char" | "int8" => Kind::I8,
            "uchar" | "uint8" => Kind::U8,
            "short" | "int16" => Kind::I16,
            "ushort" | "uint16" => Kind::U16,
            "int" | "int32" => Kind::I32,
            "uint" | "uint32" => Kind::U32,
            "float" | "float32" => Kind::F32,
            "double" | "float64" => Kind::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Kind::I8 | Kind::U8 => 1,
            Kind::I16 | Kind::U16 => 2,
            Kind::I32 | Kind::U32 | Kind::F32 => 4,
            Kind::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Kind::I8 => b[0] as i8 as f64,
            Kind::U8 => b[0] as f64,
            Kind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Kind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Kind::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Kind),
    List(String, Kind, Kind),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn read_ply(path: &Path) -> Result<TriMesh> {
    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let read_line = |reader: &mut BufReader<fs::File>, line: &mut String| -> Result<()> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Validation(format!("{}: truncated PLY header", path.display())));
        }
        Ok(())
    };
    read_line(&mut reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut binary = false;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        read_line(&mut reader, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => binary = false,
            ["format", "binary_little_endian", _] => binary = true,
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let (c, i) = (Kind::parse(c), Kind::parse(i));
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                match (c, i) {
                    (Some(c), Some(i)) => el.props.push(Property::List(name.to_string(), c, i)),
                    _ => return Err(bad(format!("bad list property {name}"))),
                }
            }
            ["property", kind, name] => {
                let k = Kind::parse(kind).ok_or_else(|| bad(format!("unknown type {kind}")))?;
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                el.props.push(Property::Scalar(name.to_string(), k));
            }
            ["end_header"] => break,
            _ => return Err(bad(format!("unexpected header line '{}'", line.trim()))),
        }
    }
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let mut source = if binary {
        Source::Binary { data: &body, pos: 0 }
    } else {
        let text = std::str::from_utf8(&body).map_err(|_| bad("ASCII body is not UTF-8".into()))?;
        Source::Ascii(text.split_ascii_whitespace())
    };
    let mut mesh = TriMesh::default();
    let mut normals = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut v = [0.0; 3];
            let mut n = [0.0; 3];
            let mut has_normal = false;
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, kind) => {
                        let value = source.next(*kind).ok_or_else(|| bad("truncated body".into()))?;
                        match name.as_str() {
                            "x" => v[0] = value,
                            "y" => v[1] = value,
                            "z" => v[2] = value,
                            "nx" => (n[0], has_normal) = (value, true),
                            "ny" => n[1] = value,
                            "nz" => n[2] = value,
                            _ => {}
                        }
                    }
                    Property::List(name, count_kind, item_kind) => {
                        let count = source.next(*count_kind).ok_or_else(|| bad("truncated body".into()))? as usize;
                        let mut items = Vec::with_capacity(count);
                        for _ in 0..count {
                            items.push(source.next(*item_kind).ok_or_else(|| bad("truncated body".into()))? as u32);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            // Fan-triangulate polygons.
                            for k in 1..items.len().saturating_sub(1) {
                                mesh.faces.push([items[0], items[k], items[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                mesh.vertices.push(v);
                if has_normal {
                    normals.push(n);
                }
            }
        }
    }
    if !normals.is_empty() && normals.len() == mesh.vertices.len() {
        mesh.normals = Some(normals);
    }
    mesh.validate().map_err(|e| bad(e.to_string()))?;
    Ok(mesh)
}

enum Source<'a> {
    Binary { data: &'a [u8], pos: usize },
    Ascii(std::str::SplitAsciiWhitespace<'a>),
}

impl Source<'_> {
    fn next(&mut self, kind: Kind) -> Option<f64> {
        match self {
            Source::Binary { data, pos } => {
                let end = *pos + kind.size();
                let bytes = data.get(*pos..end)?;
                *pos = end;
                Some(kind.decode(bytes))
            }
            Source::Ascii(it) => it.next()?.parse().ok(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Aabb;

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("box.ply");
        let mut m = TriMesh::cuboid(&Aabb::centered([0.1, 0.2, 0.3], [1.0, 0.5, 0.25]), 2, false);
        m.normals = Some(vec![[0.0, 0.0, 1.0]; m.vertices.len()]);
        write_ply(&m, &path).unwrap();
        assert_eq!(read_ply(&path).unwrap(), m);
    }

    #[test]
    fn reads_ascii_with_quads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_index\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
        )
        .unwrap();
        let m = read_ply(&path).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!((m.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_face_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n",
        )
        .unwrap();
        assert!(read_ply(&path).is_err());
    }
}
