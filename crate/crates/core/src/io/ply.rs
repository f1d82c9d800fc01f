//! PLY reading (ASCII and binary little-endian) and writing.
//!
//! Meshes: vertex x/y/z plus face vertex_indices, fan-triangulated.
//! Point clouds: ASCII with x,y,z and optional nx,ny,nz.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<ScalarType> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_f64(self, buf: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => buf[0] as i8 as f64,
            ScalarType::U8 => buf[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count_ty: ScalarType, item_ty: ScalarType },
}

#[derive(Debug, Clone)]
struct ElementDef {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<ElementDef>,
}

fn parse_header<R: BufRead>(reader: &mut R, path: &Path) -> Result<Header> {
    let perr = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(perr("missing ply magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(perr("unterminated header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["comment", ..] | [] => {}
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", f, _] => return Err(perr(format!("unsupported format {f}"))),
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|e| perr(format!("bad element count: {e}")))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count_ty, item_ty, _name] => {
                let count_ty = ScalarType::parse(count_ty)
                    .ok_or_else(|| perr(format!("bad list count type {count_ty}")))?;
                let item_ty = ScalarType::parse(item_ty)
                    .ok_or_else(|| perr(format!("bad list item type {item_ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| perr("property before element".into()))?
                    .props
                    .push(Property::List { count_ty, item_ty });
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| perr(format!("bad property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| perr("property before element".into()))?
                    .props
                    .push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
            }
            ["end_header"] => break,
            other => return Err(perr(format!("bad header line: {other:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| perr("missing format line".into()))?,
        elements,
    })
}

/// Parsed PLY contents: vertex positions and (possibly empty) triangle list.
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let file = std::fs::File::open(path)?;
    let mut reader = std::io::BufReader::new(file);
    let header = parse_header(&mut reader, path)?;
    let perr = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for elem in &header.elements {
        let is_vertex = elem.name == "vertex";
        let is_face = elem.name == "face";
        // locate x/y/z among scalar properties
        let mut xyz_pos = [usize::MAX; 3];
        for (i, p) in elem.props.iter().enumerate() {
            if let Property::Scalar { name, .. } = p {
                match name.as_str() {
                    "x" => xyz_pos[0] = i,
                    "y" => xyz_pos[1] = i,
                    "z" => xyz_pos[2] = i,
                    _ => {}
                }
            }
        }
        if is_vertex && xyz_pos.contains(&usize::MAX) {
            return Err(perr("vertex element missing x/y/z".into()));
        }

        for _ in 0..elem.count {
            let mut scalars: Vec<f64> = Vec::with_capacity(elem.props.len());
            let mut list: Vec<usize> = Vec::new();
            match header.format {
                Format::Ascii => {
                    let mut line = String::new();
                    loop {
                        line.clear();
                        if reader.read_line(&mut line)? == 0 {
                            return Err(perr("unexpected EOF".into()));
                        }
                        if !line.trim().is_empty() {
                            break;
                        }
                    }
                    let mut toks = line.split_whitespace();
                    for p in &elem.props {
                        match p {
                            Property::Scalar { .. } => {
                                let v: f64 = toks
                                    .next()
                                    .ok_or_else(|| perr("short row".into()))?
                                    .parse()
                                    .map_err(|e| perr(format!("{e}")))?;
                                scalars.push(v);
                            }
                            Property::List { .. } => {
                                let n: usize = toks
                                    .next()
                                    .ok_or_else(|| perr("short row".into()))?
                                    .parse()
                                    .map_err(|e| perr(format!("{e}")))?;
                                for _ in 0..n {
                                    let v: usize = toks
                                        .next()
                                        .ok_or_else(|| perr("short list".into()))?
                                        .parse()
                                        .map_err(|e| perr(format!("{e}")))?;
                                    list.push(v);
                                }
                            }
                        }
                    }
                }
                Format::BinaryLe => {
                    for p in &elem.props {
                        match p {
                            Property::Scalar { ty, .. } => {
                                let mut buf = [0u8; 8];
                                reader.read_exact(&mut buf[..ty.size()])?;
                                scalars.push(ty.read_f64(&buf));
                            }
                            Property::List { count_ty, item_ty } => {
                                let mut buf = [0u8; 8];
                                reader.read_exact(&mut buf[..count_ty.size()])?;
                                let n = count_ty.read_f64(&buf) as usize;
                                for _ in 0..n {
                                    reader.read_exact(&mut buf[..item_ty.size()])?;
                                    list.push(item_ty.read_f64(&buf) as usize);
                                }
                            }
                        }
                    }
                }
            }
            if is_vertex {
                // scalar index -> position among scalars only
                let mut scalar_idx = vec![usize::MAX; elem.props.len()];
                let mut k = 0;
                for (i, p) in elem.props.iter().enumerate() {
                    if matches!(p, Property::Scalar { .. }) {
                        scalar_idx[i] = k;
                        k += 1;
                    }
                }
                vertices.push(Vec3::new(
                    scalars[scalar_idx[xyz_pos[0]]],
                    scalars[scalar_idx[xyz_pos[1]]],
                    scalars[scalar_idx[xyz_pos[2]]],
                ));
            } else if is_face {
                if list.len() < 3 {
                    return Err(perr("face with < 3 vertices".into()));
                }
                for k in 1..list.len() - 1 {
                    triangles.push([list[0], list[k], list[k + 1]]);
                }
            }
        }
    }
    Ok(PlyData { vertices, triangles })
}

pub fn read_ply_mesh(path: &Path) -> Result<TriangleMesh> {
    let data = read_ply(path)?;
    TriangleMesh::new(data.vertices, data.triangles)
}

pub fn read_ply_points(path: &Path) -> Result<Vec<Vec3>> {
    Ok(read_ply(path)?.vertices)
}

/// ASCII PLY point cloud with optional per-point normals.
pub fn write_ply_points(path: &Path, points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
    if let Some(n) = normals {
        assert_eq!(n.len(), points.len());
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if normals.is_some() {
        writeln!(w, "property double nx")?;
        writeln!(w, "property double ny")?;
        writeln!(w, "property double nz")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in points.iter().enumerate() {
        match normals {
            Some(ns) => {
                let n = ns[i];
                writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?
            }
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Binary little-endian PLY mesh.
pub fn write_ply_mesh_binary(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    for v in &mesh.vertices {
        w.write_all(&v.x.to_le_bytes())?;
        w.write_all(&v.y.to_le_bytes())?;
        w.write_all(&v.z.to_le_bytes())?;
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as u32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
