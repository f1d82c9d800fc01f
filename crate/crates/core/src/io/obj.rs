//! ASCII OBJ reading and writing (triangles only; polygons are
//! fan-triangulated on load).

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::math::Vec3;

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let perr = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut coord = |what: &str| -> Result<f64> {
                    tok.next()
                        .ok_or_else(|| perr(format!("line {}: missing {what}", lineno + 1)))?
                        .parse::<f64>()
                        .map_err(|e| perr(format!("line {}: {e}", lineno + 1)))
                };
                let x = coord("x")?;
                let y = coord("y")?;
                let z = coord("z")?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    // "v", "v/vt", "v//vn", "v/vt/vn"
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|e| perr(format!("line {}: {e}", lineno + 1)))?;
                    let resolved = if i > 0 {
                        (i - 1) as usize
                    } else if i < 0 {
                        let n = vertices.len() as i64 + i;
                        if n < 0 {
                            return Err(perr(format!("line {}: bad relative index", lineno + 1)));
                        }
                        n as usize
                    } else {
                        return Err(perr(format!("line {}: zero index", lineno + 1)));
                    };
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(perr(format!("line {}: face with < 3 vertices", lineno + 1)));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {} // vn, vt, o, g, usemtl, ... ignored
        }
    }
    if vertices.is_empty() {
        return Err(perr("no vertices".into()));
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| match e {
        Error::Parse { msg, .. } => perr(msg),
        other => other,
    })
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}
