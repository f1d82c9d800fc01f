//! File formats: OBJ and PLY meshes, PLY point clouds, line-delimited
//! key-value records.

pub mod manifest;
pub mod obj;
pub mod ply;

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

/// Load a mesh by extension (`.obj`, `.ply`). Indices are validated and the
/// watertightness flag is computed on load.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => obj::read_obj(path),
        Some("ply") => ply::read_ply_mesh(path),
        other => Err(Error::Parse {
            path: path.display().to_string(),
            msg: format!("unsupported mesh format: {other:?}"),
        }),
    }
}

/// Write a mesh by extension (`.obj` ASCII, `.ply` binary little-endian).
pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => obj::write_obj(path, mesh),
        Some("ply") => ply::write_ply_mesh_binary(path, mesh),
        other => Err(Error::Parse {
            path: path.display().to_string(),
            msg: format!("unsupported mesh format: {other:?}"),
        }),
    }
}
