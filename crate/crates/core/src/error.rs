use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("ambiguous inside/outside sign at ({x}, {y}, {z}) (winding number {w})")]
    AmbiguousSign { x: f64, y: f64, z: f64, w: f64 },

    #[error("point cloud has {have} points, need at least {need}")]
    CloudTooSmall { have: usize, need: usize },

    #[error("empty point set: {0}")]
    EmptyPointSet(String),

    #[error("degenerate patch: all local points coincide with the query point")]
    DegeneratePatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch normalization requires batch size >= 2 in train mode, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("sign propagation did not converge: {0}")]
    PropagationDiverged(String),

    #[error("empty active cell set: point cloud does not overlap the grid")]
    EmptyActiveSet,

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
