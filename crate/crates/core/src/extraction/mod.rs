//! Surface extraction from the learned SDF: sparse truncated evaluation
//! near the input points, sign propagation into the blank remainder, and
//! Marching Cubes meshing.

mod grid;
mod marching;
mod tables;

pub use grid::{propagate_signs, select_active_cells, Cell, GridSpec, SdfGrid};
pub use marching::marching_cubes;

use rayon::prelude::*;

use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::geometry::{KdTree, TriangleMesh};
use crate::math::{Aabb, Vec3};
use crate::model::{build_pair, predict_pairs, ModelConfig};
use crate::sampling::PatchPair;

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    /// Per-axis sample count.
    pub grid_res: usize,
    /// Truncation distance in cells; the world-frame epsilon is this times
    /// the grid spacing.
    pub epsilon_cells: f64,
    /// Sign-propagation vote threshold (strict greater-than).
    pub confidence: usize,
    /// Evaluate every cell through the network instead of only those near
    /// the cloud; propagation is then unnecessary.
    pub dense: bool,
    pub max_propagation_iters: usize,
    /// Seed for the per-cell subsample draws.
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            grid_res: 128,
            epsilon_cells: 3.0,
            confidence: 13,
            dense: false,
            max_propagation_iters: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractionStats {
    /// Cells evaluated through the network / total cells.
    pub evaluated_fraction: f64,
    /// Sign-propagation passes (0 when dense).
    pub propagation_iterations: usize,
}

/// How many query cells each worker predicts per batch.
const PREDICT_CHUNK: usize = 64;

/// Reconstruct a mesh from a point cloud and frozen model parameters:
/// select grid samples within epsilon of the cloud, evaluate the network
/// there (clamped to [-epsilon, epsilon]), propagate signs into the blank
/// cells, and run Marching Cubes on the assembled truncated field.
pub fn reconstruct(
    cloud: &[Vec3],
    store: &ParamStore,
    model_cfg: &ModelConfig,
    ecfg: &ExtractionConfig,
) -> Result<(TriangleMesh, ExtractionStats)> {
    let tree = KdTree::build(cloud);
    let bbox = Aabb::from_points(cloud.iter().copied());
    let spec = GridSpec::cover(&bbox, ecfg.grid_res, ecfg.epsilon_cells + 1.0);
    let epsilon = ecfg.epsilon_cells * spec.spacing;

    let active: Vec<usize> = if ecfg.dense {
        (0..spec.total()).collect()
    } else {
        select_active_cells(&tree, &spec, epsilon)?
    };
    let evaluated_fraction = active.len() as f64 / spec.total() as f64;

    // each cell draws its subsample from a stream derived from the cell
    // index, so results are independent of evaluation order
    let predictions: Vec<(usize, f64)> = active
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| -> Result<Vec<(usize, f64)>> {
            let mut pairs: Vec<PatchPair> = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (i, j, k) = spec.coords(idx);
                let x = spec.point(i, j, k);
                let mut rng = crate::rng::stream_rng(ecfg.seed, &idx.to_string(), "sdf-cell");
                pairs.push(build_pair(&tree, x, model_cfg, &mut rng)?);
            }
            let preds = predict_pairs(store, model_cfg, &pairs)?;
            Ok(chunk
                .iter()
                .zip(preds)
                .map(|(&idx, p)| (idx, p.signed_world().clamp(-epsilon, epsilon)))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut sdf = SdfGrid::new(spec);
    for (idx, v) in predictions {
        sdf.cells[idx] = Cell::Known(v);
    }

    let propagation_iterations = if sdf.blank_count() > 0 {
        propagate_signs(&mut sdf, ecfg.confidence, ecfg.max_propagation_iters)?
    } else {
        0
    };

    let values = sdf.meshing_values(epsilon)?;
    let mesh = marching_cubes(&spec, &values, 0.0)?;
    Ok((
        mesh,
        ExtractionStats {
            evaluated_fraction,
            propagation_iterations,
        },
    ))
}
