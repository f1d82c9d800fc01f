//! Truncated SDF grid: sparse active-cell selection near the input cloud
//! and iterative sign propagation into the blank remainder.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::KdTree;
use crate::math::{Aabb, Vec3};

/// Cubic sample-grid geometry: `res^3` samples starting at `origin` with
/// uniform `spacing`.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub res: usize,
    pub origin: Vec3,
    pub spacing: f64,
}

impl GridSpec {
    /// Grid covering the box, expanded by `pad_cells` cells of margin on
    /// every side.
    pub fn cover(bbox: &Aabb, res: usize, pad_cells: f64) -> Self {
        assert!(res >= 2);
        let extent = bbox.extent();
        let longest = extent.x.max(extent.y).max(extent.z);
        let spacing = longest / (res as f64 - 1.0 - 2.0 * pad_cells);
        let center = bbox.center();
        let half = spacing * (res as f64 - 1.0) / 2.0;
        GridSpec {
            res,
            origin: center - Vec3::new(half, half, half),
            spacing,
        }
    }

    pub fn total(&self) -> usize {
        self.res * self.res * self.res
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.res + j) * self.res + k
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.res;
        let j = (idx / self.res) % self.res;
        let i = idx / (self.res * self.res);
        (i, j, k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                i as f64 * self.spacing,
                j as f64 * self.spacing,
                k as f64 * self.spacing,
            )
    }

    /// Truncation distance: three grid spacings unless overridden.
    pub fn default_epsilon(&self) -> f64 {
        3.0 * self.spacing
    }
}

/// One grid sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    /// Evaluated truncated signed distance, |value| <= epsilon.
    Known(f64),
    /// Sign filled in by propagation (+1 or -1).
    Propagated(i8),
    Blank,
}

pub struct SdfGrid {
    pub spec: GridSpec,
    pub cells: Vec<Cell>,
}

impl SdfGrid {
    pub fn new(spec: GridSpec) -> Self {
        let cells = vec![Cell::Blank; spec.total()];
        SdfGrid { spec, cells }
    }

    pub fn blank_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Blank).count()
    }

    /// Per-cell value for meshing: known cells keep their truncated
    /// distance, propagated cells become full-magnitude sentinels at
    /// +-epsilon. Errors if any cell is still blank.
    pub fn meshing_values(&self, epsilon: f64) -> Result<Vec<f64>> {
        self.cells
            .iter()
            .map(|c| match c {
                Cell::Known(v) => Ok(*v),
                Cell::Propagated(s) => Ok(*s as f64 * epsilon),
                Cell::Blank => Err(Error::PropagationDiverged(
                    "blank cell reached meshing".into(),
                )),
            })
            .collect()
    }
}

/// Indices of grid samples within `epsilon` of the nearest cloud point —
/// the cells whose SDF must actually be evaluated.
pub fn select_active_cells(tree: &KdTree, spec: &GridSpec, epsilon: f64) -> Result<Vec<usize>> {
    if tree.len() == 0 {
        return Err(Error::EmptyPointSet("active-cell selection".into()));
    }
    let active: Vec<usize> = (0..spec.total())
        .into_par_iter()
        .filter(|&idx| {
            let (i, j, k) = spec.coords(idx);
            let p = spec.point(i, j, k);
            tree.nearest_dist(p) <= epsilon
        })
        .collect();
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    Ok(active)
}

fn sign_of(c: &Cell) -> i32 {
    match c {
        Cell::Known(v) => {
            if *v >= 0.0 {
                1
            } else {
                -1
            }
        }
        Cell::Propagated(s) => *s as i32,
        Cell::Blank => 0,
    }
}

/// Iteratively assign signs to blank cells. Each pass computes, for every
/// blank cell, the sum of signs of its non-blank 3^3 neighbors (center
/// excluded) against the previous pass's state, and assigns the response's
/// sign wherever |response| exceeds the confidence threshold. Once the
/// strict threshold stalls with blanks remaining, the working threshold is
/// lowered by 2 per stalled pass so isolated fronts keep advancing; cells
/// assigned once are never revisited. Returns the number of passes.
pub fn propagate_signs(grid: &mut SdfGrid, threshold: usize, max_iters: usize) -> Result<usize> {
    let res = grid.spec.res as isize;
    let mut working_threshold = threshold as i32;
    let mut iters = 0;
    while grid.blank_count() > 0 {
        if iters >= max_iters {
            return Err(Error::PropagationDiverged(format!(
                "{} blank cells after {iters} passes",
                grid.blank_count()
            )));
        }
        iters += 1;
        let prev = grid.cells.clone();
        let spec = grid.spec;
        let next: Vec<Cell> = (0..prev.len())
            .into_par_iter()
            .map(|idx| {
                if prev[idx] != Cell::Blank {
                    return prev[idx];
                }
                let (i, j, k) = spec.coords(idx);
                let mut response = 0i32;
                for di in -1..=1isize {
                    for dj in -1..=1isize {
                        for dk in -1..=1isize {
                            if di == 0 && dj == 0 && dk == 0 {
                                continue;
                            }
                            let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
                            if ni < 0 || nj < 0 || nk < 0 || ni >= res || nj >= res || nk >= res {
                                continue;
                            }
                            response += sign_of(
                                &prev[spec.index(ni as usize, nj as usize, nk as usize)],
                            );
                        }
                    }
                }
                if response.abs() > working_threshold {
                    Cell::Propagated(if response > 0 { 1 } else { -1 })
                } else {
                    Cell::Blank
                }
            })
            .collect();
        let changed = next != grid.cells;
        grid.cells = next;
        if !changed {
            // strict votes can stall on flat fronts (a planar layer offers
            // only 9 of 26 neighbors); relax gradually rather than giving up
            if working_threshold == 0 {
                if grid.blank_count() == grid.cells.len() {
                    return Err(Error::PropagationDiverged(
                        "no known cells to propagate from".into(),
                    ));
                }
                // the only survivors at threshold 0 are exact vote ties
                // between mixed-sign fronts; resolve them as outside, the
                // same tie-break the sign head uses at zero logits
                for c in &mut grid.cells {
                    if *c == Cell::Blank {
                        *c = Cell::Propagated(1);
                    }
                }
                continue;
            }
            working_threshold = (working_threshold - 2).max(0);
        }
    }
    Ok(iters)
}
