//! BEV grid geometry and sparse per-cell storage.
//!
//! A scene is rasterized top-down into `H x W` cells of `cell_size` meters.
//! Cell indices are row-major (`l = row * W + col`), and that bijection is
//! shared verbatim by the wire format. Sparse maps store only nonzero cells
//! in index order; an absent cell is semantically a zero vector (features)
//! or zero utility.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid geometry: cell counts, feature channel count, and cell edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Rows.
    pub h: u16,
    /// Columns.
    pub w: u16,
    /// Feature channels per cell.
    pub c: u16,
    /// Meters per cell edge.
    pub cell_size: f64,
}

impl GridSpec {
    pub fn new(h: u16, w: u16, c: u16, cell_size: f64) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be at least 1 (got h={h}, w={w}, c={c})"
            )));
        }
        if cell_size.is_nan() || cell_size <= 0.0 {
            return Err(Error::invalid(format!(
                "cell_size must be positive (got {cell_size})"
            )));
        }
        Ok(GridSpec { h, w, c, cell_size })
    }

    /// Total number of cells `L = H * W`.
    pub fn num_cells(&self) -> u32 {
        self.h as u32 * self.w as u32
    }

    /// Feature dimension as a usize for vector allocation.
    pub fn channels(&self) -> usize {
        self.c as usize
    }

    /// Row-major cell index for `(row, col)`.
    pub fn cell_index(&self, row: u16, col: u16) -> Result<u32> {
        if row >= self.h || col >= self.w {
            return Err(Error::OutOfBounds(format!(
                "(row={row}, col={col}) outside {}x{} grid",
                self.h, self.w
            )));
        }
        Ok(row as u32 * self.w as u32 + col as u32)
    }

    /// Inverse of [`cell_index`](Self::cell_index).
    pub fn row_col(&self, l: u32) -> Result<(u16, u16)> {
        self.check_cell(l)?;
        Ok(((l / self.w as u32) as u16, (l % self.w as u32) as u16))
    }

    pub fn check_cell(&self, l: u32) -> Result<()> {
        if l >= self.num_cells() {
            return Err(Error::OutOfBounds(format!(
                "cell index {l} outside grid of {} cells",
                self.num_cells()
            )));
        }
        Ok(())
    }

    /// Center of cell `l` in meters, `(x, y)` with x along columns and
    /// y along rows.
    pub fn cell_center(&self, l: u32) -> Result<(f64, f64)> {
        let (row, col) = self.row_col(l)?;
        Ok((
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        ))
    }

    /// Cell containing the point `(x, y)` in meters, if inside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<u32> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let col = (x / self.cell_size) as u64;
        let row = (y / self.cell_size) as u64;
        if row >= self.h as u64 || col >= self.w as u64 {
            return None;
        }
        Some(row as u32 * self.w as u32 + col as u32)
    }

    /// Grid extent in meters, `(width_m, height_m)`.
    pub fn extent_m(&self) -> (f64, f64) {
        (
            self.w as f64 * self.cell_size,
            self.h as f64 * self.cell_size,
        )
    }
}

/// Per-agent sparse BEV feature map: cell index -> C-channel vector.
///
/// Entries are kept sorted by cell index with no duplicates. Vectors that
/// are exactly zero in every channel are never stored, so "absent" and
/// "zero" coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFeatureMap {
    pub grid: GridSpec,
    pub agent_id: u16,
    entries: BTreeMap<u32, Vec<f64>>,
}

impl SparseFeatureMap {
    pub fn new(grid: GridSpec, agent_id: u16) -> Self {
        SparseFeatureMap {
            grid,
            agent_id,
            entries: BTreeMap::new(),
        }
    }

    /// Insert or overwrite the feature vector at cell `l`.
    ///
    /// An all-zero vector removes the cell instead of storing it.
    pub fn insert(&mut self, l: u32, features: Vec<f64>) -> Result<()> {
        self.grid.check_cell(l)?;
        if features.len() != self.grid.channels() {
            return Err(Error::Dimension {
                expected: self.grid.channels(),
                got: features.len(),
            });
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature components must be finite (got {bad} at cell {l})"
            )));
        }
        if features.iter().all(|&v| v == 0.0) {
            self.entries.remove(&l);
        } else {
            self.entries.insert(l, features);
        }
        Ok(())
    }

    pub fn remove(&mut self, l: u32) {
        self.entries.remove(&l);
    }

    /// Stored vector at `l`, or the zero vector when absent.
    pub fn dense_lookup(&self, l: u32) -> Result<Vec<f64>> {
        self.grid.check_cell(l)?;
        Ok(self
            .entries
            .get(&l)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.grid.channels()]))
    }

    pub fn get(&self, l: u32) -> Option<&[f64]> {
        self.entries.get(&l).map(Vec::as_slice)
    }

    pub fn contains(&self, l: u32) -> bool {
        self.entries.contains_key(&l)
    }

    /// Number of stored (nonzero) cells.
    pub fn nonzero_cell_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterate entries in strictly increasing cell-index order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.entries.iter().map(|(&l, v)| (l, v.as_slice()))
    }

    pub fn cells(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    /// Materialize to a dense `L x C` array (row-major by cell index).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.grid.channels()]; self.grid.num_cells() as usize];
        for (l, v) in self.iter() {
            dense[l as usize].copy_from_slice(v);
        }
        dense
    }

    /// Rebuild a sparse map from a dense array, dropping exact-zero vectors.
    pub fn from_dense(grid: GridSpec, agent_id: u16, dense: &[Vec<f64>]) -> Result<Self> {
        if dense.len() != grid.num_cells() as usize {
            return Err(Error::Dimension {
                expected: grid.num_cells() as usize,
                got: dense.len(),
            });
        }
        let mut map = SparseFeatureMap::new(grid, agent_id);
        for (l, v) in dense.iter().enumerate() {
            map.insert(l as u32, v.clone())?;
        }
        Ok(map)
    }
}

/// Per-agent sparse scalar utility map: cell index -> utility.
///
/// Stored utilities are strictly positive; inserting a non-positive value
/// removes the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaUtilityMap {
    pub grid: GridSpec,
    pub agent_id: u16,
    entries: BTreeMap<u32, f64>,
}

impl MetaUtilityMap {
    pub fn new(grid: GridSpec, agent_id: u16) -> Self {
        MetaUtilityMap {
            grid,
            agent_id,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, l: u32, utility: f64) -> Result<()> {
        self.grid.check_cell(l)?;
        if utility.is_nan() || utility.is_infinite() {
            return Err(Error::invalid(format!(
                "utilities must be finite (got {utility} at cell {l})"
            )));
        }
        if utility > 0.0 {
            self.entries.insert(l, utility);
        } else {
            self.entries.remove(&l);
        }
        Ok(())
    }

    /// Utility at `l`; absent cells have utility zero.
    pub fn utility(&self, l: u32) -> f64 {
        self.entries.get(&l).copied().unwrap_or(0.0)
    }

    pub fn get(&self, l: u32) -> Option<f64> {
        self.entries.get(&l).copied()
    }

    pub fn nonzero_cell_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(&l, &u)| (l, u))
    }

    pub fn cells(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn max_utility(&self) -> Option<f64> {
        self.entries.values().copied().fold(None, |acc, u| {
            Some(match acc {
                Some(m) if m >= u => m,
                _ => u,
            })
        })
    }
}
