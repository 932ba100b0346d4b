//! Square tiling of per-block measurement vectors into a 2-D plane.
//!
//! Block `(i, j)` occupies the `t x t` tile at `(i*t, j*t)` where
//! `t = ceil(sqrt(n_B))`. Its measurements fill the tile in raster order;
//! the `t^2 - n_B` trailing cells repeat the last filled value.

use crate::error::{Error, Result};
use crate::sampling::BlockMeasurements;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneGeometry {
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub n_b: usize,
}

impl PlaneGeometry {
    pub fn new(grid_cols: usize, grid_rows: usize, n_b: usize) -> Result<Self> {
        if grid_cols == 0 || grid_rows == 0 || n_b == 0 {
            return Err(Error::BadPlaneShape(format!(
                "grid {grid_cols}x{grid_rows} with {n_b} measurements"
            )));
        }
        Ok(PlaneGeometry {
            grid_cols,
            grid_rows,
            n_b,
        })
    }

    pub fn of(bm: &BlockMeasurements) -> Self {
        PlaneGeometry {
            grid_cols: bm.grid_cols,
            grid_rows: bm.grid_rows,
            n_b: bm.n_b,
        }
    }

    pub fn tile_side(&self) -> usize {
        tile_side(self.n_b)
    }

    pub fn width(&self) -> usize {
        self.grid_cols * self.tile_side()
    }

    pub fn height(&self) -> usize {
        self.grid_rows * self.tile_side()
    }

    pub fn cell_count(&self) -> usize {
        self.width() * self.height()
    }
}

/// Smallest `t` with `t^2 >= n`.
pub fn tile_side(n: usize) -> usize {
    let mut t = (n as f64).sqrt() as usize;
    while t * t < n {
        t += 1;
    }
    while t > 0 && (t - 1) * (t - 1) >= n {
        t -= 1;
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPlane {
    geometry: PlaneGeometry,
    values: Vec<f64>,
}

impl MeasurementPlane {
    pub fn new(geometry: PlaneGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.cell_count() {
            return Err(Error::BadPlaneShape(format!(
                "{} values for a {}x{} plane",
                values.len(),
                geometry.width(),
                geometry.height()
            )));
        }
        Ok(MeasurementPlane { geometry, values })
    }

    pub fn geometry(&self) -> PlaneGeometry {
        self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width()
    }

    pub fn height(&self) -> usize {
        self.geometry.height()
    }

    pub fn tile_side(&self) -> usize {
        self.geometry.tile_side()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width() + col]
    }

    /// Plane index of measurement `cell` (raster index inside the tile) of
    /// block `(block_row, block_col)`.
    #[inline]
    fn cell_index(g: &PlaneGeometry, block_row: usize, block_col: usize, cell: usize) -> usize {
        let t = g.tile_side();
        (block_row * t + cell / t) * g.width() + block_col * t + cell % t
    }
}

/// Arranges each block's vector into its tile and pads the remainder.
pub fn tile_measurements(bm: &BlockMeasurements) -> Result<MeasurementPlane> {
    let g = PlaneGeometry::new(bm.grid_cols, bm.grid_rows, bm.n_b)?;
    if bm.values.len() != bm.block_count() * bm.n_b {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {} blocks of {}",
            bm.values.len(),
            bm.block_count(),
            bm.n_b
        )));
    }
    let t = g.tile_side();
    let mut values = vec![0.0; g.cell_count()];
    for br in 0..g.grid_rows {
        for bc in 0..g.grid_cols {
            let y = bm.block(br, bc);
            for cell in 0..t * t {
                values[MeasurementPlane::cell_index(&g, br, bc, cell)] = y[cell.min(g.n_b - 1)];
            }
        }
    }
    Ok(MeasurementPlane {
        geometry: g,
        values,
    })
}

/// Adjoint of [`tile_measurements`]: padding-cell gradients flow into the
/// last real measurement they copy.
pub fn tile_backward(grad: &MeasurementPlane) -> BlockMeasurements {
    let g = grad.geometry;
    let t = g.tile_side();
    let mut out = BlockMeasurements::zeros(g.grid_cols, g.grid_rows, g.n_b);
    for br in 0..g.grid_rows {
        for bc in 0..g.grid_cols {
            let y = out.block_mut(br, bc);
            for cell in 0..t * t {
                y[cell.min(g.n_b - 1)] += grad.values[MeasurementPlane::cell_index(&g, br, bc, cell)];
            }
        }
    }
    out
}

/// Reads the measurements back out of their tiles, ignoring padding.
pub fn untile_measurements(plane: &MeasurementPlane) -> Result<BlockMeasurements> {
    let g = plane.geometry;
    let t = g.tile_side();
    if plane.width() % t != 0 || plane.height() % t != 0 || plane.values.len() != g.cell_count() {
        return Err(Error::BadPlaneShape(format!(
            "{}x{} plane with tile side {t}",
            plane.width(),
            plane.height()
        )));
    }
    let mut out = BlockMeasurements::zeros(g.grid_cols, g.grid_rows, g.n_b);
    for br in 0..g.grid_rows {
        for bc in 0..g.grid_cols {
            let y = out.block_mut(br, bc);
            for (cell, v) in y.iter_mut().enumerate() {
                *v = plane.values[MeasurementPlane::cell_index(&g, br, bc, cell)];
            }
        }
    }
    Ok(out)
}
