//! Prediction-based measurement coding, the ablation baseline.
//!
//! Each block's vector is predicted by the reconstructed vector of its left
//! neighbour (mid-gray for the first column), the residual is uniformly
//! quantized, and the rate is the empirical first-order entropy of the
//! quantized symbols.

use std::collections::HashMap;

use super::rate::RatePoint;
use crate::error::{Error, Result};
use crate::sampling::BlockMeasurements;

pub const FIRST_COLUMN_PREDICTION: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct DpcmOutcome {
    pub rate: RatePoint,
    pub decoded: BlockMeasurements,
    /// Quantized residual symbols in block raster order.
    pub symbols: Vec<i32>,
}

pub fn dpcm_rate_estimate(
    bm: &BlockMeasurements,
    step: f64,
    pixel_count: u64,
) -> Result<DpcmOutcome> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidConfig(format!("dpcm step {step} must be positive")));
    }
    let mut decoded = BlockMeasurements::zeros(bm.grid_cols, bm.grid_rows, bm.n_b);
    let mut symbols = Vec::with_capacity(bm.values.len());
    let mut pred = vec![0.0; bm.n_b];
    for br in 0..bm.grid_rows {
        pred.fill(FIRST_COLUMN_PREDICTION);
        for bc in 0..bm.grid_cols {
            let y = bm.block(br, bc);
            let out = decoded.block_mut(br, bc);
            for k in 0..bm.n_b {
                let s = ((y[k] - pred[k]) / step).round();
                let s = s.clamp(i32::MIN as f64, i32::MAX as f64) as i32;
                symbols.push(s);
                out[k] = pred[k] + f64::from(s) * step;
            }
            pred.copy_from_slice(out);
        }
    }
    let bits = entropy_bits(&symbols);
    Ok(DpcmOutcome {
        rate: RatePoint::new(bits, pixel_count),
        decoded,
        symbols,
    })
}

/// Inverse DPCM from symbols, used when decoding a container.
pub fn dpcm_decode(
    symbols: &[i32],
    step: f64,
    grid_cols: usize,
    grid_rows: usize,
    n_b: usize,
) -> Result<BlockMeasurements> {
    if symbols.len() != grid_cols * grid_rows * n_b {
        return Err(Error::CorruptContainer(format!(
            "{} dpcm symbols for {}x{} blocks of {}",
            symbols.len(),
            grid_cols,
            grid_rows,
            n_b
        )));
    }
    let mut out = BlockMeasurements::zeros(grid_cols, grid_rows, n_b);
    let mut pred = vec![0.0; n_b];
    let mut it = symbols.iter();
    for br in 0..grid_rows {
        pred.fill(FIRST_COLUMN_PREDICTION);
        for bc in 0..grid_cols {
            let y = out.block_mut(br, bc);
            for k in 0..n_b {
                y[k] = pred[k] + f64::from(*it.next().expect("length checked")) * step;
            }
            pred.copy_from_slice(y);
        }
    }
    Ok(out)
}

/// `N * H(symbols)` with `H` the empirical first-order entropy in bits.
pub fn entropy_bits(symbols: &[i32]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    let mut hist: HashMap<i32, u64> = HashMap::new();
    for &s in symbols {
        *hist.entry(s).or_default() += 1;
    }
    let n = symbols.len() as f64;
    let mut counts: Vec<u64> = hist.into_values().collect();
    // fixed summation order keeps the estimate reproducible
    counts.sort_unstable();
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h * n
}
