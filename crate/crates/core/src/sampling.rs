//! Local structural sampling.
//!
//! Each of the `n_B` filters of a block is a `B x B` matrix that is zero
//! outside one `L x L` window. The raw (trainable) weights are masked to the
//! window, squared and rescaled to sum to one, so every measurement is a
//! convex combination of the pixels it sees. Applying all filters to every
//! non-overlapping `B x B` block is a stride-`B` convolution without bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const DEFAULT_BLOCK_SIZE: usize = 32;
pub const DEFAULT_WINDOW_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub ratio: f64,
    pub block_size: usize,
    pub window_size: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(ratio: f64, block_size: usize, window_size: usize, seed: u64) -> Result<Self> {
        let cfg = SamplingConfig {
            ratio,
            block_size,
            window_size,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_ratio(ratio: f64) -> Result<Self> {
        Self::new(ratio, DEFAULT_BLOCK_SIZE, DEFAULT_WINDOW_SIZE, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ratio {} must lie in (0, 1]",
                self.ratio
            )));
        }
        if self.window_size == 0 || self.window_size > self.block_size {
            return Err(Error::InvalidConfig(format!(
                "window size {} must lie in [1, {}]",
                self.window_size, self.block_size
            )));
        }
        let n_b = self.measurement_count()?;
        let positions = self.window_positions();
        if n_b > positions {
            return Err(Error::TooManyFilters {
                filters: n_b,
                positions,
            });
        }
        Ok(())
    }

    pub fn measurement_count(&self) -> Result<usize> {
        derive_measurement_count(self.ratio, self.block_size)
    }

    /// Number of valid top-left window corners, `(B - L + 1)^2`.
    pub fn window_positions(&self) -> usize {
        let side = self.block_size + 1 - self.window_size;
        side * side
    }
}

/// `floor(R * B^2)`, rejecting configurations that keep nothing.
pub fn derive_measurement_count(ratio: f64, block_size: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) || block_size == 0 {
        return Err(Error::InvalidConfig(format!(
            "ratio {ratio} / block size {block_size}"
        )));
    }
    let area = (block_size * block_size) as f64;
    // absorb representation error such as 0.29 * 100 = 28.999999999999996
    let n = (ratio * area * (1.0 + 1e-12)).floor() as usize;
    let n = n.min(block_size * block_size);
    if n == 0 {
        return Err(Error::ZeroMeasurements { ratio, block_size });
    }
    Ok(n)
}

/// Window placement for every filter of a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    block_size: usize,
    window_size: usize,
    /// Top-left `(row, col)` of each filter's window.
    positions: Vec<(usize, usize)>,
}

/// Spreads `n_b` windows over the `P = (B - L + 1)^2` valid corners: filter
/// `k` (0-based) takes raster index `floor(k * P / n_b)`.
pub fn build_masks(block_size: usize, window_size: usize, n_b: usize) -> Result<MaskSet> {
    if window_size == 0 || window_size > block_size {
        return Err(Error::InvalidConfig(format!(
            "window size {window_size} for block size {block_size}"
        )));
    }
    let side = block_size + 1 - window_size;
    let p = side * side;
    if n_b > p {
        return Err(Error::TooManyFilters {
            filters: n_b,
            positions: p,
        });
    }
    if n_b == 0 {
        return Err(Error::ZeroMeasurements {
            ratio: 0.0,
            block_size,
        });
    }
    let positions = (0..n_b)
        .map(|k| {
            let idx = k * p / n_b;
            (idx / side, idx % side)
        })
        .collect();
    Ok(MaskSet {
        block_size,
        window_size,
        positions,
    })
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    /// Dense `B x B` 0/1 matrix of filter `k`, row-major.
    pub fn mask(&self, k: usize) -> Vec<u8> {
        let b = self.block_size;
        let l = self.window_size;
        let (r0, c0) = self.positions[k];
        let mut m = vec![0u8; b * b];
        for r in r0..r0 + l {
            m[r * b + c0..r * b + c0 + l].fill(1);
        }
        m
    }

    #[inline]
    fn contains(&self, k: usize, r: usize, c: usize) -> bool {
        let (r0, c0) = self.positions[k];
        (r0..r0 + self.window_size).contains(&r) && (c0..c0 + self.window_size).contains(&c)
    }
}

/// He-normal raw weights, one `B x B` matrix per filter, `fan_in = B^2`.
pub fn initialize_raw_weights(config: &SamplingConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n_b = config.measurement_count()?;
    let b2 = config.block_size * config.block_size;
    let std = (2.0 / b2 as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..n_b * b2).map(|_| normal.sample(&mut rng)).collect())
}

/// Elementwise product of the raw weights with their masks.
pub fn localize(raw: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
    let b = masks.block_size;
    let b2 = b * b;
    if raw.len() != masks.len() * b2 {
        return Err(Error::ShapeMismatch(format!(
            "{} raw weights for {} filters of {}x{}",
            raw.len(),
            masks.len(),
            b,
            b
        )));
    }
    let mut out = vec![0.0; raw.len()];
    for k in 0..masks.len() {
        let (r0, c0) = masks.positions[k];
        for r in r0..r0 + masks.window_size {
            let row = k * b2 + r * b;
            out[row + c0..row + c0 + masks.window_size]
                .copy_from_slice(&raw[row + c0..row + c0 + masks.window_size]);
        }
    }
    Ok(out)
}

/// Squares every entry and rescales each filter (a run of `filter_len`
/// values) to sum to one.
pub fn positive_normalize(masked: &[f64], filter_len: usize) -> Result<Vec<f64>> {
    if filter_len == 0 || masked.len() % filter_len != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} weights are not a whole number of {}-entry filters",
            masked.len(),
            filter_len
        )));
    }
    let mut out = Vec::with_capacity(masked.len());
    for (k, filter) in masked.chunks_exact(filter_len).enumerate() {
        let sum: f64 = filter.iter().map(|v| v * v).sum();
        if sum == 0.0 || !sum.is_finite() {
            return Err(Error::DegenerateFilter(k));
        }
        out.extend(filter.iter().map(|v| v * v / sum));
    }
    Ok(out)
}

/// Masks, raw weights and the derived non-negative, sum-to-one filters.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOperator {
    config: SamplingConfig,
    masks: MaskSet,
    raw_weights: Vec<f64>,
    normalized_weights: Vec<f64>,
    /// `n_B x L x L` copy of the normalized window entries.
    window_weights: Vec<f64>,
}

impl SamplingOperator {
    pub fn new(config: SamplingConfig) -> Result<Self> {
        let raw = initialize_raw_weights(&config)?;
        Self::from_raw(config, raw)
    }

    pub fn from_raw(config: SamplingConfig, raw_weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let n_b = config.measurement_count()?;
        let masks = build_masks(config.block_size, config.window_size, n_b)?;
        let mut op = SamplingOperator {
            config,
            masks,
            raw_weights,
            normalized_weights: Vec::new(),
            window_weights: Vec::new(),
        };
        op.refresh()?;
        Ok(op)
    }

    /// Re-derives the normalized filters after the raw weights changed.
    pub fn refresh(&mut self) -> Result<()> {
        let b2 = self.config.block_size * self.config.block_size;
        let masked = localize(&self.raw_weights, &self.masks)?;
        self.normalized_weights = positive_normalize(&masked, b2)?;
        let (b, l) = (self.config.block_size, self.config.window_size);
        self.window_weights.clear();
        for k in 0..self.masks.len() {
            let (r0, c0) = self.masks.positions[k];
            for r in 0..l {
                let base = k * b2 + (r0 + r) * b + c0;
                self.window_weights
                    .extend_from_slice(&self.normalized_weights[base..base + l]);
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &SamplingConfig {
        &self.config
    }

    pub fn masks(&self) -> &MaskSet {
        &self.masks
    }

    pub fn measurement_count(&self) -> usize {
        self.masks.len()
    }

    pub fn raw_weights(&self) -> &[f64] {
        &self.raw_weights
    }

    /// Mutable access for optimizers; call [`refresh`](Self::refresh) afterwards.
    pub fn raw_weights_mut(&mut self) -> &mut [f64] {
        &mut self.raw_weights
    }

    /// `n_B` row-major `B x B` filters. Row `k` flattened is row `k` of the
    /// block sampling matrix.
    pub fn normalized_weights(&self) -> &[f64] {
        &self.normalized_weights
    }

    pub fn window_weights(&self) -> &[f64] {
        &self.window_weights
    }

    /// Is entry `(r, c)` of filter `k` inside its window?
    pub fn in_window(&self, k: usize, r: usize, c: usize) -> bool {
        self.masks.contains(k, r, c)
    }

    /// Chains a gradient with respect to the normalized window entries
    /// (`n_B x L x L`) back to the dense raw weights. Entries outside the
    /// windows receive exactly zero.
    ///
    /// With `w_i = v_i^2 / s` and `s = sum v^2`:
    /// `dL/dv_j = (2 v_j / s) (g_j - sum_i g_i w_i)`.
    pub fn raw_gradient(&self, window_grad: &[f64]) -> Vec<f64> {
        let (b, l) = (self.config.block_size, self.config.window_size);
        let (b2, l2) = (b * b, l * l);
        assert_eq!(window_grad.len(), self.masks.len() * l2);
        let mut out = vec![0.0; self.raw_weights.len()];
        for k in 0..self.masks.len() {
            let (r0, c0) = self.masks.positions[k];
            let g = &window_grad[k * l2..(k + 1) * l2];
            let w = &self.window_weights[k * l2..(k + 1) * l2];
            let dot: f64 = g.iter().zip(w).map(|(a, b)| a * b).sum();
            let mut s = 0.0;
            for r in 0..l {
                let base = k * b2 + (r0 + r) * b + c0;
                s += self.raw_weights[base..base + l]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>();
            }
            for r in 0..l {
                for c in 0..l {
                    let idx = k * b2 + (r0 + r) * b + c0 + c;
                    let v = self.raw_weights[idx];
                    out[idx] = 2.0 * v / s * (g[r * l + c] - dot);
                }
            }
        }
        out
    }

    /// Measures every `B x B` block of `image`.
    pub fn sample(&self, image: &GrayImage) -> Result<BlockMeasurements> {
        sample_image(image, self)
    }

    /// Accumulates `dL/d(window weights)` given `dL/d(measurements)`.
    pub fn accumulate_window_grad(
        &self,
        image: &GrayImage,
        grad: &BlockMeasurements,
        window_grad: &mut [f64],
    ) {
        let (b, l) = (self.config.block_size, self.config.window_size);
        let l2 = l * l;
        let n_b = self.masks.len();
        let w = image.width();
        let px = image.data();
        for by in 0..grad.grid_rows {
            for bx in 0..grad.grid_cols {
                let g = grad.block(by, bx);
                for (k, &gk) in g.iter().enumerate().take(n_b) {
                    if gk == 0.0 {
                        continue;
                    }
                    let (r0, c0) = self.masks.positions[k];
                    let wg = &mut window_grad[k * l2..(k + 1) * l2];
                    for r in 0..l {
                        let row = (by * b + r0 + r) * w + bx * b + c0;
                        for c in 0..l {
                            wg[r * l + c] += gk * px[row + c];
                        }
                    }
                }
            }
        }
    }

    /// Flat little-endian serialization: magic `CSOP`, version, geometry,
    /// window positions, raw weights as f64. Normalized weights are rederived
    /// on load.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.raw_weights.len() * 8);
        out.extend_from_slice(OPERATOR_MAGIC);
        out.push(OPERATOR_VERSION);
        out.extend_from_slice(&(self.config.block_size as u16).to_le_bytes());
        out.extend_from_slice(&(self.config.window_size as u16).to_le_bytes());
        out.extend_from_slice(&(self.masks.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.config.ratio.to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        for &(r, c) in &self.masks.positions {
            out.extend_from_slice(&(r as u16).to_le_bytes());
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
        for w in &self.raw_weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        if rd.take(4)? != OPERATOR_MAGIC {
            return Err(Error::CorruptContainer("operator magic".into()));
        }
        let version = rd.take(1)?[0];
        if version != OPERATOR_VERSION {
            return Err(Error::CorruptContainer(format!(
                "operator version {version}"
            )));
        }
        let block_size = rd.u16()? as usize;
        let window_size = rd.u16()? as usize;
        let n_b = rd.u32()? as usize;
        let ratio = f64::from_le_bytes(rd.array()?);
        let seed = u64::from_le_bytes(rd.array()?);
        let config = SamplingConfig {
            ratio,
            block_size,
            window_size,
            seed,
        };
        config
            .validate()
            .map_err(|e| Error::CorruptContainer(format!("operator header: {e}")))?;
        if config.measurement_count()? != n_b {
            return Err(Error::CorruptContainer(
                "filter count disagrees with ratio".into(),
            ));
        }
        let masks = build_masks(block_size, window_size, n_b)?;
        for k in 0..n_b {
            let pos = (rd.u16()? as usize, rd.u16()? as usize);
            if pos != masks.positions[k] {
                return Err(Error::CorruptContainer(format!(
                    "window {k} at {pos:?}, expected {:?}",
                    masks.positions[k]
                )));
            }
        }
        let count = n_b * block_size * block_size;
        let mut raw = Vec::with_capacity(count);
        for _ in 0..count {
            raw.push(f64::from_le_bytes(rd.array()?));
        }
        if !rd.is_done() {
            return Err(Error::CorruptContainer("trailing operator bytes".into()));
        }
        SamplingOperator::from_raw(config, raw)
    }
}

const OPERATOR_MAGIC: &[u8; 4] = b"CSOP";
const OPERATOR_VERSION: u8 = 1;

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptContainer("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn remaining(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Per-block measurement vectors, blocks in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMeasurements {
    /// Blocks per image row, `w / B`.
    pub grid_cols: usize,
    /// Blocks per image column, `h / B`.
    pub grid_rows: usize,
    pub n_b: usize,
    pub values: Vec<f64>,
}

impl BlockMeasurements {
    pub fn zeros(grid_cols: usize, grid_rows: usize, n_b: usize) -> Self {
        BlockMeasurements {
            grid_cols,
            grid_rows,
            n_b,
            values: vec![0.0; grid_cols * grid_rows * n_b],
        }
    }

    pub fn block_count(&self) -> usize {
        self.grid_cols * self.grid_rows
    }

    pub fn block(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.grid_cols + col) * self.n_b;
        &self.values[i..i + self.n_b]
    }

    pub fn block_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.grid_cols + col) * self.n_b;
        &mut self.values[i..i + self.n_b]
    }

    pub fn same_geometry(&self, other: &BlockMeasurements) -> bool {
        self.grid_cols == other.grid_cols && self.grid_rows == other.grid_rows && self.n_b == other.n_b
    }
}

/// `y(i,j)[k] = sum over window k of W(k) * x(i,j)` for every block.
pub fn sample_image(image: &GrayImage, op: &SamplingOperator) -> Result<BlockMeasurements> {
    let b = op.config.block_size;
    let (w, h) = (image.width(), image.height());
    if w % b != 0 || h % b != 0 || w == 0 || h == 0 {
        return Err(Error::BadDimensions {
            width: w,
            height: h,
            multiple: b,
        });
    }
    let l = op.config.window_size;
    let l2 = l * l;
    let n_b = op.masks.len();
    let mut out = BlockMeasurements::zeros(w / b, h / b, n_b);
    let px = image.data();
    for by in 0..h / b {
        for bx in 0..w / b {
            let y = out.block_mut(by, bx);
            for (k, yk) in y.iter_mut().enumerate() {
                let (r0, c0) = op.masks.positions[k];
                let wk = &op.window_weights[k * l2..(k + 1) * l2];
                let mut acc = 0.0;
                for r in 0..l {
                    let row = (by * b + r0 + r) * w + bx * b + c0;
                    for c in 0..l {
                        acc += wk[r * l + c] * px[row + c];
                    }
                }
                *yk = acc;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurement_count_examples() {
        assert_eq!(derive_measurement_count(0.1, 32).unwrap(), 102);
        assert_eq!(derive_measurement_count(1.0, 32).unwrap(), 1024);
        assert_eq!(derive_measurement_count(0.25, 4).unwrap(), 4);
        assert!(matches!(
            derive_measurement_count(0.01, 4),
            Err(Error::ZeroMeasurements { .. })
        ));
        assert!(derive_measurement_count(0.0, 32).is_err());
        assert!(derive_measurement_count(1.5, 32).is_err());
    }

    #[test]
    fn masks_spread_over_raster_positions() {
        let m = build_masks(4, 2, 4).unwrap();
        assert_eq!(m.positions(), &[(0, 0), (0, 2), (1, 1), (2, 0)]);

        let full = build_masks(4, 2, 9).unwrap();
        assert_eq!(full.positions().len(), 9);
        assert_eq!(full.positions()[0], (0, 0));
        assert_eq!(full.positions()[8], (2, 2));

        let one = build_masks(2, 2, 1).unwrap();
        assert_eq!(one.mask(0), vec![1, 1, 1, 1]);
    }

    #[test]
    fn too_many_filters_rejected() {
        assert!(matches!(
            build_masks(4, 2, 10),
            Err(Error::TooManyFilters {
                filters: 10,
                positions: 9
            })
        ));
        // R = 1 with L = 3 needs 1024 windows but only 900 exist
        assert!(matches!(
            SamplingConfig::new(1.0, 32, 3, 0),
            Err(Error::TooManyFilters { .. })
        ));
    }

    #[test]
    fn init_is_seeded_he_normal() {
        let cfg = SamplingConfig::new(0.1, 32, 3, 7).unwrap();
        let a = initialize_raw_weights(&cfg).unwrap();
        let b = initialize_raw_weights(&cfg).unwrap();
        assert_eq!(a, b);
        let other = initialize_raw_weights(&SamplingConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
        // 102 * 1024 = 104448 draws
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = (2.0f64 / 1024.0).sqrt();
        assert!((std - expected).abs() / expected < 0.05, "std {std}");
    }

    #[test]
    fn localize_keeps_only_window() {
        let masks = build_masks(4, 2, 4).unwrap();
        let ones = vec![1.0; 4 * 16];
        let loc = localize(&ones, &masks).unwrap();
        for k in 0..4 {
            let m: Vec<f64> = masks.mask(k).iter().map(|&v| f64::from(v)).collect();
            assert_eq!(&loc[k * 16..(k + 1) * 16], &m[..]);
        }
        let mut raw = vec![0.0; 4 * 16];
        raw[15] = 7.3; // filter 0, outside its top-left window
        raw[0] = 1.0;
        raw[1] = 2.0;
        raw[4] = 3.0;
        raw[5] = 4.0;
        let loc = localize(&raw, &masks).unwrap();
        assert_eq!(loc[15], 0.0);
        assert_eq!(&loc[0..2], &[1.0, 2.0]);
        assert_eq!(&loc[4..6], &[3.0, 4.0]);
        assert_eq!(loc[0..16].iter().filter(|v| **v != 0.0).count(), 4);
        assert!(localize(&raw[..10], &masks).is_err());
    }

    #[test]
    fn positive_normalize_examples() {
        let out = positive_normalize(&[1.0, -1.0, 2.0, 0.0], 4).unwrap();
        let want = [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 0.0];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = positive_normalize(&[-0.3; 9], 9).unwrap();
        assert!(c.iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-15));
        assert!(matches!(
            positive_normalize(&[0.0; 4], 4),
            Err(Error::DegenerateFilter(0))
        ));
    }

    #[test]
    fn constant_image_gives_constant_measurements() {
        let op = SamplingOperator::new(SamplingConfig::new(0.25, 4, 2, 3).unwrap()).unwrap();
        for c in [0.0, 0.37, 1.0] {
            let img = GrayImage::filled(8, 12, c);
            let y = op.sample(&img).unwrap();
            assert_eq!(y.block_count(), 6);
            assert!(y.values.iter().all(|v| (v - c).abs() < 1e-12));
        }
    }

    #[test]
    fn bad_dimensions_rejected() {
        let op = SamplingOperator::new(SamplingConfig::new(0.25, 4, 2, 3).unwrap()).unwrap();
        assert!(matches!(
            op.sample(&GrayImage::filled(6, 8, 0.0)),
            Err(Error::BadDimensions { .. })
        ));
    }

    #[test]
    fn raw_gradient_matches_finite_differences() {
        let cfg = SamplingConfig::new(0.25, 4, 2, 11).unwrap();
        let op = SamplingOperator::new(cfg).unwrap();
        let l2 = 4;
        let g: Vec<f64> = (0..op.measurement_count() * l2)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0)
            .collect();
        let objective = |op: &SamplingOperator| -> f64 {
            op.window_weights().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let analytic = op.raw_gradient(&g);
        let eps = 1e-6;
        for i in 0..op.raw_weights().len() {
            let mut plus = op.clone();
            plus.raw_weights_mut()[i] += eps;
            plus.refresh().unwrap();
            let mut minus = op.clone();
            minus.raw_weights_mut()[i] -= eps;
            minus.refresh().unwrap();
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            assert!((fd - analytic[i]).abs() < 1e-7, "entry {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn operator_bytes_round_trip() {
        let op = SamplingOperator::new(SamplingConfig::new(0.1, 32, 3, 5).unwrap()).unwrap();
        let bytes = op.to_bytes();
        let back = SamplingOperator::from_bytes(&bytes).unwrap();
        assert_eq!(back, op);
        assert!(SamplingOperator::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SamplingOperator::from_bytes(&bad).is_err());
    }
}
