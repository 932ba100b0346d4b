//! 8-bit quantization at the codec boundary.

use super::plane::{MeasurementPlane, PlaneGeometry};
use crate::error::Result;
use crate::image::to_u8;

/// `round(clip(v, 0, 1) * 255)` per cell, row-major.
pub fn quantize8(plane: &MeasurementPlane) -> Vec<u8> {
    plane.values().iter().map(|&v| to_u8(v)).collect()
}

pub fn dequantize8(geometry: PlaneGeometry, bytes: &[u8]) -> Result<MeasurementPlane> {
    MeasurementPlane::new(
        geometry,
        bytes.iter().map(|&q| f64::from(q) / 255.0).collect(),
    )
}
