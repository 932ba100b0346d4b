use serde::{Deserialize, Serialize};

/// Coded size of one image expressed per source pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// Payload bits. Fractional for entropy estimates.
    pub payload_bits: f64,
    pub pixel_count: u64,
}

impl RatePoint {
    pub fn new(payload_bits: f64, pixel_count: u64) -> Self {
        RatePoint {
            payload_bits,
            pixel_count,
        }
    }

    pub fn bpp(&self) -> f64 {
        if self.pixel_count == 0 {
            return 0.0;
        }
        self.payload_bits / self.pixel_count as f64
    }
}
