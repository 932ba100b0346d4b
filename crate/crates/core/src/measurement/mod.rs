//! Measurement coding: tiling, quantization, codec bridge, container and
//! rate accounting.

pub mod codec;
pub mod container;
pub mod dpcm;
pub mod plane;
pub mod quant;
pub mod rate;

pub use codec::{
    decode_container, encode_plane, roundtrip_plane, straight_through_roundtrip, CodecBackend,
    CodecRegistry, CommandSpec, ExternalCodec,
};
pub use container::{compute_bpp, BitstreamContainer, CodecId};
pub use dpcm::{dpcm_rate_estimate, DpcmOutcome};
pub use plane::{
    tile_backward, tile_measurements, untile_measurements, MeasurementPlane, PlaneGeometry,
};
pub use quant::{dequantize8, quantize8};
pub use rate::RatePoint;
