//! `CSC1` bitstream container.
//!
//! ```text
//! offset size field
//!      0    4 magic "CSC1"
//!      4    1 version (1)
//!      5    4 width           u32
//!      9    4 height          u32
//!     13    2 block size B    u16
//!     15    2 window size L   u16
//!     17    4 n_B             u32
//!     21    4 ratio R         f32
//!     25    1 codec id        u8
//!     26    4 quality         f32
//!     30    4 payload_len     u32
//!     34    . payload
//! ```
//! All integers little-endian. `width`/`height` are the source image size;
//! the block grid is `ceil(width / B) x ceil(height / B)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::plane::PlaneGeometry;
use super::rate::RatePoint;
use crate::error::{Error, Result};
use crate::sampling::{ByteReader, SamplingConfig};

pub const MAGIC: &[u8; 4] = b"CSC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CodecId {
    #[serde(rename = "quant8")]
    Quant8Raw = 0,
    #[serde(rename = "j2k")]
    ExternalJ2k = 1,
    #[serde(rename = "bpg")]
    ExternalBpg = 2,
    #[serde(rename = "dpcm")]
    DpcmEstimate = 3,
}

impl CodecId {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(CodecId::Quant8Raw),
            1 => Some(CodecId::ExternalJ2k),
            2 => Some(CodecId::ExternalBpg),
            3 => Some(CodecId::DpcmEstimate),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecId::Quant8Raw => "quant8",
            CodecId::ExternalJ2k => "j2k",
            CodecId::ExternalBpg => "bpg",
            CodecId::DpcmEstimate => "dpcm",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            CodecId::Quant8Raw,
            CodecId::ExternalJ2k,
            CodecId::ExternalBpg,
            CodecId::DpcmEstimate,
        ]
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamContainer {
    pub version: u8,
    pub width: u32,
    pub height: u32,
    pub block_size: u16,
    pub window_size: u16,
    pub n_b: u32,
    pub ratio: f32,
    pub codec: CodecId,
    pub quality: f32,
    pub payload: Vec<u8>,
}

impl BitstreamContainer {
    pub fn new(
        sampling: &SamplingConfig,
        image_size: (usize, usize),
        codec: CodecId,
        quality: f64,
        payload: Vec<u8>,
    ) -> Result<Self> {
        let n_b = sampling.measurement_count()?;
        let narrow = |v: usize, what: &str, max: usize| {
            if v > max {
                Err(Error::InvalidConfig(format!("{what} {v} does not fit the header")))
            } else {
                Ok(v)
            }
        };
        Ok(BitstreamContainer {
            version: VERSION,
            width: narrow(image_size.0, "width", u32::MAX as usize)? as u32,
            height: narrow(image_size.1, "height", u32::MAX as usize)? as u32,
            block_size: narrow(sampling.block_size, "block size", u16::MAX as usize)? as u16,
            window_size: narrow(sampling.window_size, "window size", u16::MAX as usize)? as u16,
            n_b: n_b as u32,
            ratio: sampling.ratio as f32,
            codec,
            quality: quality as f32,
            payload,
        })
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    /// Block grid and measurement count described by the header.
    pub fn plane_geometry(&self) -> Result<PlaneGeometry> {
        if self.block_size == 0 {
            return Err(Error::CorruptContainer("zero block size".into()));
        }
        let b = self.block_size as usize;
        PlaneGeometry::new(
            (self.width as usize).div_ceil(b),
            (self.height as usize).div_ceil(b),
            self.n_b as usize,
        )
        .map_err(|e| Error::CorruptContainer(e.to_string()))
    }

    pub fn rate(&self) -> RatePoint {
        compute_bpp(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.block_size.to_le_bytes());
        out.extend_from_slice(&self.window_size.to_le_bytes());
        out.extend_from_slice(&self.n_b.to_le_bytes());
        out.extend_from_slice(&self.ratio.to_le_bytes());
        out.push(self.codec as u8);
        out.extend_from_slice(&self.quality.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        let corrupt = |m: &str| Error::CorruptContainer(m.to_string());
        if rd.take(4).map_err(|_| corrupt("too short for magic"))? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let header = (|| -> Result<_> {
            let version = rd.take(1)?[0];
            let width = rd.u32()?;
            let height = rd.u32()?;
            let block_size = rd.u16()?;
            let window_size = rd.u16()?;
            let n_b = rd.u32()?;
            let ratio = f32::from_le_bytes(rd.array()?);
            let codec = rd.take(1)?[0];
            let quality = f32::from_le_bytes(rd.array()?);
            let payload_len = rd.u32()?;
            Ok((
                version,
                width,
                height,
                block_size,
                window_size,
                n_b,
                ratio,
                codec,
                quality,
                payload_len,
            ))
        })()
        .map_err(|_| corrupt("truncated header"))?;
        let (version, width, height, block_size, window_size, n_b, ratio, codec, quality, payload_len) =
            header;
        if version != VERSION {
            return Err(Error::CorruptContainer(format!("unsupported version {version}")));
        }
        let codec = CodecId::from_u8(codec)
            .ok_or_else(|| Error::CorruptContainer(format!("unknown codec id {codec}")))?;
        let payload = rd.remaining();
        if payload.len() != payload_len as usize {
            return Err(Error::CorruptContainer(format!(
                "header declares {payload_len} payload bytes, found {}",
                payload.len()
            )));
        }
        Ok(BitstreamContainer {
            version,
            width,
            height,
            block_size,
            window_size,
            n_b,
            ratio,
            codec,
            quality,
            payload: payload.to_vec(),
        })
    }
}

/// `payload_len * 8 / (width * height)`; the fixed header is not counted.
pub fn compute_bpp(c: &BitstreamContainer) -> RatePoint {
    RatePoint::new(
        c.payload.len() as f64 * 8.0,
        u64::from(c.width) * u64::from(c.height),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(payload: Vec<u8>) -> BitstreamContainer {
        let cfg = SamplingConfig::new(0.1, 32, 3, 0).unwrap();
        BitstreamContainer::new(&cfg, (256, 256), CodecId::ExternalJ2k, 20.0, payload).unwrap()
    }

    #[test]
    fn header_is_34_bytes() {
        assert_eq!(sample(vec![]).to_bytes().len(), HEADER_LEN);
        let bytes = sample(vec![9; 5]).to_bytes();
        assert_eq!(&bytes[..4], b"CSC1");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &256u32.to_le_bytes());
        assert_eq!(&bytes[13..15], &32u16.to_le_bytes());
        assert_eq!(&bytes[17..21], &102u32.to_le_bytes());
        assert_eq!(bytes[25], 1);
        assert_eq!(&bytes[30..34], &5u32.to_le_bytes());
    }

    #[test]
    fn bpp_counts_payload_only() {
        assert!((sample(vec![0; 3277]).rate().bpp() - 0.4001).abs() < 1e-4);
        assert_eq!(sample(vec![]).rate().bpp(), 0.0);
        let one = sample(vec![0; 100]).rate().bpp();
        let two = sample(vec![0; 200]).rate().bpp();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = sample(vec![1, 2, 3, 4]).to_bytes();
        assert!(matches!(
            BitstreamContainer::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::CorruptContainer(_))
        ));
        assert!(matches!(
            BitstreamContainer::from_bytes(&bytes[..20]),
            Err(Error::CorruptContainer(_))
        ));
    }

    #[test]
    fn extra_bytes_are_corrupt() {
        let mut bytes = sample(vec![1, 2, 3]).to_bytes();
        bytes.push(0);
        assert!(matches!(
            BitstreamContainer::from_bytes(&bytes),
            Err(Error::CorruptContainer(_))
        ));
    }

    #[test]
    fn bad_magic_version_and_codec() {
        let good = sample(vec![1]).to_bytes();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(BitstreamContainer::from_bytes(&b).is_err());
        let mut b = good.clone();
        b[4] = 2;
        assert!(BitstreamContainer::from_bytes(&b).is_err());
        let mut b = good;
        b[25] = 9;
        assert!(BitstreamContainer::from_bytes(&b).is_err());
    }

    proptest! {
        #[test]
        fn serialize_parse_is_bit_exact(
            width in 1u32..5000, height in 1u32..5000, b in 1u16..64, l in 1u16..8,
            n_b in 1u32..4096, ratio in 0.0f32..1.0, codec in 0u8..4, quality in -10.0f32..1000.0,
            payload in proptest::collection::vec(any::<u8>(), 0..300),
        ) {
            let c = BitstreamContainer {
                version: VERSION, width, height, block_size: b, window_size: l, n_b, ratio,
                codec: CodecId::from_u8(codec).unwrap(), quality, payload,
            };
            let bytes = c.to_bytes();
            let back = BitstreamContainer::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
