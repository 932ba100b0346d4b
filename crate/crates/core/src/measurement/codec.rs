//! Codec bridge: quantize the measurement plane and hand it to an image
//! codec, in-process (raw 8-bit, DPCM) or as a subprocess (JPEG 2000, BPG).
//!
//! External codecs follow the command-line conventions of the reference
//! tools:
//!
//! ```text
//! j2k encoder:  <enc> -i in.pgm -o out.j2k -r <compression ratio>
//! j2k decoder:  <dec> -i in.j2k -o out.pgm
//! bpg encoder:  <enc> -q <qp> -o out.bpg in.png
//! bpg decoder:  <dec> -o out.png in.bpg
//! ```
//!
//! Binaries are taken from `CSCODEC_{J2K,BPG}_{ENCODER,DECODER}` (a command
//! line, split on whitespace) or looked up on `PATH` as
//! `opj_compress`/`opj_decompress` and `bpgenc`/`bpgdec`.

use std::env;
use std::ffi::OsString;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::container::{BitstreamContainer, CodecId};
use super::dpcm::{dpcm_decode, dpcm_rate_estimate};
use super::plane::{tile_measurements, untile_measurements, MeasurementPlane, PlaneGeometry};
use super::quant::{dequantize8, quantize8};
use super::rate::RatePoint;
use crate::error::{Error, Result};
use crate::image::{encode_pgm, parse_pgm};
use crate::sampling::SamplingConfig;

/// A codec together with its quality setting.
///
/// `quality` means: unused for raw 8-bit, target compression ratio for
/// JPEG 2000, quantizer parameter for BPG, quantizer step for DPCM. For the
/// three parametrized codecs a larger value gives a smaller payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecBackend {
    pub codec: CodecId,
    pub quality: f64,
}

impl CodecBackend {
    pub fn new(codec: CodecId, quality: f64) -> Result<Self> {
        let b = CodecBackend { codec, quality };
        b.validate()?;
        Ok(b)
    }

    pub fn quant8() -> Self {
        CodecBackend {
            codec: CodecId::Quant8Raw,
            quality: 0.0,
        }
    }

    /// Inclusive quality range accepted by a codec.
    pub fn quality_bounds(codec: CodecId) -> (f64, f64) {
        match codec {
            CodecId::Quant8Raw => (0.0, 0.0),
            CodecId::ExternalJ2k => (1.0, 1000.0),
            CodecId::ExternalBpg => (0.0, 51.0),
            CodecId::DpcmEstimate => (1e-6, 1.0),
        }
    }

    pub fn default_quality(codec: CodecId) -> f64 {
        match codec {
            CodecId::Quant8Raw => 0.0,
            CodecId::ExternalJ2k => 20.0,
            CodecId::ExternalBpg => 28.0,
            CodecId::DpcmEstimate => 1.0 / 255.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (min, max) = Self::quality_bounds(self.codec);
        if !(self.quality >= min && self.quality <= max) {
            return Err(Error::QualityOutOfRange {
                codec: self.codec.name(),
                quality: self.quality,
                min,
                max,
            });
        }
        if self.codec == CodecId::ExternalBpg && self.quality.fract() != 0.0 {
            return Err(Error::InvalidConfig("bpg quantizer must be an integer".into()));
        }
        Ok(())
    }
}

/// Program plus leading arguments, e.g. `python3 tools/opj_pillow.py compress`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandSpec {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CommandSpec {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        CommandSpec {
            program: program.into(),
            args: Vec::new(),
        }
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let program = parts.next()?;
        Some(CommandSpec {
            program: program.into(),
            args: parts.map(str::to_string).collect(),
        })
    }

    /// Finds an executable on `PATH`.
    pub fn on_path(name: &str) -> Option<Self> {
        let path = env::var_os("PATH")?;
        env::split_paths(&path)
            .map(|dir| dir.join(name))
            .find(|p| p.is_file())
            .map(CommandSpec::new)
    }

    fn run(&self, extra: &[OsString], what: &str) -> Result<()> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .args(extra)
            .output()
            .map_err(|e| match e.kind() {
                ErrorKind::NotFound | ErrorKind::PermissionDenied => Error::CodecUnavailable(
                    format!("{what}: cannot run {}: {e}", self.program.display()),
                ),
                _ => Error::CodecFailure {
                    message: format!("{what}: spawn failed"),
                    diagnostics: e.to_string(),
                },
            })?;
        if !out.status.success() {
            return Err(Error::CodecFailure {
                message: format!("{what} exited with {}", out.status),
                diagnostics: format!(
                    "{}{}",
                    String::from_utf8_lossy(&out.stdout),
                    String::from_utf8_lossy(&out.stderr)
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalCodec {
    pub encoder: CommandSpec,
    pub decoder: CommandSpec,
}

/// Which external codecs can be reached. Read-only once built.
#[derive(Debug, Clone, Default)]
pub struct CodecRegistry {
    j2k: Option<ExternalCodec>,
    bpg: Option<ExternalCodec>,
}

pub const J2K_ENCODER_ENV: &str = "CSCODEC_J2K_ENCODER";
pub const J2K_DECODER_ENV: &str = "CSCODEC_J2K_DECODER";
pub const BPG_ENCODER_ENV: &str = "CSCODEC_BPG_ENCODER";
pub const BPG_DECODER_ENV: &str = "CSCODEC_BPG_DECODER";

impl CodecRegistry {
    /// Only the in-process codecs.
    pub fn builtin() -> Self {
        CodecRegistry::default()
    }

    pub fn from_env() -> Self {
        let lookup = |env_name: &str, binary: &str| {
            env::var(env_name)
                .ok()
                .and_then(|s| CommandSpec::parse(&s))
                .or_else(|| CommandSpec::on_path(binary))
        };
        let pair = |enc: Option<CommandSpec>, dec: Option<CommandSpec>| {
            Some(ExternalCodec {
                encoder: enc?,
                decoder: dec?,
            })
        };
        CodecRegistry {
            j2k: pair(
                lookup(J2K_ENCODER_ENV, "opj_compress"),
                lookup(J2K_DECODER_ENV, "opj_decompress"),
            ),
            bpg: pair(
                lookup(BPG_ENCODER_ENV, "bpgenc"),
                lookup(BPG_DECODER_ENV, "bpgdec"),
            ),
        }
    }

    pub fn with_j2k(mut self, codec: ExternalCodec) -> Self {
        self.j2k = Some(codec);
        self
    }

    pub fn with_bpg(mut self, codec: ExternalCodec) -> Self {
        self.bpg = Some(codec);
        self
    }

    pub fn external(&self, codec: CodecId) -> Option<&ExternalCodec> {
        match codec {
            CodecId::ExternalJ2k => self.j2k.as_ref(),
            CodecId::ExternalBpg => self.bpg.as_ref(),
            _ => None,
        }
    }

    pub fn is_available(&self, codec: CodecId) -> bool {
        match codec {
            CodecId::Quant8Raw | CodecId::DpcmEstimate => true,
            _ => self.external(codec).is_some(),
        }
    }

    fn require(&self, codec: CodecId) -> Result<&ExternalCodec> {
        self.external(codec).ok_or_else(|| {
            Error::CodecUnavailable(format!(
                "no {codec} binaries configured (set the CSCODEC_* environment variables)"
            ))
        })
    }
}

/// Compresses a measurement plane into a container.
pub fn encode_plane(
    plane: &MeasurementPlane,
    backend: &CodecBackend,
    sampling: &SamplingConfig,
    image_size: (usize, usize),
    registry: &CodecRegistry,
) -> Result<BitstreamContainer> {
    backend.validate()?;
    let g = plane.geometry();
    let b = sampling.block_size;
    if g.grid_cols != image_size.0.div_ceil(b)
        || g.grid_rows != image_size.1.div_ceil(b)
        || g.n_b != sampling.measurement_count()?
    {
        return Err(Error::GeometryMismatch(format!(
            "plane grid {}x{}x{} does not match a {}x{} image at B={b}",
            g.grid_cols, g.grid_rows, g.n_b, image_size.0, image_size.1
        )));
    }
    let payload = match backend.codec {
        CodecId::Quant8Raw => quantize8(plane),
        CodecId::DpcmEstimate => {
            let bm = untile_measurements(plane)?;
            let out = dpcm_rate_estimate(&bm, backend.quality, (image_size.0 * image_size.1) as u64)?;
            out.symbols.iter().flat_map(|s| s.to_le_bytes()).collect()
        }
        CodecId::ExternalJ2k => {
            let codec = registry.require(CodecId::ExternalJ2k)?;
            let dir = job_dir()?;
            let input = dir.path().join("in.pgm");
            let output = dir.path().join("out.j2k");
            write(&input, &encode_pgm(g.width(), g.height(), &quantize8(plane)))?;
            codec.encoder.run(
                &[
                    "-i".into(),
                    input.into(),
                    "-o".into(),
                    output.clone().into(),
                    "-r".into(),
                    format_quality(backend.quality).into(),
                ],
                "j2k encoder",
            )?;
            read_output(&output, "j2k encoder")?
        }
        CodecId::ExternalBpg => {
            let codec = registry.require(CodecId::ExternalBpg)?;
            let dir = job_dir()?;
            let input = dir.path().join("in.png");
            let output = dir.path().join("out.bpg");
            write_png(&input, g.width(), g.height(), quantize8(plane))?;
            codec.encoder.run(
                &[
                    "-q".into(),
                    format!("{}", backend.quality as i64).into(),
                    "-o".into(),
                    output.clone().into(),
                    input.into(),
                ],
                "bpg encoder",
            )?;
            read_output(&output, "bpg encoder")?
        }
    };
    BitstreamContainer::new(sampling, image_size, backend.codec, backend.quality, payload)
}

/// Recovers the decoded plane described by a container.
pub fn decode_container(
    c: &BitstreamContainer,
    registry: &CodecRegistry,
) -> Result<MeasurementPlane> {
    let g = c.plane_geometry()?;
    let expect_dims = |w: usize, h: usize, what: &str| {
        if (w, h) != (g.width(), g.height()) {
            Err(Error::CodecFailure {
                message: format!(
                    "{what} returned {w}x{h}, expected {}x{}",
                    g.width(),
                    g.height()
                ),
                diagnostics: String::new(),
            })
        } else {
            Ok(())
        }
    };
    match c.codec {
        CodecId::Quant8Raw => {
            if c.payload.len() != g.cell_count() {
                return Err(Error::CorruptContainer(format!(
                    "raw payload of {} bytes for a {}x{} plane",
                    c.payload.len(),
                    g.width(),
                    g.height()
                )));
            }
            dequantize8(g, &c.payload)
        }
        CodecId::DpcmEstimate => {
            if c.payload.len() % 4 != 0 {
                return Err(Error::CorruptContainer("dpcm payload not a multiple of 4".into()));
            }
            let symbols: Vec<i32> = c
                .payload
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes(b.try_into().expect("chunk of 4")))
                .collect();
            let bm = dpcm_decode(&symbols, f64::from(c.quality), g.grid_cols, g.grid_rows, g.n_b)?;
            tile_measurements(&bm)
        }
        CodecId::ExternalJ2k => {
            let codec = registry.require(CodecId::ExternalJ2k)?;
            let dir = job_dir()?;
            let input = dir.path().join("in.j2k");
            let output = dir.path().join("out.pgm");
            write(&input, &c.payload)?;
            codec.decoder.run(
                &["-i".into(), input.into(), "-o".into(), output.clone().into()],
                "j2k decoder",
            )?;
            let (w, h, px) = parse_pgm(&read_output(&output, "j2k decoder")?)?;
            expect_dims(w, h, "j2k decoder")?;
            dequantize8(g, &px)
        }
        CodecId::ExternalBpg => {
            let codec = registry.require(CodecId::ExternalBpg)?;
            let dir = job_dir()?;
            let input = dir.path().join("in.bpg");
            let output = dir.path().join("out.png");
            write(&input, &c.payload)?;
            codec.decoder.run(
                &["-o".into(), output.clone().into(), input.into()],
                "bpg decoder",
            )?;
            let img = image::open(&output)
                .map_err(|e| Error::CodecFailure {
                    message: "bpg decoder output unreadable".into(),
                    diagnostics: e.to_string(),
                })?
                .to_luma8();
            expect_dims(img.width() as usize, img.height() as usize, "bpg decoder")?;
            dequantize8(g, img.as_raw())
        }
    }
}

/// Encode then decode, returning the decoded plane and its rate.
pub fn roundtrip_plane(
    plane: &MeasurementPlane,
    backend: &CodecBackend,
    sampling: &SamplingConfig,
    image_size: (usize, usize),
    registry: &CodecRegistry,
) -> Result<(MeasurementPlane, RatePoint)> {
    let c = encode_plane(plane, backend, sampling, image_size, registry)?;
    let rate = if backend.codec == CodecId::DpcmEstimate {
        // the estimate, not the raw symbol dump, is the rate of this baseline
        let bm = untile_measurements(plane)?;
        dpcm_rate_estimate(&bm, backend.quality, (image_size.0 * image_size.1) as u64)?.rate
    } else {
        c.rate()
    };
    Ok((decode_container(&c, registry)?, rate))
}

/// Forward half of the straight-through codec: the returned plane is
/// `Dec(Enc(plane))`. The backward half is the identity, so callers pass the
/// gradient of the decoded plane to the pre-codec plane unchanged.
pub fn straight_through_roundtrip(
    plane: &MeasurementPlane,
    backend: &CodecBackend,
    sampling: &SamplingConfig,
    image_size: (usize, usize),
    registry: &CodecRegistry,
) -> Result<MeasurementPlane> {
    match backend.codec {
        // fast path, identical to encode/decode through a container
        CodecId::Quant8Raw => dequantize8(plane.geometry(), &quantize8(plane)),
        _ => Ok(roundtrip_plane(plane, backend, sampling, image_size, registry)?.0),
    }
}

/// Image size implied by a plane when blocks tile the image exactly.
pub fn image_size_for(geometry: PlaneGeometry, block_size: usize) -> (usize, usize) {
    (geometry.grid_cols * block_size, geometry.grid_rows * block_size)
}

fn format_quality(q: f64) -> String {
    let s = format!("{q:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn job_dir() -> Result<tempfile::TempDir> {
    tempfile::Builder::new()
        .prefix("cscodec-")
        .tempdir()
        .map_err(|e| Error::io(env::temp_dir(), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, width: usize, height: usize, px: Vec<u8>) -> Result<()> {
    image::GrayImage::from_raw(width as u32, height as u32, px)
        .ok_or_else(|| Error::ImageFormat("plane buffer size".into()))?
        .save(path)
        .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))
}

fn read_output(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::CodecFailure {
        message: format!("{what} produced no readable output at {}", path.display()),
        diagnostics: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::BlockMeasurements;

    fn plane_64() -> (MeasurementPlane, SamplingConfig) {
        // 256x256 image, B = 32, n_B = 64 -> 8x8 tiles of side 8 -> 64x64 plane
        let cfg = SamplingConfig::new(0.0625, 32, 3, 0).unwrap();
        let bm = BlockMeasurements {
            grid_cols: 8,
            grid_rows: 8,
            n_b: 64,
            values: (0..64 * 64).map(|i| ((i as f64) * 0.013).sin() * 0.5 + 0.5).collect(),
        };
        (tile_measurements(&bm).unwrap(), cfg)
    }

    #[test]
    fn raw_payload_accounting() {
        let (plane, cfg) = plane_64();
        assert_eq!((plane.width(), plane.height()), (64, 64));
        let c = encode_plane(&plane, &CodecBackend::quant8(), &cfg, (256, 256), &CodecRegistry::builtin())
            .unwrap();
        assert_eq!(c.payload_len(), 4096);
        assert_eq!(c.rate().bpp(), 0.5);
    }

    #[test]
    fn raw_roundtrip_matches_quantizer() {
        let (plane, cfg) = plane_64();
        let reg = CodecRegistry::builtin();
        let c = encode_plane(&plane, &CodecBackend::quant8(), &cfg, (256, 256), &reg).unwrap();
        let back = decode_container(&BitstreamContainer::from_bytes(&c.to_bytes()).unwrap(), &reg)
            .unwrap();
        let direct = dequantize8(plane.geometry(), &quantize8(&plane)).unwrap();
        assert_eq!(back, direct);
        let max = plane
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max <= 1.0 / 510.0 + 1e-15);
        let st = straight_through_roundtrip(&plane, &CodecBackend::quant8(), &cfg, (256, 256), &reg)
            .unwrap();
        assert_eq!(st, back);
    }

    #[test]
    fn dpcm_container_roundtrip() {
        let (plane, cfg) = plane_64();
        let reg = CodecRegistry::builtin();
        let backend = CodecBackend::new(CodecId::DpcmEstimate, 0.01).unwrap();
        let (dec, rate) = roundtrip_plane(&plane, &backend, &cfg, (256, 256), &reg).unwrap();
        let orig = untile_measurements(&plane).unwrap();
        let got = untile_measurements(&dec).unwrap();
        for (a, b) in orig.values.iter().zip(&got.values) {
            assert!((a - b).abs() <= 0.005 + 1e-6);
        }
        assert!(rate.bpp() > 0.0);
    }

    #[test]
    fn missing_external_codec_is_unavailable() {
        let (plane, cfg) = plane_64();
        let backend = CodecBackend::new(CodecId::ExternalJ2k, 20.0).unwrap();
        let err = encode_plane(&plane, &backend, &cfg, (256, 256), &CodecRegistry::builtin());
        assert!(matches!(err, Err(Error::CodecUnavailable(_))));
        let bogus = CodecRegistry::builtin().with_j2k(ExternalCodec {
            encoder: CommandSpec::new("/nonexistent/opj_compress"),
            decoder: CommandSpec::new("/nonexistent/opj_decompress"),
        });
        let err = encode_plane(&plane, &backend, &cfg, (256, 256), &bogus);
        assert!(matches!(err, Err(Error::CodecUnavailable(_))));
    }

    #[test]
    fn failing_codec_reports_diagnostics() {
        let (plane, cfg) = plane_64();
        let failing = CodecRegistry::builtin().with_j2k(ExternalCodec {
            encoder: CommandSpec::new("false"),
            decoder: CommandSpec::new("false"),
        });
        let backend = CodecBackend::new(CodecId::ExternalJ2k, 20.0).unwrap();
        match encode_plane(&plane, &backend, &cfg, (256, 256), &failing) {
            Err(Error::CodecFailure { .. }) => {}
            other => panic!("expected CodecFailure, got {other:?}"),
        }
    }

    #[test]
    fn quality_bounds_enforced() {
        assert!(CodecBackend::new(CodecId::ExternalBpg, 52.0).is_err());
        assert!(CodecBackend::new(CodecId::ExternalBpg, 28.5).is_err());
        assert!(CodecBackend::new(CodecId::ExternalJ2k, 0.5).is_err());
        assert!(CodecBackend::new(CodecId::DpcmEstimate, 0.0).is_err());
        assert!(CodecBackend::new(CodecId::ExternalJ2k, 40.0).is_ok());
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let (plane, cfg) = plane_64();
        let err = encode_plane(&plane, &CodecBackend::quant8(), &cfg, (128, 256), &CodecRegistry::builtin());
        assert!(matches!(err, Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn quality_formatting() {
        assert_eq!(format_quality(20.0), "20");
        assert_eq!(format_quality(12.5), "12.5");
    }
}
