//! Process exit codes, one per error class.

use cscodec::Error;

pub const EXIT_HELP: &str = "\
Exit status:
  0  success
  1  unexpected failure
  2  invalid command line
  3  invalid configuration or parameters
  4  file or image I/O error
  5  corrupt container, model or state file
  6  codec binary unavailable
  7  external codec failed
  8  shape or geometry mismatch
  9  target rate unreachable
  10 non-finite training loss";

pub fn code_for(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return if err.chain().any(|c| c.is::<std::io::Error>()) { 4 } else { 1 };
    };
    match e {
        Error::ZeroMeasurements { .. }
        | Error::InvalidConfig(_)
        | Error::TooManyFilters { .. }
        | Error::DegenerateFilter(_)
        | Error::BadDimensions { .. }
        | Error::QualityOutOfRange { .. } => 3,
        Error::Io { .. } | Error::ImageFormat(_) => 4,
        Error::CorruptContainer(_) | Error::Checkpoint(_) | Error::Json(_) | Error::Csv(_) => 5,
        Error::CodecUnavailable(_) => 6,
        Error::CodecFailure { .. } => 7,
        Error::ShapeMismatch(_)
        | Error::BadPlaneShape(_)
        | Error::GeometryMismatch(_)
        | Error::TooSmall { .. } => 8,
        Error::UnreachableRate { .. } => 9,
        Error::NonFiniteLoss { .. } => 10,
    }
}
