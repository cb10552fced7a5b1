use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty element set")]
    EmptyElementSet,

    #[error("invalid pitch {pitch_x} x {pitch_y} m: pitches must be positive and finite")]
    InvalidPitch { pitch_x: f64, pitch_y: f64 },

    #[error("pitch mismatch: ({0}, {1}) vs ({2}, {3})")]
    PitchMismatch(f64, f64, f64, f64),

    #[error("duplicate element position ({0}, {1})")]
    DuplicatePosition(i32, i32),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("co-array hole at ({0}, {1}): intrinsic apodization is zero")]
    CoarrayHole(i32, i32),

    #[error("weight at ({0}, {1}) lies outside the supported element set")]
    WeightOutsideSupport(i32, i32),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("receive array is not a full UPA; use scoba3d for sparse arrays")]
    NotUpa,

    #[error("acquisition window too short: {count} scatterer echo(es) truncated, first at index {first}")]
    TruncatedScatterers { count: usize, first: usize },

    #[error("phantom contains no scatterers")]
    EmptyPhantom,

    #[error("volume is identically zero")]
    ZeroVolume,

    #[error("region is empty or regions overlap: {0}")]
    InvalidRegion(String),

    #[error("background mean intensity is zero")]
    ZeroBackground,

    #[error("profile unresolved: never falls below half maximum within the grid")]
    Unresolved,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
