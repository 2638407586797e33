use thiserror::Error;

/// Errors raised by the transport library and its file formats.
#[derive(Debug, Error)]
pub enum ShotError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dense {n}x{n} materialization exceeds the capacity guard ({guard} nodes); use the spectral path")]
    Capacity { n: usize, guard: usize },

    #[error("band limit mismatch: got {found}, grid allows {allowed}")]
    BandLimitMismatch { found: usize, allowed: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("balanced transport needs equal masses, got {mass_p} and {mass_q}")]
    MassMismatch { mass_p: f64, mass_q: f64 },

    #[error("truncated heat kernel produced {count} nonpositive entries (eps = {eps}, L = {band_limit})")]
    TruncationNegativity {
        eps: f64,
        band_limit: usize,
        count: usize,
    },

    #[error("eps = {eps} is below the resolvable heat width {min_eps} at L = {band_limit}")]
    StabilityGuard {
        eps: f64,
        band_limit: usize,
        min_eps: f64,
    },

    #[error("eps = {eps} underflows the Gibbs kernel (minimum {min_eps})")]
    UnderflowGuard { eps: f64, min_eps: f64 },

    #[error("bad header: {0}")]
    BadHeader(String),

    #[error("bad payload: {0}")]
    BadPayload(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ShotError {
    /// Stable machine-readable code, used in the CLI's JSON error reports.
    pub fn code(&self) -> &'static str {
        match self {
            ShotError::Parameter(_) => "parameter",
            ShotError::Data(_) => "data",
            ShotError::Capacity { .. } => "capacity",
            ShotError::BandLimitMismatch { .. } => "band-limit-mismatch",
            ShotError::GridMismatch => "grid-mismatch",
            ShotError::MassMismatch { .. } => "mass-mismatch",
            ShotError::TruncationNegativity { .. } => "truncation-negativity",
            ShotError::StabilityGuard { .. } => "stability-guard",
            ShotError::UnderflowGuard { .. } => "underflow-guard",
            ShotError::BadHeader(_) => "bad-header",
            ShotError::BadPayload(_) => "bad-payload",
            ShotError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, ShotError>;
