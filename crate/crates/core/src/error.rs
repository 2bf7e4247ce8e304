use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor factors mix states and operators")]
    MixedTensorKinds,
    #[error("empty factor list")]
    EmptyFactors,
    #[error("subsystem {0} targeted twice")]
    RepeatedTarget(usize),
    #[error("subsystem index {index} out of range for {count} subsystems")]
    TargetOutOfRange { index: usize, count: usize },
    #[error("partial trace needs a nonempty keep set")]
    EmptyKeep,
    #[error("operator not Hermitian (defect {0:e})")]
    NotHermitian(f64),
    #[error("operator not unitary (defect {0:e})")]
    NotUnitary(f64),
    #[error("trace mismatch: {0:e} vs {1:e}")]
    TraceMismatch(f64, f64),
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("branch `{0}` has zero probability")]
    ZeroProbability(String),
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("interaction not completed: {0}")]
    InteractionIncomplete(String),
    #[error("interaction windows overlap: {0}")]
    WindowsOverlap(String),
    #[error("unsupported convention: {0}")]
    UnsupportedConvention(String),
    #[error("unsupported clock state: {0}")]
    UnsupportedClockState(String),
    #[error("lattice too small: {0}")]
    LatticeTooSmall(String),
    #[error("step dt={dt} is not commensurate with dx={dx}")]
    IncommensurateStep { dt: f64, dx: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("pulse area {0} differs from pi/2")]
    PulseArea(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
