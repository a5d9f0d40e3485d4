use thiserror::Error;

/// Crate-wide error type. Variants are grouped by where they arise so the
/// CLI can map them onto validation (exit 1) vs runtime (exit 2) failures.
#[derive(Debug, Error)]
pub enum Error {
    // --- price data ---
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(chrono::NaiveDateTime),
    #[error("interval mismatch: declared {declared} min but {ts} is off the lattice")]
    IntervalMismatch {
        declared: u32,
        ts: chrono::NaiveDateTime,
    },
    #[error("expected a {expected}-minute series, got {got}-minute")]
    WrongInterval { expected: u32, got: u32 },
    #[error("no day-ahead price covering hour {0}")]
    UncoveredHour(chrono::NaiveDateTime),
    #[error("train and test ranges overlap")]
    OverlappingRanges,

    // --- markov ---
    #[error("training series is empty")]
    EmptyTraining,
    #[error("training series has fewer than 2 points")]
    TrainingTooShort,
    #[error("invalid node grid: {0}")]
    InvalidGrid(String),

    // --- storage ---
    #[error("invalid storage spec: {0}")]
    InvalidSpec(String),
    #[error("SoC {soc} outside [0, {capacity}] at {context}")]
    SocOutOfBounds {
        soc: f64,
        capacity: f64,
        context: String,
    },
    #[error("infeasible action: p={discharge}, b={charge} from SoC {from} lands at {to}")]
    InfeasibleAction {
        discharge: f64,
        charge: f64,
        from: f64,
        to: f64,
    },

    // --- valuation / policy ---
    #[error("stage index {stage} out of range (T={t_stages})")]
    StageOutOfRange { stage: usize, t_stages: usize },
    #[error("value cube is inconsistent: {0}")]
    BadCube(String),

    // --- simulate ---
    #[error("dispatch traces are misaligned: {0}")]
    MisalignedTraces(String),
    #[error("no simulable day in the test range")]
    NoSimulableDay,

    // --- oracle ---
    #[error("oracle instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("grid DP did not converge within the refinement budget")]
    NoConvergence,

    // --- config / cli ---
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("model file: {0}")]
    BadModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (config, data files,
    /// arguments) as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::NoConvergence
                | Error::InfeasibleAction { .. }
                | Error::BadCube(_)
                | Error::NoSimulableDay
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
