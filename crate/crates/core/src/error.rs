use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    // data
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("bad value {value:?} at row {row}, column `{column}`")]
    BadValue { row: usize, column: String, value: String },
    #[error("row {row}: y = 1 with m = 0 (force is only recorded for stops)")]
    MandatoryReportingViolation { row: usize },
    #[error("row {row}, column `{column}`: value must be 0 or 1")]
    NonBinaryField { row: usize, column: String },
    #[error("row {row}: administrative table contains an unstopped row (m = 0)")]
    NotAdministrative { row: usize },
    #[error("column `{column}`: level {value:?} is not in the schema")]
    UnknownLevel { column: String, value: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("table has no rows")]
    EmptyTable,

    // stats
    #[error("perfect separation detected (coefficient norm {norm:.3e})")]
    Separation { norm: f64 },
    #[error("response takes a single value; model is not identified")]
    AllSameResponse,
    #[error("weighted normal equations are singular")]
    SingularWeightedSystem,
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("kernel estimate requested on an empty point set")]
    EmptyPointSet,
    #[error("all kernel weights are zero")]
    AllZeroWeights,
    #[error("invalid bandwidth {0}")]
    InvalidBandwidth(f64),

    // mobility
    #[error("flow matrix row {0} sums to zero")]
    ZeroRow(usize),
    #[error("precinct {precinct}: proportion {value} outside [0, 1]")]
    InvalidProportion { precinct: usize, value: f64 },

    // crr
    #[error("denominator probability {value:.3e} below 1e-10")]
    DegenerateDenominator { value: f64 },
    #[error("precinct {precinct}: {rows} stops, fewer than the floor of {floor}")]
    InsufficientData { precinct: usize, rows: usize, floor: usize },

    // race and place
    #[error("density below 1e-12 at r = {r}")]
    DensityUnderflow { r: f64 },
    #[error("r = {r} outside the supported range [{lo}, {hi}]")]
    OutOfRange { r: f64, lo: f64, hi: f64 },
    #[error("density input must be positive")]
    ZeroDensity,
    #[error("curves do not share the same grid and baseline")]
    GridMismatch,

    // sensitivity / benchmark
    #[error("table has no confounder column `u`")]
    MissingConfounder,
    #[error("oracle limited to 12 values, got {n}")]
    TooLarge { n: usize },
    #[error("target {name} = {value} outside [0, 1)")]
    TargetOutOfRange { name: String, value: f64 },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
