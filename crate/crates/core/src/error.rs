use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid local dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not unitary (residual {0:.3e})")]
    NotUnitary(f64),

    #[error("matrix is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),

    #[error("observable does not satisfy U^{d} = I (residual {residual:.3e})")]
    NotCyclic { d: usize, residual: f64 },

    #[error("observable is not an involution (residual {0:.3e})")]
    NotInvolution(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("index {index} out of range for size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{op} is only defined for the {expected} family")]
    UnsupportedFamily { op: &'static str, expected: &'static str },

    #[error("enumeration needs {strategies} deterministic strategies, above the cap of {cap}")]
    EnumerationCap { strategies: u128, cap: u64 },

    #[error("not certifiable: {0}")]
    NotCertifiable(String),

    #[error("observable spectrum inconsistent with a {d}-outcome measurement: {reason}")]
    Spectrum { d: usize, reason: String },

    #[error("invalid correlation table: {0}")]
    InvalidTable(String),

    #[error("correlation table for {parties} parties exceeds the cap of {cap}; evaluate the functional on the state instead")]
    TableTooLarge { parties: usize, cap: usize },

    #[error("term references unavailable setting {setting} for party {party}")]
    UnavailableSetting { party: usize, setting: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
