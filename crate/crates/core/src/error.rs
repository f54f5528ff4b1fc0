use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("degenerate column `{0}`: no observed entries")]
    DegenerateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("rank-deficient design `{design}`: collinear columns {columns:?}")]
    RankDeficient { design: String, columns: Vec<String> },
    #[error("degenerate treatment: all units have z = {0}")]
    DegenerateTreatment(u8),
    #[error("separation suspected: {0}")]
    SeparationSuspected(String),
    #[error("all regression weights are zero")]
    ZeroWeights,
    #[error("propensity score {value} at row {row} outside (0, 1)")]
    PropensityOutOfRange { row: usize, value: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("non-invertible sensitivity matrix")]
    NonInvertibleSensitivity,
    #[error("sandwich covariance is not positive semidefinite (min eigenvalue {0})")]
    NotPositiveSemidefinite(f64),
    #[error("csv: {0}")]
    Csv(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
