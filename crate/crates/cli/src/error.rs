use std::fmt;

/// Failure of a command, carrying its exit code: 2 for anything wrong with
/// the inputs or configuration, 3 when an estimator fails to fit.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fit(_) => 3,
        }
    }

    pub fn fit(method: impl fmt::Display, e: miwols::Error) -> Self {
        CliError::Fit(format!("{method} failed: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Fit(m) => write!(f, "fitting error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<miwols::Error> for CliError {
    fn from(e: miwols::Error) -> Self {
        use miwols::Error as E;
        match e {
            E::InvalidData(_) | E::UnknownColumn(_) | E::Csv(_) | E::Config(_) | E::DegenerateColumn(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Fit(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}
