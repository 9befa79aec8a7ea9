use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Core(gdpo::Error),
    Usage(String),
    Data(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 usage, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use gdpo::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::Input(_) | E::Parse { .. } | E::Io(_) | E::Json(_) | E::Csv(_) => 3,
                E::Numeric(_) => 4,
                E::Contract(_) | E::Internal(_) => 1,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl From<gdpo::Error> for CliError {
    fn from(e: gdpo::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}
