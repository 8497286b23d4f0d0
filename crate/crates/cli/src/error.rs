use std::fmt;
use std::path::Path;

use hirsute_core::ErrorClass;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(hirsute_core::Error),
}

impl CliError {
    /// 1 usage, 2 data, 3 calibration.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Calibration => 3,
            },
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hirsute_core::Error> for CliError {
    fn from(e: hirsute_core::Error) -> Self {
        CliError::Core(e)
    }
}
