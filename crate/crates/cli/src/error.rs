use std::path::PathBuf;

use thiserror::Error;

/// Process exit status for a bad configuration or bad data.
pub const EXIT_INPUT: u8 = 2;
/// Process exit status for an optimizer or linear-algebra failure.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}", data_message(path, source))]
    Data {
        path: PathBuf,
        source: rqlr_core::Error,
    },

    #[error(transparent)]
    Core(#[from] rqlr_core::Error),

    #[error("{0}")]
    Numerical(String),
}

fn data_message(path: &std::path::Path, source: &rqlr_core::Error) -> String {
    match source {
        rqlr_core::Error::NonFiniteData { row, col } => format!(
            "{}: missing or non-numeric value in data row {} (line {}), selected column {}",
            path.display(),
            row + 1,
            row + 2,
            col + 1
        ),
        e => format!("{}: {e}", path.display()),
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use rqlr_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Data { .. } => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Core(source) => match source {
                E::DimensionMismatch { .. }
                | E::InsufficientData { .. }
                | E::NonFiniteData { .. }
                | E::InvalidStructural(_)
                | E::InvalidInput(_)
                | E::EmptyCrossSection { .. }
                | E::InfeasibleRestriction(_) => EXIT_INPUT,
                E::SingularTau { .. }
                | E::NotInvertible(_)
                | E::NoConvergence(_)
                | E::SingularJ11 { .. }
                | E::InfeasiblePolyhedron => EXIT_NUMERICAL,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
