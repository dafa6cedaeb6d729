//! Exit-code classification.

use std::fmt;
use std::process::ExitCode;

/// A failed command: bad input or arguments (exit 2) or a failed computation (exit 1).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Compute(String),
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(msg.to_string())
    }

    pub fn compute(msg: impl fmt::Display) -> Self {
        Failure::Compute(msg.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Compute(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Compute(m) => f.write_str(m),
        }
    }
}

impl From<adstop::Error> for Failure {
    fn from(e: adstop::Error) -> Self {
        use adstop::Error as E;
        match e {
            E::FilterDegenerate { .. } | E::NoCompletedRollouts { .. } | E::InfeasiblePolicy(_) => Failure::compute(e),
            E::InvalidModel(_)
            | E::Domain(_)
            | E::Dimension { .. }
            | E::TooManyStates { .. }
            | E::Json(_)
            | E::Csv(_)
            | E::Io(_) => Failure::usage(e),
        }
    }
}
