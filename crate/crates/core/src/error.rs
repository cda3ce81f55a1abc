use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range user input.
    #[error("invalid input: {0}")]
    Input(String),
    /// The optimal single-armed policy does not induce an aperiodic unichain.
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The W series kept growing. `history` holds sampled term norms.
    #[error("W series did not converge after {iterations} iterations (last term norm {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 1,
            Error::Assumption(_) => 2,
            Error::Numerical(_) | Error::NonConvergence { .. } => 3,
        }
    }
}
