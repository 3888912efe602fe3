use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("charge cutoff {cutoff} cannot host a band of harmonic {required}")]
    CutoffTooSmall { cutoff: usize, required: usize },

    #[error("operator is not Hermitian (max |A - A^H| = {deviation:e}, scale {scale:e})")]
    NotHermitian { deviation: f64, scale: f64 },

    #[error("eigensolver failed on a {dim}x{dim} matrix: {reason}")]
    Eigensolver { dim: usize, reason: String },

    #[error("requested {requested} levels but the basis has only {available}")]
    TooManyLevels { requested: usize, available: usize },

    #[error("cutoff mismatch: operator uses n_cut = {operator}, solution uses n_cut = {solution}")]
    CutoffMismatch { operator: usize, solution: usize },

    #[error("code-space selection of {selection} starved: {reason}")]
    CodeSpace { selection: &'static str, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("integration step {step:e} ns exceeds the stability bound {max:e} ns")]
    StepTooLarge { step: f64, max: f64 },

    #[error("norm drift {drift:e} at t = {time} ns exceeds the abort threshold")]
    NormDrift { time: f64, drift: f64 },

    #[error("trajectory too short to estimate a Rabi frequency: {0}")]
    TrajectoryTooShort(String),

    #[error("target population {target} unreachable at amplitude {amplitude} within {horizon} ns")]
    Unreachable { target: f64, amplitude: f64, horizon: f64 },

    #[error("spectral density returned {value} at omega = {omega}")]
    NegativeSpectralDensity { omega: f64, value: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// `true` for failures caused by the inputs rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::CutoffTooSmall { .. }
                | Error::TooManyLevels { .. }
                | Error::CutoffMismatch { .. }
                | Error::InvalidGrid(_)
                | Error::StepTooLarge { .. }
        )
    }
}
