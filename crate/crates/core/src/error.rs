use alloc::string::String;

/// Errors produced by the estimation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("adaptive quadrature did not reach tolerance within {budget} subintervals")]
    QuadratureFailure { budget: usize },

    #[error("tone frequencies have no rational common fundamental")]
    NoCommonPeriod,

    #[error("frequency {f} Hz too high: no positive delay leaves room for the overhead")]
    FrequencyTooHigh { f: f64 },

    #[error("fit did not converge within {iterations} iterations")]
    FitDiverged { iterations: usize },

    #[error("normal matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("no degrees of freedom left: {points} points for {params} parameters")]
    DegenerateDof { points: usize, params: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{clamped} of {total} points needed clamping; trace is outside the invertible regime")]
    NotInvertible { clamped: usize, total: usize },

    #[error("wrap branches at {first:e} T and {second:e} T fit equally well")]
    Ambiguous { first: f64, second: f64 },

    #[error("uncertainty series spans less than one decade of measurement time")]
    InsufficientSpan,

    #[error("samples are not uniformly spaced in time")]
    NonUniformSampling,
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::InsufficientData(_)
                | Error::InsufficientSpan
                | Error::NonUniformSampling
                | Error::DegenerateDof { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
