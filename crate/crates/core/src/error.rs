use std::path::PathBuf;

use serde::Serialize;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("negative moment or inverse weighting requested on a measure with an atom at zero")]
    SingularSupport,

    #[error("regression vector is zero; there is no dependence between X and Y to analyze")]
    ZeroRegressionVector,

    #[error("column `{column}` is constant and cannot be normalized")]
    ConstantColumn { column: String },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        /// 1-based line in the input file (the header is line 1).
        row: usize,
        col: String,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures caused by the numbers themselves (singular or
    /// degenerate inputs) rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularCovariance(_)
                | Error::SingularSupport
                | Error::ZeroRegressionVector
                | Error::OutOfDomain(_)
        )
    }
}

/// Non-fatal conditions attached to results.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// Predictors were rescaled to unit variance. Rescaling changes both the
    /// covariance and the causal vector jointly, so the genericity argument
    /// behind the estimator no longer applies; treat the estimate with care.
    NormalizedPredictors,
    /// All eigenvalues of the covariance coincide; the spectral measure
    /// carries no information and the estimate defaults to zero.
    DegenerateSpectrum,
    /// A converted strength fell outside [0, 1] and was clamped.
    Clamped { raw: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::NormalizedPredictors => write!(
                f,
                "predictors were normalized to unit variance; results on normalized data are not backed by the method's assumptions"
            ),
            Warning::DegenerateSpectrum => {
                write!(f, "covariance spectrum is degenerate; estimate defaults to beta = 0")
            }
            Warning::Clamped { raw } => write!(f, "value {raw} clamped to [0, 1]"),
        }
    }
}
