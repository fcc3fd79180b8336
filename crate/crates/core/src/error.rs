use thiserror::Error;

/// Every failure the library can report. Variants carry enough context to
/// name the offending input or solver stage.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("derivative order {0} is not supported (maximum is 4)")]
    Order(usize),
    #[error("stability assumption violated: {0}")]
    Stability(String),
    #[error("no convergence in {stage}: {detail}")]
    Convergence { stage: String, detail: String },
    #[error("gamma surface vanishes inside (0,1) near phi = {0}")]
    SingularGamma(f64),
    #[error("tolerance not met in {stage}: achieved {achieved:e}, requested {requested:e}")]
    Tolerance {
        stage: String,
        achieved: f64,
        requested: f64,
    },
    #[error("window too small: s_max = {s_max} exceeds N = {n}")]
    Window { s_max: usize, n: usize },
    #[error("non-positive curvature {curvature:e} met by conjugate gradients in {stage}")]
    NonPositiveCurvature { stage: String, curvature: f64 },
    #[error("config error at key `{key}`: {detail}")]
    Config { key: String, detail: String },
    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
}

impl Error {
    pub(crate) fn convergence(stage: &str, detail: impl Into<String>) -> Self {
        Error::Convergence {
            stage: stage.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: &str, detail: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            detail: detail.into(),
        }
    }

    /// True for errors that stem from user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
