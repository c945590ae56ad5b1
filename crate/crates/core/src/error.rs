use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("kernel singularity: {0}")]
    Singularity(String),
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
    #[error("potential vanishes identically on the grid")]
    ZeroPotential,
    #[error("zero energy is not a regular point: sigma_min = {sigma_min:.3e} <= tau = {tau:.3e}")]
    NotRegular { sigma_min: f64, tau: f64 },
    #[error("singular operator {what}: condition estimate {condition:.3e}")]
    Singular { what: String, condition: f64 },
    #[error("quadrature did not converge: {0}")]
    Nonconvergence(String),
    #[error("fit refused: {0}")]
    Fit(String),
    #[error("lattice too large: {sites} sites exceeds cap {cap}; use a coarser spacing h or the chebyshev backend")]
    LatticeTooLarge { sites: usize, cap: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// Validation failures map to exit status 2, numerical failures to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) | Error::Domain(_) | Error::Precondition(_) | Error::ZeroPotential => 2,
            Error::Io(_) | Error::Csv(_) => 1,
            _ => 3,
        }
    }
}
