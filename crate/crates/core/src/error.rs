use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("points {first} and {second} are {distance} apart, below the required separation {required}")]
    PointsTooClose {
        first: usize,
        second: usize,
        distance: f64,
        required: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite{}", component.map(|c| alloc::format!(" (component {c})")).unwrap_or_default())]
    NotPositiveDefinite { component: Option<usize> },

    #[error("matrix is singular or numerically rank deficient")]
    Singular,

    #[error("smallest eigenvalue gap {gap:e} is below the identifiability margin")]
    EigGapTooSmall { gap: f64 },

    #[error("components {0} and {1} are not separated by any kernel")]
    NotIdentifiable(usize, usize),

    #[error("kernel list is empty")]
    EmptyKernelList,

    #[error("the identity kernel is the implicit covariance anchor and cannot be listed")]
    IdentityKernelInList,

    #[error("need more observations than variables (n = {n}, p = {p})")]
    TooFewObservations { n: usize, p: usize },

    #[error("rejection sampler gave up after {attempts} attempts; density is degenerate on the region")]
    DegenerateDensity { attempts: usize },

    #[error("row {0} of the unmixing product is zero")]
    ZeroRow(usize),

    #[error("column {0} is constant")]
    ConstantColumn(usize),

    #[error("input matrix is not symmetric")]
    Asymmetric,

    #[error("invalid kernel spec `{0}`")]
    KernelSpec(String),

    #[error("no feasible kernel set among the candidates")]
    NoFeasibleCandidate,
}

pub type Result<T> = core::result::Result<T, Error>;
