use thiserror::Error;

/// Errors raised anywhere in the certification pipeline.
#[derive(Debug, Error)]
pub enum CertError {
    #[error("transform is not symplectic: |S^T Omega S - Omega|_max = {norm:.3e}")]
    NotSymplectic { norm: f64 },

    #[error("matrix is not orthogonal: |O^T O - I|_max = {norm:.3e}")]
    NotOrthogonal { norm: f64 },

    #[error("invalid squeezing entries: {0}")]
    InvalidSqueezing(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("class mismatch: {0}")]
    ClassMismatch(String),

    #[error("state is unphysical: {0}")]
    Unphysical(String),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("cutoff {cutoff} too small: {reason}")]
    Cutoff { cutoff: usize, reason: String },

    #[error("post-selection probability {0:.3e} is below threshold")]
    ZeroProbability(f64),

    #[error("fidelity is 1, photon mismatch undefined")]
    PerfectFidelity,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing moment estimate for {0}")]
    MissingMoment(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("budget of {requested} samples exceeds the limit {limit}")]
    BudgetOverflow { requested: u64, limit: u64 },

    #[error("insufficient pilot data: {0}")]
    InsufficientPilot(String),

    #[error("{stage}: {inner}")]
    Stage { stage: &'static str, inner: Box<CertError> },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CertError>;

impl CertError {
    /// Tags an error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> CertError {
        CertError::Stage { stage, inner: Box::new(self) }
    }
}
