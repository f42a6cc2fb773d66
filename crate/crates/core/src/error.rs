use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("density weight at sample {index} is not strictly positive ({value})")]
    NonPositiveDensity { index: usize, value: f64 },

    #[error("degenerate bandwidth: {0}")]
    DegenerateBandwidth(String),

    #[error("linear system is not positive definite: {0}")]
    Conditioning(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("singular matrix: |det| = {det:e}")]
    Singular { det: f64 },

    #[error("retraction failed at iterate {iterate}: {source}")]
    Step {
        iterate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite objective value at iterate {iterate}")]
    NonFiniteObjective { iterate: usize },

    #[error("brute-force bound {bound} is below the certified bound {certified}")]
    CertificationFailure { bound: i64, certified: i64 },

    #[error("projection row {0} has zero L1 mass")]
    ZeroMassRow(usize),

    #[error("all projection moments vanish; the object's centroid sits at the rotation center (shift the support off-center)")]
    DegenerateCentroid,

    #[error("zero gradient at the anchor point; try a larger neighbor count")]
    ZeroAnchorGradient,

    #[error("sign propagation broke at window {0}: no previously signed points")]
    PropagationBreak(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::LengthMismatch { what, got, expected });
    }
    Ok(())
}
