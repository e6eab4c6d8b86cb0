use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("zero matrix has no nonzero singular value")]
    ZeroMatrix,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("KL inequality evaluated at minimizer")]
    AtMinimizer,
    #[error("no closed-form Lipschitz estimate for this loss; set an explicit constant")]
    NoLipschitzEstimate,
    #[error("degenerate initialization")]
    DegenerateInit,
    #[error("certificate required")]
    CertificateRequired,
    #[error("noiseless: no early stop needed")]
    Noiseless,
    #[error("auxiliary fit diverged (residual {residual:e})")]
    FitDiverged { residual: f64 },
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
