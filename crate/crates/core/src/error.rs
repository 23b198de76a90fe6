use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("system is not asymptotically stable (spectral radius {0})")]
    Unstable(f64),

    #[error("degenerate Lyapunov denominator |1 - l_i conj(l_j)| = {0:e} (marginally stable mode)")]
    DegenerateDenominator(f64),

    #[error("Kronecker Lyapunov system is numerically singular")]
    SingularSystem,

    #[error("eigenvalue of PQ has imaginary part {imag:e} (tolerance {tol:e})")]
    ComplexEigenResidual { imag: f64, tol: f64 },

    #[error("eigenvalue of PQ is negative beyond round-off: {0:e}")]
    NegativeGramianProduct(f64),

    #[error("Hankel depth {depth} too small: rho^depth = {residual:e} >= 1e-12")]
    InsufficientDepth { depth: usize, residual: f64 },

    #[error("state {index} has Hankel singular value {sigma:e}, below 1e-12 relative to sigma_1")]
    NearUnobservableState { index: usize, sigma: f64 },

    #[error("eigenvector matrix condition number {0:e} exceeds 1e10")]
    DefectiveMatrix(f64),

    #[error("Schur decomposition did not converge")]
    EigenNoConvergence,

    #[error("resolvent (zI - A) is singular at omega = {0}")]
    ResolventSingular(f64),

    #[error("eigenvalue modulus {0} is not below 1 - 1e-9")]
    UnstableEigenvalue(f64),

    #[error("eigenvalue {0} is real positive; its phase cannot be represented")]
    PhaseDegenerate(f64),

    #[error("matrix (I - A22) is numerically singular")]
    MatrixSingular,

    #[error("requested order {requested} exceeds state dimension {available}")]
    InvalidOrder { requested: usize, available: usize },

    #[error("PQ spectrum is clustered (gap {0:e}); eigenvalue perturbation is invalid")]
    ClusteredSpectrum(f64),

    #[error("sequence length mismatch: {0}")]
    LengthMismatch(String),

    #[error("loss or gradient is not finite")]
    NonFiniteLoss,

    #[error("sequence of length {len} is shorter than the window length {window}")]
    SequenceTooShort { len: usize, window: usize },

    #[error("output channel {0} is constant; fit and NRMSE are undefined")]
    ZeroVariance(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
