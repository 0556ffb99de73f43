use thiserror::Error;

/// Errors raised by the constructions and diagnostics in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("grid too small: need nx >= {min_nx} and nt >= {min_nt}, got nx = {nx}, nt = {nt}")]
    GridTooSmall {
        nx: usize,
        nt: usize,
        min_nx: usize,
        min_nt: usize,
    },

    #[error("grids are not congruent")]
    GridMismatch,

    #[error("exponent {exponent:.3e} exceeds the overflow cap {cap}")]
    Overflow { exponent: f64, cap: f64 },

    #[error("singular Gram matrix at (x, t) = ({x}, {t}), condition {cond:.3e}")]
    SingularGram { x: f64, t: f64, cond: f64 },

    #[error("singular Cauchy matrix at (x, t) = ({x}, {t}), condition {cond:.3e}")]
    SingularCauchy { x: f64, t: f64, cond: f64 },

    #[error("spectral parameter {0} coincides with a pole")]
    AtPole(String),

    #[error("degenerate point at (x, t) = ({x}, {t}): |u_tilde - u| below threshold")]
    DegeneratePoint { x: f64, t: f64 },

    #[error("kernel term does not decay on [x, inf): {0}")]
    NonDecaying(String),

    #[error("dispersion relation violated: {0}")]
    DispersionMismatch(String),

    #[error("GLM system matrix is singular, condition {cond:.3e}")]
    SingularM { cond: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("step size underflow: {0}")]
    StepUnderflow(String),

    #[error("ill-conditioned fit, condition {cond:.3e}")]
    IllConditionedFit { cond: f64 },

    #[error("lattice has no defect")]
    NoDefect,

    #[error("lattice has a defect; use the defect variant")]
    DefectPresent,

    #[error("index {index} out of range for {len} sites")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("grid is not reflectable: {0}")]
    NotReflectable(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
