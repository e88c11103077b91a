use thiserror::Error;

/// Errors raised by the separation, center and evaluation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("map grids or frames do not match")]
    GridMismatch,

    #[error("sector {sector} is flat")]
    FlatSector { sector: usize },

    #[error("too few valid sectors: {valid} of {total}")]
    TooFewValid { valid: usize, total: usize },

    #[error("gaussian profile fit did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("no gradients within the search window")]
    EmptyGradientSet,

    #[error("too few pixels for the smooth basis: {included} included, {required} required")]
    TooFewPixels { included: usize, required: usize },

    #[error("penalized normal equations are ill-conditioned")]
    IllConditioned,

    #[error("input map variance {sigma2_m} is not below observation variance {sigma2_y} at pixel {pixel}")]
    VarianceInversionPole { pixel: usize, sigma2_m: f64, sigma2_y: f64 },

    #[error("all variance components are zero")]
    AllZeroVariances,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("conic fit is not an ellipse")]
    NotAnEllipse,

    #[error("{failed} of {total} center draws failed")]
    TooManyFailedDraws { failed: usize, total: usize },

    #[error("no pixels inside the evaluation band")]
    EmptyBand,

    #[error("profile has no positive mass")]
    ZeroProfile,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
