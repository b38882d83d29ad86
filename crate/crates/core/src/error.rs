use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("non-finite value at node {node} (x = {coords:?})")]
    NonFinite { node: usize, coords: Vec<f64> },

    #[error("metric not positive-definite at node {node} (x = {coords:?})")]
    NotPositiveDefinite { node: usize, coords: Vec<f64> },

    #[error("metric ill-conditioned at node {node}: condition number {condition:.3e}")]
    IllConditioned { node: usize, condition: f64 },

    #[error("derivative order {order} too high for lattice with {points} points per axis")]
    OrderTooHigh { order: usize, points: usize },

    #[error("kernel under-resolved: t = {t} < 2h = {}", 2.0 * h)]
    KernelUnderResolved { t: f64, h: f64 },

    #[error("scale too large for domain: {0}")]
    ScaleTooLarge(String),

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate plane: Gram determinant {gram:.3e}")]
    DegeneratePlane { gram: f64 },

    #[error("node {node} is outside the valid mask")]
    OutsideMask { node: usize },

    #[error("cover gap in chart {chart} at x = {coords:?}: bump sum {denominator}")]
    CoverGap {
        chart: String,
        coords: Vec<f64>,
        denominator: f64,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Config(_)
                | Error::InvalidParameter(_)
                | Error::InvalidLattice(_)
        )
    }
}
