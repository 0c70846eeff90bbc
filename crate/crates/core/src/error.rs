use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lattice too large: {product} = {entries} entries exceeds cap {cap}")]
    Sizing {
        product: String,
        entries: f64,
        cap: usize,
    },

    #[error("level {level} out of range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("operation requires the path layout")]
    LayoutUnsupported,

    #[error("missing integrand segment for step {0}")]
    MissingSegment(usize),

    #[error("result is not measurable at level {0}")]
    NotAdapted(usize),

    #[error("non-finite coefficient output while checking {assumption}")]
    NonFinite {
        assumption: String,
        witness: Vec<f64>,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("resolvent did not converge after {iterations} iterations (residual {residual:e})")]
    ResolventNonConvergence { iterations: usize, residual: f64 },

    #[error("resolvent failed at level {level}, node {node}: residual {residual:e}")]
    ResolventAt {
        level: usize,
        node: usize,
        residual: f64,
    },

    #[error("picard iteration did not converge in {iterations} iterations")]
    PicardNonConvergence { iterations: usize, deltas: Vec<f64> },

    #[error("scenario recombination defect {defect:e} at level {level} exceeds tolerance; use the path layout")]
    NotRecombinable { level: usize, defect: f64 },

    #[error("singular step matrix (I - a dt)")]
    SingularStep,

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}
