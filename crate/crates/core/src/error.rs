use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("descriptor {index} on the {side} side has zero norm")]
    ZeroDescriptor { side: &'static str, index: usize },

    #[error("bearing has zero norm")]
    ZeroBearing,

    #[error("edge ({i}, {j}) references a feature out of range")]
    EdgeOutOfRange { i: usize, j: usize },

    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },

    #[error("similarity {0} outside [-1, 1]")]
    InvalidSimilarity(f64),

    #[error("association graph has no edges")]
    EmptyGraph,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("marginal assignment did not converge after {iterations} iterations (violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("vertex {index} on the {side} side has edges but zero assigned probability")]
    DegenerateAssignment { side: &'static str, index: usize },

    #[error("graph has {edges} edges, enumeration is capped at {cap}")]
    EnumerationCap { edges: usize, cap: usize },

    #[error("search grid is empty")]
    EmptyGrid,

    #[error("mechanism {0} requires a probability assignment")]
    MissingAssignment(&'static str),

    #[error("{location}: {message}")]
    InvalidFile { location: String, message: String },

    #[error("ground truth is not a matching: index {index} repeats on the {side} side")]
    InvalidGroundTruth { side: &'static str, index: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
