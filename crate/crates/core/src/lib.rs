//! Relative pose estimation under many-to-many feature association.

pub mod association;
pub mod error;
pub mod eval;
pub mod format;
pub mod geometry;
pub mod marginal;
pub mod mechanism;
pub mod search;
pub mod sweep;

pub use association::{AssociationGraph, Bearing, Edge, GroundTruth, Side};
pub use error::{Error, Result};
pub use format::{AssociationFile, RunConfig};
pub use geometry::{PoseParams, RelativePose};
pub use marginal::{assign_marginals, AssignmentConfig, ProbabilityAssignment};
pub use mechanism::{InlierGraph, Mechanism, MechanismConfig};
pub use search::{discretize, SearchGrid, SearchOptions, SearchResult};
