//! Spatial modeling on areal graphs with truncated autoregressive priors.
//!
//! The precision matrices of the model families here are sparse by
//! construction, so the whole pipeline (posterior sampling over a discrete
//! parameter grid, Kriging prediction for unobserved regions, simulation)
//! runs on factorizations and series expansions of sparse matrices, never on
//! explicit large inverses.

pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod sampler;
pub mod simulate;
pub mod sparse;

pub use error::{Error, ErrorClass, Result};
pub use graph::{AdjacencyGraph, DirectedNeighborSets};
pub use metrics::{score_card, PointScores, ScoreCard};
pub use model::{CarRepresentation, CorrelationSpec, Family, PrecisionModel};
pub use predict::{
    kriging_predict, CovarianceHandle, NeumannConfig, NeumannMode, PowerCache,
    PredictiveSummary,
};
pub use sampler::{sample_posterior, Dataset, FitSummary, PosteriorDraws, PriorConfig};
pub use simulate::{
    motivation_experiment, replicate_study, simulate_dataset, BlockSpec, FitSpec,
    MissingSpec, MotivationResult, ReplicateRecord, SimulationDesign,
};
pub use sparse::{ldl_factor, LdlFactor, SparseMatrix};
