//! Shared domain types: the latent tree, covariate schema, time-series
//! dataset and the linear-potential parameters.

mod dataset;
mod json;
mod params;
mod tree;

pub use dataset::{
    pair_count, pair_index, pairs, Covariate, CovariateDomain, CovariateSchema, TimeSeriesDataset,
    VariableMode, BIAS,
};
pub use params::{edge_arity, node_arity, validate_model, CltmModel, CltmParameters};
pub use tree::{Edge, LatentTreeStructure, Node, ValidationReport, VariableKind, Violation};
