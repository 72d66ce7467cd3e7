//! Ingestion, preprocessing, covariate builders, synthetic data and
//! experiment orchestration.

mod covariates;
mod experiment;
mod ingest;
mod synthetic;

pub use covariates::{build_covariates, leakage_audit, CovariateBuilder, History};
pub use experiment::*;
pub use ingest::{
    aggregate_daily, ratio_sqrt_transform, read_edge_triples, read_states_csv, select_active_nodes, threshold_binary,
    write_edge_triples, write_states_csv, BinnedCounts, EventRecord, RawEventLog,
};
pub use synthetic::{
    generate_synthetic, random_latent_tree, EdgeGeneratorSpec, SyntheticData, SyntheticSpec, TreeShape,
};
