//! Independent oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use cltm::inference::PotentialAssignment;
use cltm::model::{
    CltmModel, CltmParameters, Covariate, CovariateSchema, Edge, LatentTreeStructure, Node, TimeSeriesDataset,
    VariableMode,
};
use ndarray::{Array2, Array3};
use rand::Rng;

/// Brute-force log-partition, node marginals `P(z_k = 1)` and edge
/// marginals `P(z_u = 1, z_v = 1)` over every evidence-consistent
/// configuration.
pub struct Enumerated {
    pub log_partition: f64,
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
}

pub fn enumerate(structure: &LatentTreeStructure, pot: &PotentialAssignment, evidence: &[Option<u8>]) -> Enumerated {
    let n = structure.node_count();
    assert!(n <= 20, "enumeration over {n} nodes");
    let mut weights = Vec::new();
    let mut configs = Vec::new();
    for bits in 0u32..(1 << n) {
        let z: Vec<u8> = (0..n).map(|k| ((bits >> k) & 1) as u8).collect();
        if evidence.iter().enumerate().any(|(k, e)| matches!(e, Some(v) if *v != z[k])) {
            continue;
        }
        let mut s = 0.0;
        for k in 0..n {
            s += pot.node_potentials[k] * f64::from(z[k]);
        }
        for (e, edge) in structure.edges().iter().enumerate() {
            s += pot.edge_potentials[e] * f64::from(z[edge.u] * z[edge.v]);
        }
        weights.push(s);
        configs.push(z);
    }
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = weights.iter().map(|w| (w - max).exp()).sum();
    let log_partition = max + total.ln();
    let mut node = vec![0.0; n];
    let mut edge = vec![0.0; structure.edge_count()];
    for (w, z) in weights.iter().zip(&configs) {
        let p = (w - log_partition).exp();
        for k in 0..n {
            node[k] += p * f64::from(z[k]);
        }
        for (e, ed) in structure.edges().iter().enumerate() {
            edge[e] += p * f64::from(z[ed.u] * z[ed.v]);
        }
    }
    Enumerated {
        log_partition,
        node,
        edge,
    }
}

/// Random labelled tree on `n` nodes; each node after the first attaches to
/// a uniformly chosen earlier node. Nodes flagged in `hidden` get ids `h*`.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize, hidden_fraction: f64) -> LatentTreeStructure {
    let mut nodes = Vec::with_capacity(n);
    for k in 0..n {
        // Node 0 stays observed so every structure has an observed node.
        if k > 0 && rng.random::<f64>() < hidden_fraction {
            nodes.push(Node::hidden(format!("h{k}")));
        } else {
            nodes.push(Node::observed(format!("x{k}")));
        }
    }
    let edges = (1..n)
        .map(|k| Edge::new(rng.random_range(0..k), k, rng.random_range(0.2..2.0)))
        .collect();
    LatentTreeStructure::new(nodes, edges).unwrap()
}

pub fn random_potentials<R: Rng>(rng: &mut R, structure: &LatentTreeStructure, scale: f64) -> PotentialAssignment {
    PotentialAssignment {
        node_potentials: (0..structure.node_count()).map(|_| rng.random_range(-scale..scale)).collect(),
        edge_potentials: (0..structure.edge_count()).map(|_| rng.random_range(-scale..scale)).collect(),
        time_index: 0,
    }
}

/// Random binary dataset over the observed nodes of `structure`, with
/// `kn` real node covariates and `ke` real edge covariates.
pub fn random_dataset<R: Rng>(
    rng: &mut R,
    structure: &LatentTreeStructure,
    t_len: usize,
    kn: usize,
    ke: usize,
) -> TimeSeriesDataset {
    let ids: Vec<String> = structure
        .observed_indices()
        .into_iter()
        .map(|k| structure.nodes()[k].id.clone())
        .collect();
    let n = ids.len();
    let states = Array2::from_shape_fn((t_len, n), |_| f64::from(u8::from(rng.random::<bool>())));
    let mut ds = TimeSeriesDataset::from_states(ids, VariableMode::Binary, states).unwrap();
    ds.schema = CovariateSchema::new(
        (0..kn).map(|i| Covariate::real(format!("u{i}"))).collect(),
        (0..ke).map(|i| Covariate::real(format!("v{i}"))).collect(),
    );
    ds.node_covariates = Array3::from_shape_fn((t_len, n, kn), |_| rng.random_range(-1.0..1.0));
    let pairs = n * n.saturating_sub(1) / 2;
    ds.edge_covariates = (ke > 0).then(|| Array3::from_shape_fn((t_len, pairs, ke), |_| rng.random_range(-1.0..1.0)));
    ds.check().unwrap();
    ds
}

/// Model on `structure` with coefficients uniform in `(-scale, scale)`.
pub fn random_model<R: Rng>(rng: &mut R, structure: LatentTreeStructure, schema: CovariateSchema, scale: f64) -> CltmModel {
    let zeros = CltmParameters::zeros(&structure, &schema);
    let flat: Vec<f64> = (0..zeros.len()).map(|_| rng.random_range(-scale..scale)).collect();
    let parameters = zeros.with_flat(&flat);
    CltmModel::new(structure, schema, parameters, VariableMode::Binary).unwrap()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}
