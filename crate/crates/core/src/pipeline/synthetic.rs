//! Synthetic latent trees and ground-truth processes.
//!
//! The generator draws a random latent tree, random coefficients in the
//! given ranges, then rolls the process forward: covariates at `t` are built
//! from the realized history before `t`, states are sampled exactly from the
//! tree, and edges (when requested) are sampled from a known edge model whose
//! hidden features are inferred from the states at `t`.

use chrono::NaiveDate;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::covariates::{build_covariates, check_builders, features_before, layout, CovariateBuilder};
use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::inference::{CovariateBinding, Topology};
use crate::model::{
    edge_arity, node_arity, pair_count, CltmModel, CltmParameters, Edge, LatentTreeStructure, Node, TimeSeriesDataset,
    VariableMode,
};
use crate::predict::{sample_edges_at, EdgeModel, HiddenFeatureMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeShape {
    pub n_observed: usize,
    pub n_hidden: usize,
    /// Attach every observed node to a hidden node.
    pub observed_leaves_only: bool,
    pub min_length: f64,
    pub max_length: f64,
}

impl Default for TreeShape {
    fn default() -> Self {
        TreeShape {
            n_observed: 6,
            n_hidden: 2,
            observed_leaves_only: true,
            min_length: 0.2,
            max_length: 2.0,
        }
    }
}

/// A random tree with hidden nodes `h0..` of degree at least 3 and observed
/// nodes `x0..`. Edge lengths are uniform in `[min_length, max_length]`.
///
/// Hidden nodes first form a random tree of maximum degree 3; every hidden
/// degree deficit is then filled by a distinct observed node and the rest of
/// the observed nodes attach uniformly at random.
pub fn random_latent_tree<R: Rng + ?Sized>(shape: &TreeShape, rng: &mut R) -> Result<LatentTreeStructure> {
    let (no, nh) = (shape.n_observed, shape.n_hidden);
    if !(shape.min_length > 0.0 && shape.min_length <= shape.max_length) {
        return Err(CltmError::Infeasible(format!(
            "edge length range [{}, {}]",
            shape.min_length, shape.max_length
        )));
    }
    let needed = match nh {
        0 => 1,
        1 => 3,
        h => h + 2,
    };
    if no < needed {
        return Err(CltmError::Infeasible(format!(
            "{nh} hidden nodes of degree >= 3 need at least {needed} observed nodes, got {no}"
        )));
    }
    let mut nodes: Vec<Node> = (0..no).map(|i| Node::observed(format!("x{i}"))).collect();
    nodes.extend((0..nh).map(|h| Node::hidden(format!("h{h}"))));
    let hidden = |h: usize| no + h;
    let length = |rng: &mut R| rng.random_range(shape.min_length..=shape.max_length);
    let mut edges = Vec::new();
    let mut degree = vec![0usize; nh];
    for h in 1..nh {
        let open: Vec<usize> = (0..h).filter(|&p| degree[p] < 3).collect();
        let p = open[rng.random_range(0..open.len())];
        degree[p] += 1;
        degree[h] += 1;
        edges.push(Edge::new(hidden(p), hidden(h), length(rng)));
    }
    let mut order: Vec<usize> = (0..no).collect();
    for i in (1..no).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut next = order.into_iter();
    for (h, &d) in degree.iter().enumerate() {
        for _ in d..3 {
            let x = next.next().expect("feasibility checked");
            edges.push(Edge::new(x, hidden(h), length(rng)));
        }
    }
    let mut placed: Vec<usize> = (0..nh).map(hidden).collect();
    placed.extend(edges.iter().filter(|e| e.u < no).map(|e| e.u));
    for x in next {
        let anchors: Vec<usize> = if shape.observed_leaves_only && nh > 0 {
            (0..nh).map(hidden).collect()
        } else {
            placed.clone()
        };
        if anchors.is_empty() {
            placed.push(x);
            continue;
        }
        let a = anchors[rng.random_range(0..anchors.len())];
        edges.push(Edge::new(x.min(a), x.max(a), length(rng)));
        placed.push(x);
    }
    LatentTreeStructure::new(nodes, edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeGeneratorSpec {
    /// Range of every edge-model coefficient `d`.
    pub coefficient_range: [f64; 2],
    pub hidden_mode: HiddenFeatureMode,
}

impl Default for EdgeGeneratorSpec {
    fn default() -> Self {
        EdgeGeneratorSpec {
            coefficient_range: [-1.0, 1.0],
            hidden_mode: HiddenFeatureMode::Soft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub shape: TreeShape,
    pub builders: Vec<CovariateBuilder>,
    pub time_steps: usize,
    /// Range of the node intercepts `c_0`.
    pub bias_range: [f64; 2],
    /// Subtract half the incident couplings from every intercept, so that
    /// with zero covariates every marginal is exactly 1/2.
    pub centred_bias: bool,
    /// Range of the node covariate coefficients.
    pub node_weight_range: [f64; 2],
    /// Range of the edge intercepts (couplings).
    pub coupling_range: [f64; 2],
    /// Range of the edge covariate coefficients on observed-observed edges.
    pub edge_weight_range: [f64; 2],
    pub edges: Option<EdgeGeneratorSpec>,
    /// Dates the time points consecutively from this day.
    pub start_date: Option<NaiveDate>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            shape: TreeShape::default(),
            builders: vec![CovariateBuilder::Lag { k: 1 }],
            time_steps: 1000,
            bias_range: [0.0, 0.0],
            centred_bias: true,
            node_weight_range: [-1.0, 1.0],
            coupling_range: [3.0, 5.0],
            edge_weight_range: [-0.5, 0.5],
            edges: None,
            start_date: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub model: CltmModel,
    pub dataset: TimeSeriesDataset,
    pub edge_model: Option<EdgeModel>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> Result<f64> {
    match range {
        [a, b] if a == b => Ok(a),
        [a, b] if a < b => Ok(rng.random_range(a..b)),
        [a, b] => Err(CltmError::Infeasible(format!("empty range [{a}, {b}]"))),
    }
}

/// Draws a ground-truth model and rolls it forward for `time_steps` steps.
/// Fully determined by `spec` (including its seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.time_steps == 0 {
        return Err(CltmError::Infeasible("zero time steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let structure = random_latent_tree(&spec.shape, &mut rng)?;
    let lay = layout(&spec.builders)?;
    let schema = lay.schema.clone();

    let mut edge_weights = Vec::with_capacity(structure.edge_count());
    for e in 0..structure.edge_count() {
        let mut w = vec![uniform(&mut rng, spec.coupling_range)?];
        for _ in 0..edge_arity(&structure, &schema, e) {
            w.push(uniform(&mut rng, spec.edge_weight_range)?);
        }
        edge_weights.push(w);
    }
    let mut node_weights = Vec::with_capacity(structure.node_count());
    for k in 0..structure.node_count() {
        let mut c0 = uniform(&mut rng, spec.bias_range)?;
        if spec.centred_bias {
            c0 -= 0.5
                * structure
                    .edges()
                    .iter()
                    .zip(&edge_weights)
                    .filter(|(e, _)| e.touches(k))
                    .map(|(_, w)| w[0])
                    .sum::<f64>();
        }
        let mut w = vec![c0];
        for _ in 0..node_arity(&structure, &schema, k) {
            w.push(uniform(&mut rng, spec.node_weight_range)?);
        }
        node_weights.push(w);
    }
    let model = CltmModel::new(
        structure,
        schema.clone(),
        CltmParameters {
            node_weights,
            edge_weights,
        },
        VariableMode::Binary,
    )?;

    let ids: Vec<String> = model
        .structure
        .observed_indices()
        .into_iter()
        .map(|k| model.structure.nodes()[k].id.clone())
        .collect();
    let (t_len, n) = (spec.time_steps, ids.len());
    let mut ds = TimeSeriesDataset::from_states(ids, VariableMode::Binary, Array2::zeros((t_len, n)))?;
    ds.dates = spec
        .start_date
        .map(|d| (0..t_len as u64).map(|i| d + chrono::Days::new(i)).collect());
    if spec.edges.is_some() {
        ds.edge_observations = Some(Array2::zeros((t_len, pair_count(n))));
    }
    check_builders(&spec.builders, &ds)?;
    ds.schema = schema.clone();
    ds.node_covariates = Array3::zeros((t_len, n, schema.node_arity()));
    ds.edge_covariates = (schema.edge_arity() > 0).then(|| Array3::zeros((t_len, pair_count(n), schema.edge_arity())));

    let edge_model = match &spec.edges {
        Some(e) => {
            let hidden = model.structure.hidden_indices();
            let width = 1 + schema.edge_arity() + hidden.len();
            let coefficients = (0..width)
                .map(|_| uniform(&mut rng, e.coefficient_range))
                .collect::<Result<Vec<_>>>()?;
            Some(EdgeModel {
                edge_covariates: schema.edge_covariates.iter().map(|c| c.name.clone()).collect(),
                hidden_nodes: hidden.iter().map(|&h| model.structure.nodes()[h].id.clone()).collect(),
                hidden_mode: e.hidden_mode,
                coefficients,
            })
        }
        None => None,
    };

    let binding = CovariateBinding::new(&model, &ds)?;
    let topology = Topology::new(&model.structure)?;
    let free = vec![None; model.structure.node_count()];
    for t in 0..t_len {
        let (nv, ev) = features_before(&spec.builders, &lay, &ds, t);
        let kn = schema.node_arity();
        for (idx, v) in nv.into_iter().enumerate() {
            ds.node_covariates[[t, idx / kn, idx % kn]] = v;
        }
        if let Some(x) = ds.edge_covariates.as_mut() {
            let ke = schema.edge_arity();
            for (idx, v) in ev.into_iter().enumerate() {
                x[[t, idx / ke, idx % ke]] = v;
            }
        }
        let pot = binding.potentials(&model, &ds, t);
        let z = topology.sampler(&pot, &free)?.draw(&mut rng);
        for k in 0..model.structure.node_count() {
            if let Some(c) = binding.column(k) {
                ds.states[[t, c]] = f64::from(z[k]);
            }
        }
        if let Some(em) = &edge_model {
            let row = sample_edges_at(em, &model, &ds, t, &mut rng)?;
            let w = ds.edge_observations.as_mut().expect("allocated with the edge model");
            for (p, v) in row.into_iter().enumerate() {
                w[[t, p]] = v;
            }
        }
    }

    let dataset = build_covariates(&ds, &spec.builders, Execution::Sequential)?;
    debug_assert_eq!(dataset.node_covariates, ds.node_covariates);
    Ok(SyntheticData {
        model,
        dataset,
        edge_model,
    })
}
