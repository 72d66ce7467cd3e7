//! Edge presence model: independent Bernoulli edges whose log-odds are
//! linear in the edge covariates and in the inferred states of the hidden
//! nodes adjacent to either endpoint.
//!
//! Feature layout: `[1, x_1, ..., x_K, q_h1, ..., q_hH]`, one `q` per hidden
//! node of the node model. `q_h` is the sum, over the pair's endpoints whose
//! tree neighbour is `h`, of the inferred state of `h`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PredictionBatch;
use crate::em::line_search_ascent;
use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::inference::{sigmoid, CovariateBinding, Topology};
use crate::model::{pair_index, pairs, CltmModel, TimeSeriesDataset};

/// Whether hidden states enter as posterior means or as thresholded 0/1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenFeatureMode {
    #[default]
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeFitConfig {
    /// Edge covariates to regress on; `None` uses every covariate in the
    /// dataset schema.
    pub edge_covariates: Option<Vec<String>>,
    pub hidden_mode: HiddenFeatureMode,
    pub l2_strength: f64,
    pub gradient_steps: usize,
    pub learning_rate: f64,
    pub execution: Execution,
}

impl Default for EdgeFitConfig {
    fn default() -> Self {
        EdgeFitConfig {
            edge_covariates: None,
            hidden_mode: HiddenFeatureMode::Soft,
            l2_strength: 1e-3,
            gradient_steps: 5000,
            learning_rate: 1.0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeModel {
    pub edge_covariates: Vec<String>,
    pub hidden_nodes: Vec<String>,
    pub hidden_mode: HiddenFeatureMode,
    /// `[d_0, d_1, ..., d_K, d_h1, ..., d_hH]`.
    pub coefficients: Vec<f64>,
}

/// Sampled edges at `t` among the predicted node set. Pairs outside the set
/// are predicted absent and not listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePrediction {
    pub t: usize,
    pub m: usize,
    /// Dataset column pairs `(i, j)` with `i < j`.
    pub pairs: Vec<(usize, usize)>,
    /// `samples[p]` holds the `m` draws for `pairs[p]`.
    pub samples: Vec<Vec<u8>>,
}

/// Resolved feature sources for one node model and dataset.
struct FeatureMap {
    covariate_columns: Vec<usize>,
    /// For each dataset column, positions (in the hidden list) of its hidden
    /// tree neighbours.
    hidden_neighbours: Vec<Vec<usize>>,
    hidden_count: usize,
    binding: CovariateBinding,
    topology: Topology,
    hidden: Vec<usize>,
}

impl FeatureMap {
    fn new(node_model: &CltmModel, dataset: &TimeSeriesDataset, covariates: &[String]) -> Result<Self> {
        let schema = &dataset.schema.edge_covariates;
        let covariate_columns = covariates
            .iter()
            .map(|name| {
                schema
                    .iter()
                    .position(|c| &c.name == name)
                    .ok_or_else(|| CltmError::SchemaMismatch(format!("unknown edge covariate `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let s = &node_model.structure;
        let binding = CovariateBinding::new(node_model, dataset)?;
        let hidden = s.hidden_indices();
        let adjacency = s.adjacency();
        let mut hidden_neighbours = vec![Vec::new(); dataset.n()];
        for k in 0..s.node_count() {
            if let Some(c) = binding.column(k) {
                for &(nb, _) in &adjacency[k] {
                    if let Some(pos) = hidden.iter().position(|&h| h == nb) {
                        hidden_neighbours[c].push(pos);
                    }
                }
            }
        }
        Ok(FeatureMap {
            covariate_columns,
            hidden_neighbours,
            hidden_count: hidden.len(),
            binding,
            topology: Topology::new(s)?,
            hidden,
        })
    }

    fn width(&self) -> usize {
        1 + self.covariate_columns.len() + self.hidden_count
    }

    /// Hidden-node posteriors at `t` with observed nodes clamped to `states`
    /// (indexed by dataset column).
    fn hidden_states(
        &self,
        node_model: &CltmModel,
        dataset: &TimeSeriesDataset,
        t: usize,
        states: &[u8],
        mode: HiddenFeatureMode,
    ) -> Result<Vec<f64>> {
        let pot = self.binding.potentials(node_model, dataset, t);
        let evidence: Vec<Option<u8>> = self.binding.columns().iter().map(|c| c.map(|c| states[c])).collect();
        let belief = self.topology.sum_product(&pot, &evidence)?;
        Ok(self
            .hidden
            .iter()
            .map(|&h| {
                let q = belief.node_marginals[h];
                match mode {
                    HiddenFeatureMode::Soft => q,
                    HiddenFeatureMode::Hard => f64::from(u8::from(q >= 0.5)),
                }
            })
            .collect())
    }

    fn features(&self, dataset: &TimeSeriesDataset, t: usize, i: usize, j: usize, hidden: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        if let Some(x) = &dataset.edge_covariates {
            let p = pair_index(dataset.n(), i, j);
            out.extend(self.covariate_columns.iter().map(|&c| x[[t, p, c]]));
        }
        let base = out.len();
        out.resize(base + self.hidden_count, 0.0);
        for &end in &[i, j] {
            for &h in &self.hidden_neighbours[end] {
                out[base + h] += hidden[h];
            }
        }
    }
}

/// Logistic regression of the observed edges on the edge covariates and the
/// hidden states inferred with every node clamped to its data at `t`.
/// Features are centred internally (intercept unpenalized) and the returned
/// coefficients refer to the raw features.
pub fn fit_edge_model(dataset: &TimeSeriesDataset, node_model: &CltmModel, config: &EdgeFitConfig) -> Result<EdgeModel> {
    let w = dataset
        .edge_observations
        .as_ref()
        .ok_or_else(|| CltmError::Empty("dataset has no edge observations".into()))?;
    if dataset.burn_in >= dataset.len() {
        return Err(CltmError::Empty("no scored time points".into()));
    }
    let names: Vec<String> = match &config.edge_covariates {
        Some(v) => v.clone(),
        None => dataset.schema.edge_covariates.iter().map(|c| c.name.clone()).collect(),
    };
    let map = FeatureMap::new(node_model, dataset, &names)?;
    let times: Vec<usize> = (dataset.burn_in..dataset.len()).collect();
    let hidden = config.execution.try_map(times.len(), |i| {
        let t = times[i];
        let y: Vec<u8> = (0..dataset.n()).map(|c| dataset.state(t, c)).collect();
        map.hidden_states(node_model, dataset, t, &y, config.hidden_mode)
    })?;

    let width = map.width();
    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut buf = Vec::with_capacity(width);
    for (ti, &t) in times.iter().enumerate() {
        for (i, j) in pairs(dataset.n()) {
            map.features(dataset, t, i, j, &hidden[ti], &mut buf);
            rows.extend_from_slice(&buf);
            labels.push(f64::from(w[[t, pair_index(dataset.n(), i, j)]]));
        }
    }
    let coefficients = fit_logistic(&rows, &labels, width, config)?;
    Ok(EdgeModel {
        edge_covariates: names,
        hidden_nodes: map.hidden.iter().map(|&h| node_model.structure.nodes()[h].id.clone()).collect(),
        hidden_mode: config.hidden_mode,
        coefficients,
    })
}

/// Row-major design `x` (first column all ones) against 0/1 `y`.
fn fit_logistic(x: &[f64], y: &[f64], width: usize, config: &EdgeFitConfig) -> Result<Vec<f64>> {
    let n = y.len();
    if n == 0 {
        return Err(CltmError::Empty("no pair-time samples".into()));
    }
    let mut mean = vec![0.0; width];
    for row in x.chunks(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    mean[0] = 0.0;
    let centred: Vec<f64> = x.chunks(width).flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m)).collect();
    let l2 = config.l2_strength;
    let mut theta = vec![0.0; width];
    line_search_ascent(
        &mut theta,
        config.gradient_steps,
        config.learning_rate,
        1.0 / n as f64,
        1e-10,
        |th| {
            let mut ll = 0.0;
            let mut g = vec![0.0; width];
            for (row, &yi) in centred.chunks(width).zip(y) {
                let xi: f64 = row.iter().zip(th).map(|(a, b)| a * b).sum();
                ll += yi * xi - softplus(xi);
                let r = yi - sigmoid(xi);
                for (gj, xj) in g.iter_mut().zip(row) {
                    *gj += r * xj;
                }
            }
            for j in 1..width {
                ll -= l2 * th[j] * th[j];
                g[j] -= 2.0 * l2 * th[j];
            }
            Ok((ll, g))
        },
    )?;
    theta[0] -= (1..width).map(|j| mean[j] * theta[j]).sum::<f64>();
    Ok(theta)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl EdgeModel {
    /// `logit⁻¹(ξ)` for one feature vector.
    pub fn probability(&self, features: &[f64]) -> f64 {
        sigmoid(self.coefficients.iter().zip(features).map(|(a, b)| a * b).sum())
    }
}

/// Samples `m` Bernoulli draws for every pair inside the predicted node set
/// of `batch`. Hidden states are inferred with the observed nodes clamped to
/// the batch's majority-vote prediction, never to the data at `t`.
pub fn predict_edges(
    edge_model: &EdgeModel,
    node_model: &CltmModel,
    dataset: &TimeSeriesDataset,
    batch: &PredictionBatch,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EdgePrediction> {
    let map = FeatureMap::new(node_model, dataset, &edge_model.edge_covariates)?;
    if map.width() != edge_model.coefficients.len() {
        return Err(CltmError::SchemaMismatch(format!(
            "edge model has {} coefficients, features have {}",
            edge_model.coefficients.len(),
            map.width()
        )));
    }
    let t = batch.t;
    let set = &batch.predicted_node_set;
    let mut out = EdgePrediction {
        t,
        m,
        pairs: Vec::new(),
        samples: Vec::new(),
    };
    if set.len() < 2 {
        return Ok(out);
    }
    let hidden = map.hidden_states(node_model, dataset, t, &batch.predicted_states(), edge_model.hidden_mode)?;
    let mut buf = Vec::new();
    for (a, &i) in set.iter().enumerate() {
        for &j in &set[a + 1..] {
            let (i, j) = (i.min(j), i.max(j));
            map.features(dataset, t, i, j, &hidden, &mut buf);
            let p = edge_model.probability(&buf);
            out.pairs.push((i, j));
            out.samples.push((0..m).map(|_| u8::from(rng.random::<f64>() < p)).collect());
        }
    }
    Ok(out)
}

/// One draw of every pair at `t` (in pair-index order) with the hidden
/// features inferred from the dataset's own states at `t`.
pub(crate) fn sample_edges_at<R: Rng + ?Sized>(
    edge_model: &EdgeModel,
    node_model: &CltmModel,
    dataset: &TimeSeriesDataset,
    t: usize,
    rng: &mut R,
) -> Result<Vec<u8>> {
    let map = FeatureMap::new(node_model, dataset, &edge_model.edge_covariates)?;
    if map.width() != edge_model.coefficients.len() {
        return Err(CltmError::SchemaMismatch(format!(
            "edge model has {} coefficients, features have {}",
            edge_model.coefficients.len(),
            map.width()
        )));
    }
    let y: Vec<u8> = (0..dataset.n()).map(|c| dataset.state(t, c)).collect();
    let hidden = map.hidden_states(node_model, dataset, t, &y, edge_model.hidden_mode)?;
    let mut buf = Vec::new();
    Ok(pairs(dataset.n())
        .map(|(i, j)| {
            map.features(dataset, t, i, j, &hidden, &mut buf);
            u8::from(rng.random::<f64>() < edge_model.probability(&buf))
        })
        .collect())
}
