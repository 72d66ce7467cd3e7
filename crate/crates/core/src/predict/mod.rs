//! One-step-ahead prediction and its scores.
//!
//! At each scored `t` a predictor draws `M` samples of every observed node
//! from its distribution given the covariates at `t` (which only look at data
//! before `t`). The predicted node set is every node whose sample mean is at
//! least [`NODE_THRESHOLD`]. Edges are predicted only among that set.

mod edges;
mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub(crate) use edges::sample_edges_at;
pub use edges::{fit_edge_model, predict_edges, EdgeFitConfig, EdgeModel, EdgePrediction, HiddenFeatureMode};
pub use metrics::{
    relative_differences, score_edges, score_nodes, ComparisonSummary, EdgeScore, MetricsReport, MetricsRow,
    NodeScore, Normalization,
};

use crate::em::ChainCrf;
use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::inference::{CovariateBinding, Topology};
use crate::model::{CltmModel, TimeSeriesDataset};

pub const NODE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SAMPLES: usize = 100;

/// `M` sampled assignments of the dataset's observed nodes at time `t`,
/// in dataset column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    pub t: usize,
    pub samples: Vec<Vec<u8>>,
    pub node_means: Vec<f64>,
    /// Dataset columns with `node_means >= NODE_THRESHOLD`.
    pub predicted_node_set: Vec<usize>,
}

impl PredictionBatch {
    pub fn from_samples(t: usize, samples: Vec<Vec<u8>>) -> Result<Self> {
        let n = samples.first().map(Vec::len).ok_or_else(|| CltmError::Empty("no samples".into()))?;
        if samples.iter().any(|s| s.len() != n) {
            return Err(CltmError::LengthMismatch("samples differ in length".into()));
        }
        let m = samples.len() as f64;
        let node_means: Vec<f64> = (0..n)
            .map(|i| samples.iter().map(|s| f64::from(s[i])).sum::<f64>() / m)
            .collect();
        let predicted_node_set = (0..n).filter(|&i| node_means[i] >= NODE_THRESHOLD).collect();
        Ok(PredictionBatch {
            t,
            samples,
            node_means,
            predicted_node_set,
        })
    }

    /// Majority-vote state of every node.
    pub fn predicted_states(&self) -> Vec<u8> {
        self.node_means.iter().map(|&m| u8::from(m >= NODE_THRESHOLD)).collect()
    }
}

/// Anything that can draw one-step-ahead samples of a dataset's nodes.
pub trait OneStepPredictor: Sync {
    fn sample_batch(&self, dataset: &TimeSeriesDataset, t: usize, m: usize, rng: &mut ChaCha8Rng)
        -> Result<PredictionBatch>;
}

fn check_time(dataset: &TimeSeriesDataset, t: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(CltmError::InvalidArgument("M must be at least 1".into()));
    }
    if t >= dataset.len() {
        return Err(CltmError::OutOfRange(format!("t = {t} outside 0..{}", dataset.len())));
    }
    if t < dataset.burn_in {
        return Err(CltmError::OutOfRange(format!(
            "t = {t} lies in the burn-in (first {} points) where lagged covariates are undefined",
            dataset.burn_in
        )));
    }
    Ok(())
}

/// Draws `m` evidence-free samples of the whole tree at `t` and keeps the
/// observed nodes.
pub fn predict_one_step(
    model: &CltmModel,
    dataset: &TimeSeriesDataset,
    t: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionBatch> {
    model.sample_batch(dataset, t, m, rng)
}

impl OneStepPredictor for CltmModel {
    fn sample_batch(&self, dataset: &TimeSeriesDataset, t: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<PredictionBatch> {
        check_time(dataset, t, m)?;
        let binding = CovariateBinding::new(self, dataset)?;
        let topology = Topology::new(&self.structure)?;
        let pot = binding.potentials(self, dataset, t);
        let sampler = topology.sampler(&pot, &[])?;
        let mut z = vec![0u8; self.structure.node_count()];
        let samples = (0..m)
            .map(|_| {
                sampler.draw_into(rng, &mut z);
                let mut row = vec![0u8; dataset.n()];
                for (k, c) in binding.columns().iter().enumerate() {
                    if let Some(c) = c {
                        row[*c] = z[k];
                    }
                }
                row
            })
            .collect();
        PredictionBatch::from_samples(t, samples)
    }
}

impl OneStepPredictor for ChainCrf {
    fn sample_batch(&self, dataset: &TimeSeriesDataset, t: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<PredictionBatch> {
        check_time(dataset, t, m)?;
        let p = self.probabilities(dataset, t)?;
        let cols: Vec<usize> = self
            .node_ids
            .iter()
            .map(|id| dataset.column_of(id).expect("checked by probabilities"))
            .collect();
        let samples = (0..m)
            .map(|_| {
                let mut row = vec![0u8; dataset.n()];
                for (pi, &c) in p.iter().zip(&cols) {
                    row[c] = u8::from(rng.random::<f64>() < *pi);
                }
                row
            })
            .collect();
        PredictionBatch::from_samples(t, samples)
    }
}

/// Random stream for time point `t`: independent of scheduling.
pub fn stream_for(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// One batch for each `t` in `times`, each from its own `(seed, t)` stream.
pub fn predict_series<P: OneStepPredictor + ?Sized>(
    predictor: &P,
    dataset: &TimeSeriesDataset,
    times: std::ops::Range<usize>,
    m: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<PredictionBatch>> {
    let start = times.start;
    execution.try_map(times.len(), |i| {
        let t = start + i;
        predictor.sample_batch(dataset, t, m, &mut stream_for(seed, t))
    })
}
