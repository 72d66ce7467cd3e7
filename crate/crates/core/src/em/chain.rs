//! Per-node temporal chain CRF: each node's series is an independent chain
//! over time with node potentials linear in the node covariates and one
//! coupling weight between consecutive states.

use ndarray::s;
use serde::{Deserialize, Serialize};

use super::optim::line_search_ascent;
use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::inference::{lse2, sigmoid};
use crate::model::{CovariateSchema, TimeSeriesDataset, VariableMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainCrfConfig {
    pub gradient_steps: usize,
    pub learning_rate: f64,
    pub l2_strength: f64,
    /// When false the coupling weight is held at 0 and each time point is
    /// an independent logistic regression.
    pub couple: bool,
    pub execution: Execution,
}

impl Default for ChainCrfConfig {
    fn default() -> Self {
        ChainCrfConfig {
            gradient_steps: 300,
            learning_rate: 0.1,
            l2_strength: 1e-3,
            couple: true,
            execution: Execution::default(),
        }
    }
}

/// Fitted baseline. `weights[i] = [c_0, c_1, ..., c_K]` and `coupling[i]`
/// belong to dataset column `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCrf {
    pub node_ids: Vec<String>,
    pub schema: CovariateSchema,
    pub weights: Vec<Vec<f64>>,
    pub coupling: Vec<f64>,
}

/// Log-partition and node/transition expectations of one binary chain with
/// node potentials `phi` and coupling `w`.
struct ChainMarginals {
    log_partition: f64,
    ones: Vec<f64>,
    /// `pairs[t] = P(y_t = 1, y_(t+1) = 1)`.
    pairs: Vec<f64>,
}

fn forward_backward(phi: &[f64], w: f64) -> ChainMarginals {
    let n = phi.len();
    let mut alpha = vec![[0.0, 0.0]; n];
    alpha[0] = [0.0, phi[0]];
    for t in 1..n {
        let a = alpha[t - 1];
        alpha[t] = [lse2(a[0], a[1]), phi[t] + lse2(a[0], a[1] + w)];
    }
    let mut beta = vec![[0.0, 0.0]; n];
    for t in (0..n.saturating_sub(1)).rev() {
        let b = beta[t + 1];
        let p = phi[t + 1];
        beta[t] = [lse2(b[0], b[1] + p), lse2(b[0], b[1] + p + w)];
    }
    let z = lse2(alpha[n - 1][0], alpha[n - 1][1]);
    let ones = (0..n).map(|t| (alpha[t][1] + beta[t][1] - z).exp()).collect();
    let pairs = (0..n.saturating_sub(1))
        .map(|t| (alpha[t][1] + w + phi[t + 1] + beta[t + 1][1] - z).exp())
        .collect();
    ChainMarginals {
        log_partition: z,
        ones,
        pairs,
    }
}

struct NodeChain<'a> {
    features: ndarray::ArrayView2<'a, f64>,
    y: Vec<f64>,
}

impl NodeChain<'_> {
    fn phi(&self, w: &[f64]) -> Vec<f64> {
        self.features
            .rows()
            .into_iter()
            .map(|x| w[0] + x.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Log-likelihood and gradient; the coupling weight is the last entry.
    fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let k = theta.len() - 1;
        let w = theta[k];
        let phi = self.phi(&theta[..k]);
        let fb = forward_backward(&phi, w);
        let mut ll = -fb.log_partition;
        let mut grad = vec![0.0; theta.len()];
        for (t, (&yt, &pt)) in self.y.iter().zip(&phi).enumerate() {
            ll += pt * yt;
            let r = yt - fb.ones[t];
            grad[0] += r;
            for (g, x) in grad[1..k].iter_mut().zip(self.features.row(t)) {
                *g += x * r;
            }
        }
        for t in 0..self.y.len().saturating_sub(1) {
            let obs = self.y[t] * self.y[t + 1];
            ll += w * obs;
            grad[k] += obs - fb.pairs[t];
        }
        (ll, grad)
    }
}

fn chains(dataset: &TimeSeriesDataset) -> Vec<NodeChain<'_>> {
    let b = dataset.burn_in;
    (0..dataset.n())
        .map(|i| NodeChain {
            features: dataset.node_covariates.slice(s![b.., i, ..]),
            y: (b..dataset.len()).map(|t| f64::from(dataset.state(t, i))).collect(),
        })
        .collect()
}

fn check(dataset: &TimeSeriesDataset) -> Result<()> {
    if dataset.mode != VariableMode::Binary {
        return Err(CltmError::InvalidModel("the chain CRF requires binary data".into()));
    }
    dataset.check()?;
    if dataset.burn_in >= dataset.len() {
        return Err(CltmError::Empty("no scored time points".into()));
    }
    Ok(())
}

/// Fits one independent chain per node by backtracking gradient ascent on
/// its exact (forward-backward) penalized log-likelihood, from zero weights.
pub fn fit_chain_crf(dataset: &TimeSeriesDataset, config: &ChainCrfConfig) -> Result<ChainCrf> {
    check(dataset)?;
    if !(config.learning_rate > 0.0 && config.l2_strength >= 0.0) {
        return Err(CltmError::InvalidArgument(format!("invalid chain CRF configuration: {config:?}")));
    }
    let chains = chains(dataset);
    let k = dataset.schema.node_arity() + 1;
    let scale = 1.0 / (dataset.len() - dataset.burn_in) as f64;
    let fitted = config.execution.try_map(chains.len(), |i| {
        let chain = &chains[i];
        let mut theta = vec![0.0; k + 1];
        line_search_ascent(&mut theta, config.gradient_steps, config.learning_rate, scale, 1e-10, |x| {
            let (ll, mut g) = chain.evaluate(x);
            if !config.couple {
                g[k] = 0.0;
            }
            let mut pen = 0.0;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj -= 2.0 * config.l2_strength * xj;
                pen += xj * xj;
            }
            Ok((ll - config.l2_strength * pen, g))
        })?;
        Ok::<_, CltmError>(theta)
    })?;
    Ok(ChainCrf {
        node_ids: dataset.node_ids.clone(),
        schema: dataset.schema.clone(),
        weights: fitted.iter().map(|th| th[..k].to_vec()).collect(),
        coupling: fitted.iter().map(|th| th[k]).collect(),
    })
}

impl ChainCrf {
    fn column(&self, dataset: &TimeSeriesDataset, i: usize) -> Result<usize> {
        dataset
            .column_of(&self.node_ids[i])
            .ok_or_else(|| CltmError::SchemaMismatch(format!("dataset lacks node `{}`", self.node_ids[i])))
    }

    fn check_dataset(&self, dataset: &TimeSeriesDataset) -> Result<()> {
        if dataset.schema != self.schema || dataset.n() != self.node_ids.len() {
            return Err(CltmError::SchemaMismatch("dataset does not match the chain CRF".into()));
        }
        Ok(())
    }

    /// Sum over nodes of each chain's exact log-likelihood over the scored
    /// time points.
    pub fn log_likelihood(&self, dataset: &TimeSeriesDataset) -> Result<f64> {
        check(dataset)?;
        self.check_dataset(dataset)?;
        let chains = chains(dataset);
        let mut total = 0.0;
        for i in 0..self.node_ids.len() {
            let c = &chains[self.column(dataset, i)?];
            let mut theta = self.weights[i].clone();
            theta.push(self.coupling[i]);
            total += c.evaluate(&theta).0;
        }
        Ok(total)
    }

    /// `P(y_t = 1 | y_(t-1), x^(t))` for every model node: the chain cut at
    /// `t` and conditioned on the realized past. At `t = 0` the previous
    /// state is taken as 0.
    pub fn probabilities(&self, dataset: &TimeSeriesDataset, t: usize) -> Result<Vec<f64>> {
        self.check_dataset(dataset)?;
        if t >= dataset.len() {
            return Err(CltmError::OutOfRange(format!("t = {t} outside 0..{}", dataset.len())));
        }
        (0..self.node_ids.len())
            .map(|i| {
                let c = self.column(dataset, i)?;
                let x = dataset.node_covariates.slice(s![t, c, ..]);
                let w = &self.weights[i];
                let prev = if t > 0 { f64::from(dataset.state(t - 1, c)) } else { 0.0 };
                let phi = w[0] + x.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>() + self.coupling[i] * prev;
                Ok(sigmoid(phi))
            })
            .collect()
    }
}
