//! Parameter estimation by expectation-maximization, and the chain CRF
//! baseline.
//!
//! The E-step clamps every observed node to its state at `t` and collects
//! the posterior node and pairwise expectations. The M-step runs a fixed
//! number of backtracking gradient-ascent steps on the expected complete-data
//! log-likelihood (minus an L2 penalty) with the expectations held fixed.
//! Each M-step step is non-decreasing in that objective, which makes every
//! EM iteration non-decreasing in the penalized observed log-likelihood.
//!
//! Only time points from `dataset.burn_in` on enter any sum.

mod chain;
mod optim;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use chain::{fit_chain_crf, ChainCrf, ChainCrfConfig};
pub(crate) use optim::{line_search_ascent, norm};

use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::inference::{CovariateBinding, Topology};
use crate::model::{CltmModel, CltmParameters, CovariateSchema, LatentTreeStructure, TimeSeriesDataset, VariableMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// EM stops once the penalized log-likelihood, averaged per scored time
    /// point, improves by less than this.
    pub likelihood_tolerance: f64,
    pub gradient_steps_per_m_step: usize,
    pub learning_rate: f64,
    pub l2_strength: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub restarts: usize,
    pub execution: Execution,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 200,
            likelihood_tolerance: 1e-5,
            gradient_steps_per_m_step: 25,
            learning_rate: 0.1,
            l2_strength: 1e-3,
            init_scale: 0.1,
            seed: 0,
            restarts: 3,
            execution: Execution::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.likelihood_tolerance > 0.0
            && self.gradient_steps_per_m_step > 0
            && self.learning_rate > 0.0
            && self.l2_strength >= 0.0
            && self.init_scale >= 0.0
            && self.restarts > 0;
        if ok {
            Ok(())
        } else {
            Err(CltmError::InvalidArgument(format!("invalid EM configuration: {self:?}")))
        }
    }
}

/// Posterior expectations under the evidence of each scored time point.
/// Rows are scored time points (`burn_in..T`), columns are structure nodes
/// or edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub first_time: usize,
    pub node_expectations: Array2<f64>,
    pub edge_expectations: Array2<f64>,
}

/// One row of an EM trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub run: usize,
    pub iteration: usize,
    pub log_likelihood: f64,
    /// `log_likelihood - l2 * ||θ||²`, the quantity EM never decreases.
    pub objective: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub rows: Vec<TraceRow>,
    pub best_run: usize,
    /// M-steps whose line search ran out of halvings.
    pub stalled_m_steps: usize,
}

impl EmTrace {
    pub fn run(&self, run: usize) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.run == run)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run", "iteration", "log_likelihood", "objective", "gradient_norm"])?;
        for r in &self.rows {
            w.write_record([
                r.run.to_string(),
                r.iteration.to_string(),
                format!("{:.12e}", r.log_likelihood),
                format!("{:.12e}", r.objective),
                format!("{:.12e}", r.gradient_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Model, dataset and traversal bound together for repeated evaluation at
/// different parameter values.
pub(crate) struct Problem<'a> {
    template: &'a CltmParameters,
    dataset: &'a TimeSeriesDataset,
    binding: CovariateBinding,
    topology: Topology,
    first: usize,
    execution: Execution,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a CltmModel, dataset: &'a TimeSeriesDataset, execution: Execution) -> Result<Self> {
        if model.mode != VariableMode::Binary || dataset.mode != VariableMode::Binary {
            return Err(CltmError::InvalidModel("EM and likelihoods require binary mode".into()));
        }
        dataset.check()?;
        if dataset.burn_in >= dataset.len() {
            return Err(CltmError::Empty(format!(
                "no scored time points: burn-in {} of {} points",
                dataset.burn_in,
                dataset.len()
            )));
        }
        Ok(Problem {
            template: &model.parameters,
            dataset,
            binding: CovariateBinding::new(model, dataset)?,
            topology: Topology::new(&model.structure)?,
            first: dataset.burn_in,
            execution,
        })
    }

    pub fn scored(&self) -> usize {
        self.dataset.len() - self.first
    }

    fn params(&self, flat: &[f64]) -> CltmParameters {
        self.template.with_flat(flat)
    }

    pub fn log_likelihood(&self, params: &CltmParameters) -> Result<f64> {
        let terms = self.execution.try_map(self.scored(), |i| {
            let t = self.first + i;
            let pot = self.binding.potentials_for(params, self.dataset, t);
            let clamped = self.topology.log_partition(&pot, &self.binding.evidence_at(self.dataset, t))?;
            let free = self.topology.log_partition(&pot, &[])?;
            Ok::<_, CltmError>(clamped - free)
        })?;
        Ok(terms.into_iter().sum())
    }

    pub fn e_step(&self, params: &CltmParameters) -> Result<SufficientStats> {
        let beliefs = self.execution.try_map(self.scored(), |i| {
            let t = self.first + i;
            let pot = self.binding.potentials_for(params, self.dataset, t);
            self.topology.sum_product(&pot, &self.binding.evidence_at(self.dataset, t))
        })?;
        let n = self.topology.node_count();
        let m = self.binding_edges();
        let mut node = Array2::zeros((beliefs.len(), n));
        let mut edge = Array2::zeros((beliefs.len(), m));
        for (i, b) in beliefs.iter().enumerate() {
            for k in 0..n {
                node[[i, k]] = match self.binding.column(k) {
                    Some(c) => f64::from(self.dataset.state(self.first + i, c)),
                    None => b.node_marginals[k],
                };
            }
            for e in 0..m {
                edge[[i, e]] = b.edge_marginals[e][1][1];
            }
        }
        Ok(SufficientStats {
            first_time: self.first,
            node_expectations: node,
            edge_expectations: edge,
        })
    }

    fn binding_edges(&self) -> usize {
        self.template.edge_weights.len()
    }

    /// Expected complete-data log-likelihood with `stats` fixed, and its
    /// gradient; neither includes the penalty.
    pub fn q_and_gradient(&self, params: &CltmParameters, stats: &SufficientStats) -> Result<(f64, Vec<f64>)> {
        self.check_stats(stats)?;
        let parts = self.execution.try_map(self.scored(), |i| {
            let t = self.first + i;
            let pot = self.binding.potentials_for(params, self.dataset, t);
            let free = self.topology.sum_product(&pot, &[])?;
            let mut q = -free.log_partition;
            let mut grad = Vec::with_capacity(params.len());
            let mut buf = Vec::new();
            for (k, &phi) in pot.node_potentials.iter().enumerate() {
                let target = stats.node_expectations[[i, k]];
                q += phi * target;
                self.binding.node_features(self.dataset, t, k, &mut buf);
                let r = target - free.node_marginals[k];
                grad.extend(buf.iter().map(|x| x * r));
            }
            for (e, &phi) in pot.edge_potentials.iter().enumerate() {
                let target = stats.edge_expectations[[i, e]];
                q += phi * target;
                self.binding.edge_features(self.dataset, t, e, &mut buf);
                let r = target - free.edge_marginals[e][1][1];
                grad.extend(buf.iter().map(|x| x * r));
            }
            Ok::<_, CltmError>((q, grad))
        })?;
        let mut q = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (qi, gi) in parts {
            q += qi;
            for (a, b) in grad.iter_mut().zip(gi) {
                *a += b;
            }
        }
        Ok((q, grad))
    }

    fn check_stats(&self, stats: &SufficientStats) -> Result<()> {
        let want = (self.scored(), self.topology.node_count());
        if stats.first_time != self.first
            || stats.node_expectations.dim() != want
            || stats.edge_expectations.dim() != (self.scored(), self.binding_edges())
        {
            return Err(CltmError::LengthMismatch(
                "sufficient statistics do not match the model and dataset".into(),
            ));
        }
        Ok(())
    }
}

fn penalized(value: f64, grad: &mut [f64], flat: &[f64], l2: f64) -> f64 {
    for (g, w) in grad.iter_mut().zip(flat) {
        *g -= 2.0 * l2 * w;
    }
    value - l2 * flat.iter().map(|w| w * w).sum::<f64>()
}

/// `Σ_t log P(y^(t) | x^(t), θ)` over the scored time points.
pub fn observed_log_likelihood(model: &CltmModel, dataset: &TimeSeriesDataset) -> Result<f64> {
    Problem::new(model, dataset, Execution::default())?.log_likelihood(&model.parameters)
}

/// Posterior expectations with every observed node clamped to its data.
pub fn e_step(model: &CltmModel, dataset: &TimeSeriesDataset) -> Result<SufficientStats> {
    Problem::new(model, dataset, Execution::default())?.e_step(&model.parameters)
}

/// Gradient of the expected complete-data log-likelihood under `stats`,
/// minus `2 * l2_strength * θ`, flattened as in [`CltmParameters::to_flat`].
/// When `stats` come from [`e_step`] at the same parameters, this is the
/// gradient of the penalized observed log-likelihood.
pub fn marginal_gradient(
    model: &CltmModel,
    dataset: &TimeSeriesDataset,
    stats: &SufficientStats,
    l2_strength: f64,
) -> Result<Vec<f64>> {
    let problem = Problem::new(model, dataset, Execution::default())?;
    let (_, mut g) = problem.q_and_gradient(&model.parameters, stats)?;
    penalized(0.0, &mut g, &model.parameters.to_flat(), l2_strength);
    Ok(g)
}

/// Result of one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutcome {
    pub parameters: CltmParameters,
    /// Penalized expected complete-data log-likelihood after the step.
    pub objective: f64,
    /// The line search ran out of halvings; the last step was rejected.
    pub stalled: bool,
}

/// Backtracking gradient ascent on the penalized expected complete-data
/// log-likelihood with `stats` fixed. The gradient is averaged over scored
/// time points so `learning_rate` does not depend on the series length.
pub fn m_step(
    model: &CltmModel,
    dataset: &TimeSeriesDataset,
    stats: &SufficientStats,
    config: &EmConfig,
) -> Result<MStepOutcome> {
    config.validate()?;
    let problem = Problem::new(model, dataset, config.execution)?;
    run_m_step(&problem, &model.parameters, stats, config, config.learning_rate).map(|(out, _)| out)
}

fn run_m_step(
    problem: &Problem<'_>,
    start: &CltmParameters,
    stats: &SufficientStats,
    config: &EmConfig,
    step: f64,
) -> Result<(MStepOutcome, f64)> {
    let mut flat = start.to_flat();
    let scale = 1.0 / problem.scored() as f64;
    let outcome = line_search_ascent(&mut flat, config.gradient_steps_per_m_step, step, scale, 0.0, |x| {
        let (q, mut g) = problem.q_and_gradient(&problem.params(x), stats)?;
        let v = penalized(q, &mut g, x, config.l2_strength);
        Ok((v, g))
    })?;
    if outcome.stalled {
        log::warn!("M-step line search exhausted its halvings; last step rejected");
    }
    Ok((
        MStepOutcome {
            parameters: problem.params(&flat),
            objective: outcome.value,
            stalled: outcome.stalled,
        },
        outcome.step_size,
    ))
}

/// Fits the conditional latent tree on `dataset` by EM from
/// `config.restarts` random initializations and keeps the run with the
/// highest final penalized log-likelihood (earliest run on ties).
pub fn fit_em(
    structure: &LatentTreeStructure,
    dataset: &TimeSeriesDataset,
    schema: &CovariateSchema,
    config: &EmConfig,
) -> Result<(CltmModel, EmTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(CltmError::Empty("dataset has no time points".into()));
    }
    let template = CltmModel::zeros(structure.clone(), schema.clone());
    let problem = Problem::new(&template, dataset, config.execution)?;

    let mut trace = EmTrace::default();
    let mut best: Option<(f64, CltmParameters)> = None;
    for run in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(run as u64);
        let init: Vec<f64> = (0..template.parameters.len())
            .map(|_| {
                if config.init_scale > 0.0 {
                    rng.random_range(-config.init_scale..=config.init_scale)
                } else {
                    0.0
                }
            })
            .collect();
        let (params, objective) = fit_run(&problem, template.parameters.with_flat(&init), config, run, &mut trace)?;
        if best.as_ref().is_none_or(|(b, _)| objective > *b) {
            best = Some((objective, params));
            trace.best_run = run;
        }
    }
    let (_, parameters) = best.expect("at least one restart");
    let model = CltmModel::new(structure.clone(), schema.clone(), parameters, VariableMode::Binary)?;
    Ok((model, trace))
}

fn fit_run(
    problem: &Problem<'_>,
    mut params: CltmParameters,
    config: &EmConfig,
    run: usize,
    trace: &mut EmTrace,
) -> Result<(CltmParameters, f64)> {
    let scored = problem.scored() as f64;
    let l2 = config.l2_strength;
    let grad_norm = |params: &CltmParameters, stats: &SufficientStats| -> Result<f64> {
        let (_, mut g) = problem.q_and_gradient(params, stats)?;
        penalized(0.0, &mut g, &params.to_flat(), l2);
        Ok(norm(&g))
    };
    let ll = problem.log_likelihood(&params)?;
    let mut objective = ll - l2 * params.squared_norm();
    let mut stats = problem.e_step(&params)?;
    push_row(trace, run, 0, ll, objective, grad_norm(&params, &stats)?);
    let mut step = config.learning_rate;
    for iteration in 1..=config.max_iterations {
        let (out, next_step) = run_m_step(problem, &params, &stats, config, step)?;
        if out.stalled {
            trace.stalled_m_steps += 1;
        }
        step = next_step.max(config.learning_rate);
        params = out.parameters;
        stats = problem.e_step(&params)?;
        let ll = problem.log_likelihood(&params)?;
        let new_objective = ll - l2 * params.squared_norm();
        push_row(trace, run, iteration, ll, new_objective, grad_norm(&params, &stats)?);
        let gain = new_objective - objective;
        objective = new_objective;
        if gain / scored < config.likelihood_tolerance {
            break;
        }
    }
    Ok((params, objective))
}

fn push_row(trace: &mut EmTrace, run: usize, iteration: usize, ll: f64, objective: f64, gradient_norm: f64) {
    trace.rows.push(TraceRow {
        run,
        iteration,
        log_likelihood: ll,
        objective,
        gradient_norm,
    });
}

/// Free (evidence-less) marginal probability of state 1 for every structure
/// node at each scored time point.
pub fn free_marginals(model: &CltmModel, dataset: &TimeSeriesDataset) -> Result<Array2<f64>> {
    let problem = Problem::new(model, dataset, Execution::default())?;
    let rows = problem.execution.try_map(problem.scored(), |i| {
        let pot = problem.binding.potentials_for(&model.parameters, dataset, problem.first + i);
        problem.topology.sum_product(&pot, &[]).map(|b| b.node_marginals)
    })?;
    let n = model.structure.node_count();
    let mut out = Array2::zeros((rows.len(), n));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::Array1::from(r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Edge, Node};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn single(states: Vec<f64>) -> (CltmModel, TimeSeriesDataset) {
        let s = LatentTreeStructure::new(vec![Node::observed("a")], vec![]).unwrap();
        let t = states.len();
        let ds = TimeSeriesDataset::from_states(
            vec!["a".into()],
            VariableMode::Binary,
            Array2::from_shape_vec((t, 1), states).unwrap(),
        )
        .unwrap();
        (CltmModel::zeros(s, CovariateSchema::default()), ds)
    }

    fn pair() -> (CltmModel, TimeSeriesDataset) {
        let s = LatentTreeStructure::new(vec![Node::observed("a"), Node::observed("b")], vec![Edge::new(0, 1, 1.0)])
            .unwrap();
        let mut m = CltmModel::zeros(s, CovariateSchema::default());
        m.parameters.edge_weights[0][0] = 2f64.ln();
        let ds = TimeSeriesDataset::from_states(
            vec!["a".into(), "b".into()],
            VariableMode::Binary,
            array![[1.0, 1.0]],
        )
        .unwrap();
        (m, ds)
    }

    #[test]
    fn uniform_single_node() {
        let (m, ds) = single(vec![1.0]);
        assert_abs_diff_eq!(observed_log_likelihood(&m, &ds).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn pair_likelihood() {
        let (m, ds) = pair();
        assert_abs_diff_eq!(observed_log_likelihood(&m, &ds).unwrap(), 0.4f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn additive_over_time() {
        let (m, ds1) = pair();
        let ds5 = TimeSeriesDataset::from_states(ds1.node_ids.clone(), VariableMode::Binary, Array2::ones((5, 2)))
            .unwrap();
        let one = observed_log_likelihood(&m, &ds1).unwrap();
        assert_abs_diff_eq!(observed_log_likelihood(&m, &ds5).unwrap(), 5.0 * one, epsilon = 1e-12);
    }

    #[test]
    fn fully_observed_stats_are_data() {
        let (m, _) = pair();
        let ds = TimeSeriesDataset::from_states(
            vec!["a".into(), "b".into()],
            VariableMode::Binary,
            array![[1.0, 0.0], [1.0, 1.0]],
        )
        .unwrap();
        let s = e_step(&m, &ds).unwrap();
        assert_eq!(s.node_expectations, array![[1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(s.edge_expectations, array![[0.0], [1.0]]);
    }

    #[test]
    fn logistic_gradient() {
        let (m, ds) = single(vec![1.0; 10]);
        let stats = e_step(&m, &ds).unwrap();
        let g = marginal_gradient(&m, &ds, &stats, 0.0).unwrap();
        assert_abs_diff_eq!(g[0], 5.0, epsilon = 1e-14);
    }

    #[test]
    fn m_step_climbs_toward_saturation() {
        let (m, ds) = single(vec![1.0; 10]);
        let stats = e_step(&m, &ds).unwrap();
        let cfg = EmConfig {
            l2_strength: 0.0,
            ..Default::default()
        };
        let before = observed_log_likelihood(&m, &ds).unwrap();
        let out = m_step(&m, &ds, &stats, &cfg).unwrap();
        assert!(out.parameters.node_weights[0][0] > 0.0);
        assert!(out.objective > before);
    }

    #[test]
    fn heavy_l2_shrinks() {
        let (mut m, ds) = single(vec![1.0; 10]);
        m.parameters.node_weights[0][0] = 2.0;
        let stats = e_step(&m, &ds).unwrap();
        let cfg = EmConfig {
            l2_strength: 1e3,
            ..Default::default()
        };
        let out = m_step(&m, &ds, &stats, &cfg).unwrap();
        assert!(out.parameters.node_weights[0][0].abs() < 0.1);
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let (m, ds) = single(vec![1.0, 0.0]);
        let stats = e_step(&m, &ds).unwrap();
        let out = m_step(&m, &ds, &stats, &EmConfig::default()).unwrap();
        assert_eq!(out.parameters, m.parameters);
    }

    #[test]
    fn restarts_are_deterministic() {
        let (m, _) = pair();
        let ds = TimeSeriesDataset::from_states(
            vec!["a".into(), "b".into()],
            VariableMode::Binary,
            array![[1.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]],
        )
        .unwrap();
        let cfg = EmConfig {
            restarts: 2,
            max_iterations: 5,
            ..Default::default()
        };
        let a = fit_em(&m.structure, &ds, &m.schema, &cfg).unwrap();
        let b = fit_em(&m.structure, &ds, &m.schema, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
