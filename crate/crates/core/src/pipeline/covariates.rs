//! Covariate builders.
//!
//! Every builder computes the features of time `t` from a [`History`] view
//! that can be cut off at any time point. Building uses the full history;
//! the leakage audit recomputes each `t` with everything at `>= t` zeroed and
//! requires identical features. Calendar dates are exogenous and never
//! masked.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{CltmError, Result};
use crate::exec::Execution;
use crate::model::{pair_count, pair_index, pairs, Covariate, CovariateSchema, TimeSeriesDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateBuilder {
    /// Per-node bias. Every node already carries an intercept `c_0`, so this
    /// adds no column.
    Bias,
    /// `lag{k}`: the node's own state `k` steps back.
    Lag { k: usize },
    /// `dow_mon` .. `dow_sun`: one-hot weekday of the time point's date.
    DayOfWeek,
    /// `regular`: 1 when the node's activity rate over the previous `window`
    /// steps is at least the `quantile` of all nodes' rates.
    Regularity { window: usize, quantile: f64 },
    /// `node_triads`: triangles containing the node in the previous step's graph.
    NodeTriads,
    /// `cycles{k}` (edge): `k`-cycles through the pair in the previous step's
    /// graph, i.e. simple paths of length `k - 1` between its endpoints.
    /// `k` is 3 (common neighbours, the pair's triads) or 4.
    EdgeCycles { k: usize },
    /// `edge_prev` (edge): presence of the same edge in the previous step.
    PreviousEdge,
    /// `present_prev` (edge): number of present nodes in the previous step.
    PresentNodes,
    /// `cluster{c}`: one-hot cluster membership from a node-id map.
    ClusterMembership { clusters: BTreeMap<String, usize> },
}

/// Read access to the raw data, with everything at `>= cutoff` reading as 0.
pub struct History<'a> {
    states: &'a Array2<f64>,
    edges: Option<&'a Array2<u8>>,
    dates: Option<&'a [NaiveDate]>,
    cutoff: usize,
}

impl History<'_> {
    fn state(&self, t: usize, i: usize) -> f64 {
        if t < self.cutoff {
            self.states[[t, i]]
        } else {
            0.0
        }
    }

    fn active(&self, t: usize, i: usize) -> bool {
        self.state(t, i) > 0.0
    }

    fn edge(&self, t: usize, p: usize) -> u8 {
        match self.edges {
            Some(w) if t < self.cutoff => w[[t, p]],
            _ => 0,
        }
    }

    fn n(&self) -> usize {
        self.states.ncols()
    }

    /// Adjacency matrix of the graph at `t`.
    fn adjacency(&self, t: usize) -> Vec<Vec<u8>> {
        let n = self.n();
        let mut a = vec![vec![0u8; n]; n];
        for (i, j) in pairs(n) {
            let v = self.edge(t, pair_index(n, i, j));
            a[i][j] = v;
            a[j][i] = v;
        }
        a
    }
}

const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

impl CovariateBuilder {
    pub fn node_columns(&self) -> Vec<Covariate> {
        use CovariateBuilder::*;
        match self {
            Lag { k } => vec![Covariate::real(format!("lag{k}"))],
            DayOfWeek => WEEKDAYS.iter().map(|d| Covariate::binary(format!("dow_{d}"))).collect(),
            Regularity { .. } => vec![Covariate::binary("regular")],
            NodeTriads => vec![Covariate::real("node_triads")],
            ClusterMembership { clusters } => (0..cluster_count(clusters))
                .map(|c| Covariate::binary(format!("cluster{c}")))
                .collect(),
            Bias | EdgeCycles { .. } | PreviousEdge | PresentNodes => vec![],
        }
    }

    pub fn edge_columns(&self) -> Vec<Covariate> {
        use CovariateBuilder::*;
        match self {
            EdgeCycles { k } => vec![Covariate::real(format!("cycles{k}"))],
            PreviousEdge => vec![Covariate::binary("edge_prev")],
            PresentNodes => vec![Covariate::real("present_prev")],
            _ => vec![],
        }
    }

    /// Leading time points whose features are undefined.
    pub fn burn_in(&self) -> usize {
        use CovariateBuilder::*;
        match self {
            Lag { k } => *k,
            Regularity { .. } | NodeTriads | EdgeCycles { .. } | PreviousEdge | PresentNodes => 1,
            Bias | DayOfWeek | ClusterMembership { .. } => 0,
        }
    }

    fn check(&self, dataset: &TimeSeriesDataset) -> Result<()> {
        use CovariateBuilder::*;
        let need_edges = matches!(self, NodeTriads | EdgeCycles { .. } | PreviousEdge);
        if need_edges && dataset.edge_observations.is_none() {
            return Err(CltmError::InvalidArgument(format!("{self:?} needs edge observations")));
        }
        match self {
            Lag { k: 0 } => Err(CltmError::InvalidArgument("lag must be at least 1".into())),
            DayOfWeek if dataset.dates.is_none() => {
                Err(CltmError::InvalidArgument("day-of-week covariates need dated time points".into()))
            }
            Regularity { window, quantile } if *window == 0 || !(0.0..=1.0).contains(quantile) => Err(
                CltmError::InvalidArgument(format!("regularity window {window} / quantile {quantile} invalid")),
            ),
            EdgeCycles { k } if !(3..=4).contains(k) => {
                Err(CltmError::InvalidArgument(format!("cycle length {k} unsupported (3 or 4)")))
            }
            ClusterMembership { clusters } => {
                match dataset.node_ids.iter().find(|id| !clusters.contains_key(*id)) {
                    Some(id) => Err(CltmError::InvalidArgument(format!("node `{id}` has no cluster"))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Node features (`n × node_columns`) and edge features
    /// (`pairs × edge_columns`) at time `t`, row-major.
    fn values_at(&self, h: &History<'_>, ids: &[String], t: usize) -> (Vec<f64>, Vec<f64>) {
        use CovariateBuilder::*;
        let n = h.n();
        let prev = t.checked_sub(1);
        match self {
            Bias => (vec![], vec![]),
            Lag { k } => {
                let v = (0..n).map(|i| t.checked_sub(*k).map_or(0.0, |s| h.state(s, i))).collect();
                (v, vec![])
            }
            DayOfWeek => {
                let d = h.dates.expect("checked")[t].weekday().num_days_from_monday() as usize;
                let mut v = vec![0.0; n * 7];
                for i in 0..n {
                    v[i * 7 + d] = 1.0;
                }
                (v, vec![])
            }
            Regularity { window, quantile } => {
                let from = t.saturating_sub(*window);
                if from == t {
                    return (vec![0.0; n], vec![]);
                }
                let rates: Vec<f64> = (0..n)
                    .map(|i| (from..t).filter(|&s| h.active(s, i)).count() as f64 / (t - from) as f64)
                    .collect();
                let cut = quantile_of(&rates, *quantile);
                (rates.iter().map(|&r| f64::from(u8::from(r >= cut))).collect(), vec![])
            }
            NodeTriads => {
                let Some(p) = prev else { return (vec![0.0; n], vec![]) };
                let a = h.adjacency(p);
                let v = (0..n)
                    .map(|i| {
                        let mut c = 0u32;
                        for j in 0..n {
                            for k in j + 1..n {
                                c += u32::from(a[i][j] & a[i][k] & a[j][k]);
                            }
                        }
                        f64::from(c)
                    })
                    .collect();
                (v, vec![])
            }
            EdgeCycles { k } => {
                let Some(p) = prev else { return (vec![], vec![0.0; pair_count(n)]) };
                let a = h.adjacency(p);
                let a2 = |x: usize, y: usize| (0..n).map(|m| u32::from(a[x][m] & a[m][y])).sum::<u32>();
                let v = pairs(n)
                    .map(|(i, j)| {
                        if *k == 3 {
                            f64::from(a2(i, j))
                        } else {
                            // Walks i-x-y-j minus the non-simple ones (x = j or y = i).
                            let walks: u32 = (0..n).filter(|&x| a[i][x] == 1).map(|x| a2(x, j)).sum();
                            let deg = |x: usize| a[x].iter().map(|&v| u32::from(v)).sum::<u32>();
                            let back = u32::from(a[i][j]) * (deg(i) + deg(j)).saturating_sub(1);
                            f64::from(walks - back)
                        }
                    })
                    .collect();
                (vec![], v)
            }
            PreviousEdge => {
                let v = (0..pair_count(n))
                    .map(|q| prev.map_or(0.0, |s| f64::from(h.edge(s, q))))
                    .collect();
                (vec![], v)
            }
            PresentNodes => {
                let c = prev.map_or(0.0, |s| (0..n).filter(|&i| h.active(s, i)).count() as f64);
                (vec![], vec![c; pair_count(n)])
            }
            ClusterMembership { clusters } => {
                let k = cluster_count(clusters);
                let mut v = vec![0.0; n * k];
                for (i, id) in ids.iter().enumerate() {
                    v[i * k + clusters[id]] = 1.0;
                }
                (v, vec![])
            }
        }
    }
}

fn cluster_count(clusters: &BTreeMap<String, usize>) -> usize {
    clusters.values().copied().max().map_or(0, |m| m + 1)
}

/// Linear-interpolation quantile; `q = 0.5` is the median.
fn quantile_of(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub(crate) struct Layout {
    node_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    pub(crate) schema: CovariateSchema,
}

pub(crate) fn layout(builders: &[CovariateBuilder]) -> Result<Layout> {
    let (mut nodes, mut edges) = (Vec::new(), Vec::new());
    let (mut node_offsets, mut edge_offsets) = (Vec::new(), Vec::new());
    for b in builders {
        node_offsets.push(nodes.len());
        edge_offsets.push(edges.len());
        nodes.extend(b.node_columns());
        edges.extend(b.edge_columns());
    }
    let schema = CovariateSchema::new(nodes, edges);
    if let Some((group, name)) = schema.duplicates().first() {
        return Err(CltmError::InvalidArgument(format!("duplicate {group} covariate `{name}`")));
    }
    Ok(Layout {
        node_offsets,
        edge_offsets,
        schema,
    })
}

/// Features of every builder at `t`, laid out as `(n × Kn, pairs × Ke)`.
fn features_at(builders: &[CovariateBuilder], lay: &Layout, h: &History<'_>, ids: &[String], t: usize) -> (Vec<f64>, Vec<f64>) {
    let n = h.n();
    let (kn, ke) = (lay.schema.node_arity(), lay.schema.edge_arity());
    let mut node = vec![0.0; n * kn];
    let mut edge = vec![0.0; pair_count(n) * ke];
    for (b, builder) in builders.iter().enumerate() {
        let (nv, ev) = builder.values_at(h, ids, t);
        let bn = builder.node_columns().len();
        for i in 0..n {
            for c in 0..bn {
                node[i * kn + lay.node_offsets[b] + c] = nv[i * bn + c];
            }
        }
        let be = builder.edge_columns().len();
        for p in 0..pair_count(n) {
            for c in 0..be {
                edge[p * ke + lay.edge_offsets[b] + c] = ev[p * be + c];
            }
        }
    }
    (node, edge)
}

/// Features at `t` computed from `dataset` as if only rows `< t` existed.
pub(crate) fn features_before(
    builders: &[CovariateBuilder],
    lay: &Layout,
    dataset: &TimeSeriesDataset,
    t: usize,
) -> (Vec<f64>, Vec<f64>) {
    features_at(builders, lay, &history(dataset, t), &dataset.node_ids, t)
}

/// Checks every builder's inputs are available in `dataset`.
pub(crate) fn check_builders(builders: &[CovariateBuilder], dataset: &TimeSeriesDataset) -> Result<()> {
    builders.iter().try_for_each(|b| b.check(dataset))
}

fn history(dataset: &TimeSeriesDataset, cutoff: usize) -> History<'_> {
    History {
        states: &dataset.states,
        edges: dataset.edge_observations.as_ref(),
        dates: dataset.dates.as_deref(),
        cutoff,
    }
}

/// Replaces the dataset's covariates with the builders' output, raises the
/// burn-in to cover every builder, and runs the leakage audit.
pub fn build_covariates(
    dataset: &TimeSeriesDataset,
    builders: &[CovariateBuilder],
    execution: Execution,
) -> Result<TimeSeriesDataset> {
    for b in builders {
        b.check(dataset)?;
    }
    let lay = layout(builders)?;
    let (t_len, n) = (dataset.len(), dataset.n());
    let full = history(dataset, t_len);
    let rows = execution.map(t_len, |t| features_at(builders, &lay, &full, &dataset.node_ids, t));
    let (kn, ke) = (lay.schema.node_arity(), lay.schema.edge_arity());
    let mut node_cov = Array3::zeros((t_len, n, kn));
    let mut edge_cov = Array3::zeros((t_len, pair_count(n), ke));
    for (t, (nv, ev)) in rows.iter().enumerate() {
        node_cov
            .index_axis_mut(ndarray::Axis(0), t)
            .assign(&ndarray::ArrayView2::from_shape((n, kn), nv).expect("layout"));
        edge_cov
            .index_axis_mut(ndarray::Axis(0), t)
            .assign(&ndarray::ArrayView2::from_shape((pair_count(n), ke), ev).expect("layout"));
    }
    let mut out = dataset.clone();
    out.schema = lay.schema.clone();
    out.node_covariates = node_cov;
    out.edge_covariates = (ke > 0).then_some(edge_cov);
    out.burn_in = builders.iter().map(CovariateBuilder::burn_in).chain([dataset.burn_in]).max().unwrap_or(0);
    out.leakage_audited = false;
    out.check()?;
    leakage_audit(&out, builders, execution)?;
    out.leakage_audited = true;
    Ok(out)
}

/// Recomputes the features of every `t` with all data at `>= t` zeroed and
/// errors on the first time point whose features change.
pub fn leakage_audit(dataset: &TimeSeriesDataset, builders: &[CovariateBuilder], execution: Execution) -> Result<()> {
    let lay = layout(builders)?;
    if dataset.schema != lay.schema {
        return Err(CltmError::SchemaMismatch("dataset covariates were not built by these builders".into()));
    }
    let n = dataset.n();
    let (kn, ke) = (lay.schema.node_arity(), lay.schema.edge_arity());
    let failures = execution.map(dataset.len(), |t| {
        let (nv, ev) = features_at(builders, &lay, &history(dataset, t), &dataset.node_ids, t);
        let node_ok = nv
            .iter()
            .enumerate()
            .all(|(k, v)| *v == dataset.node_covariates[[t, k / kn.max(1), k % kn.max(1)]]);
        let edge_ok = match &dataset.edge_covariates {
            Some(x) => ev.iter().enumerate().all(|(k, v)| *v == x[[t, k / ke.max(1), k % ke.max(1)]]),
            None => ev.is_empty(),
        };
        node_ok && edge_ok
    });
    match failures.iter().position(|ok| !ok) {
        Some(t) => Err(CltmError::InvalidArgument(format!(
            "leakage audit failed: features at t = {t} depend on data at or after t (n = {n})"
        ))),
        None => Ok(()),
    }
}
