//! Exact sum-product belief propagation on binary conditional latent trees.
//!
//! Configurations `z ∈ {0,1}^N` carry unnormalized weight
//! `exp(Σ_k φ_k z_k + Σ_(k,l) φ_kl z_k z_l)`. Messages are kept in log space;
//! every message is a log-sum-exp, so saturated potentials cannot overflow.
//! Evidence removes the excluded state from a node's table, which makes the
//! log-partition the log of the evidence-consistent total weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CltmError, Result};
use crate::model::{pair_index, CltmModel, CltmParameters, LatentTreeStructure, TimeSeriesDataset, VariableMode};

/// Node and edge potentials of one time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialAssignment {
    pub node_potentials: Vec<f64>,
    pub edge_potentials: Vec<f64>,
    pub time_index: usize,
}

/// Marginals and log-partition of the (evidence-restricted) distribution.
///
/// `edge_marginals[e][a][b]` is `P(z_u = a, z_v = b)` for edge `e = (u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub node_marginals: Vec<f64>,
    pub edge_marginals: Vec<[[f64; 2]; 2]>,
    pub log_partition: f64,
}

/// Per-node clamp: `None` leaves the node free.
pub type Evidence = [Option<u8>];

/// Evidence vector from `(node id, state)` pairs.
pub fn evidence_by_id(structure: &LatentTreeStructure, clamps: &[(&str, u8)]) -> Result<Vec<Option<u8>>> {
    let mut ev = vec![None; structure.node_count()];
    for &(id, s) in clamps {
        let k = structure
            .index_of(id)
            .map_err(|_| CltmError::UnknownNode(format!("evidence names unknown node `{id}`")))?;
        if s > 1 {
            return Err(CltmError::InvalidArgument(format!("evidence state {s} for `{id}` is not binary")));
        }
        ev[k] = Some(s);
    }
    Ok(ev)
}

/// Maps structure nodes and edges to dataset columns and pairs, so
/// potentials and their feature vectors can be read at any `t`.
#[derive(Debug, Clone)]
pub struct CovariateBinding {
    node_columns: Vec<Option<usize>>,
    edge_pairs: Vec<Option<usize>>,
}

impl CovariateBinding {
    pub fn new(model: &CltmModel, dataset: &TimeSeriesDataset) -> Result<Self> {
        let node_columns = model.column_binding(dataset)?;
        let n = dataset.n();
        let edge_pairs = model
            .structure
            .edges()
            .iter()
            .map(|e| match (node_columns[e.u], node_columns[e.v]) {
                (Some(a), Some(b)) => Some(pair_index(n, a.min(b), a.max(b))),
                _ => None,
            })
            .collect();
        Ok(CovariateBinding {
            node_columns,
            edge_pairs,
        })
    }

    /// Dataset column of structure node `k` (`None` for hidden nodes).
    pub fn column(&self, k: usize) -> Option<usize> {
        self.node_columns[k]
    }

    pub fn columns(&self) -> &[Option<usize>] {
        &self.node_columns
    }

    /// Dataset pair index of edge `e` (`None` for hidden-incident edges).
    pub fn pair(&self, e: usize) -> Option<usize> {
        self.edge_pairs[e]
    }

    /// Writes `[1, x_1, ..., x_K]` (or `[1]` for hidden nodes) into `out`.
    pub fn node_features(&self, dataset: &TimeSeriesDataset, t: usize, k: usize, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        if let Some(c) = self.node_columns[k] {
            out.extend(dataset.node_covariates.slice(ndarray::s![t, c, ..]).iter());
        }
    }

    /// Writes `[1, x_1, ..., x_K]` (or `[1]` for hidden-incident edges).
    pub fn edge_features(&self, dataset: &TimeSeriesDataset, t: usize, e: usize, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        if let (Some(p), Some(x)) = (self.edge_pairs[e], &dataset.edge_covariates) {
            out.extend(x.slice(ndarray::s![t, p, ..]).iter());
        }
    }

    /// Potentials of `model` at time `t`.
    pub fn potentials(&self, model: &CltmModel, dataset: &TimeSeriesDataset, t: usize) -> PotentialAssignment {
        self.potentials_for(&model.parameters, dataset, t)
    }

    /// Potentials of `params` (shaped for the bound model) at time `t`.
    pub fn potentials_for(&self, params: &CltmParameters, dataset: &TimeSeriesDataset, t: usize) -> PotentialAssignment {
        let mut buf = Vec::new();
        let node_potentials = (0..self.node_columns.len())
            .map(|k| {
                self.node_features(dataset, t, k, &mut buf);
                dot(&params.node_weights[k], &buf)
            })
            .collect();
        let edge_potentials = (0..self.edge_pairs.len())
            .map(|e| {
                self.edge_features(dataset, t, e, &mut buf);
                dot(&params.edge_weights[e], &buf)
            })
            .collect();
        PotentialAssignment {
            node_potentials,
            edge_potentials,
            time_index: t,
        }
    }

    /// Observed states at `t` as evidence on the structure nodes.
    pub fn evidence_at(&self, dataset: &TimeSeriesDataset, t: usize) -> Vec<Option<u8>> {
        self.node_columns
            .iter()
            .map(|c| c.map(|c| dataset.state(t, c)))
            .collect()
    }
}

pub(crate) fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Potentials of `model` at time `t` of `dataset`.
pub fn compute_potentials(model: &CltmModel, dataset: &TimeSeriesDataset, t: usize) -> Result<PotentialAssignment> {
    if t >= dataset.len() {
        return Err(CltmError::OutOfRange(format!("t = {t} outside 0..{}", dataset.len())));
    }
    Ok(CovariateBinding::new(model, dataset)?.potentials(model, dataset, t))
}

/// Rooted traversal order of a tree (or forest), reused across time points.
#[derive(Debug, Clone)]
pub struct Topology {
    n: usize,
    /// Nodes in BFS order; each node appears after its parent.
    order: Vec<usize>,
    parent: Vec<Option<(usize, usize)>>,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Roots each component at its lowest-indexed node.
    pub fn new(structure: &LatentTreeStructure) -> Result<Self> {
        Self::with_root(structure, 0)
    }

    /// Roots the component of `root` at `root`; other components at their
    /// lowest-indexed node.
    pub fn with_root(structure: &LatentTreeStructure, root: usize) -> Result<Self> {
        let n = structure.node_count();
        if n > 0 && root >= n {
            return Err(CltmError::OutOfRange(format!("root {root} outside 0..{n}")));
        }
        if structure.edge_count() >= n.max(1) {
            return Err(CltmError::InvalidModel(format!(
                "{} edges on {n} nodes cannot form a tree",
                structure.edge_count()
            )));
        }
        let adj = structure.adjacency();
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let starts = std::iter::once(root).chain(0..n).filter(|&s| s < n);
        for s in starts {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let head = order.len();
            order.push(s);
            let mut q = head;
            while q < order.len() {
                let x = order[q];
                q += 1;
                for &(y, e) in &adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        parent[y] = Some((x, e));
                        order.push(y);
                    } else if parent[x].map(|(_, pe)| pe) != Some(e) {
                        return Err(CltmError::InvalidModel("structure contains a cycle".into()));
                    }
                }
            }
        }
        Ok(Topology {
            n,
            order,
            parent,
            edges: structure.edges().iter().map(|e| (e.u, e.v)).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    fn check(&self, potentials: &PotentialAssignment, evidence: &Evidence) -> Result<()> {
        if potentials.node_potentials.len() != self.n || potentials.edge_potentials.len() != self.edges.len() {
            return Err(CltmError::LengthMismatch(format!(
                "potentials for {} nodes / {} edges, structure has {} / {}",
                potentials.node_potentials.len(),
                potentials.edge_potentials.len(),
                self.n,
                self.edges.len()
            )));
        }
        if evidence.len() > self.n {
            return Err(CltmError::UnknownNode(format!(
                "evidence has {} entries for {} nodes",
                evidence.len(),
                self.n
            )));
        }
        if let Some(k) = evidence.iter().position(|s| matches!(s, Some(v) if *v > 1)) {
            return Err(CltmError::InvalidArgument(format!("evidence on node {k} is not binary")));
        }
        Ok(())
    }

    fn local(&self, potentials: &PotentialAssignment, evidence: &Evidence, k: usize) -> [f64; 2] {
        let phi = potentials.node_potentials[k];
        match evidence.get(k).copied().flatten() {
            Some(0) => [0.0, f64::NEG_INFINITY],
            Some(_) => [f64::NEG_INFINITY, phi],
            None => [0.0, phi],
        }
    }

    /// Upward pass. `inward[k]` is node k's local table plus all messages
    /// from its children; `up[k]` is the message from k to its parent.
    fn upward(&self, potentials: &PotentialAssignment, evidence: &Evidence) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let mut inward: Vec<[f64; 2]> = (0..self.n).map(|k| self.local(potentials, evidence, k)).collect();
        let mut up = vec![[0.0; 2]; self.n];
        for &c in self.order.iter().rev() {
            if let Some((p, e)) = self.parent[c] {
                let w = potentials.edge_potentials[e];
                let m = [
                    lse2(inward[c][0], inward[c][1]),
                    lse2(inward[c][0], inward[c][1] + w),
                ];
                up[c] = m;
                inward[p][0] += m[0];
                inward[p][1] += m[1];
            }
        }
        (inward, up)
    }

    fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().copied().filter(|&k| self.parent[k].is_none())
    }

    /// Log of the evidence-consistent total weight (upward pass only).
    pub fn log_partition(&self, potentials: &PotentialAssignment, evidence: &Evidence) -> Result<f64> {
        self.check(potentials, evidence)?;
        let (inward, _) = self.upward(potentials, evidence);
        Ok(self.roots().map(|r| lse2(inward[r][0], inward[r][1])).sum())
    }

    /// Full marginals by an upward and a downward pass.
    pub fn sum_product(&self, potentials: &PotentialAssignment, evidence: &Evidence) -> Result<BeliefState> {
        self.check(potentials, evidence)?;
        let (inward, up) = self.upward(potentials, evidence);
        let log_partition: f64 = self.roots().map(|r| lse2(inward[r][0], inward[r][1])).sum();

        // belief[k] = log of the unnormalized marginal of k within its component.
        let mut belief = vec![[0.0; 2]; self.n];
        let mut comp_log_z = vec![0.0; self.n];
        for &k in &self.order {
            match self.parent[k] {
                None => {
                    belief[k] = inward[k];
                    comp_log_z[k] = lse2(inward[k][0], inward[k][1]);
                }
                Some((p, e)) => {
                    let w = potentials.edge_potentials[e];
                    // Everything at p except what came from k.
                    let rest = [belief[p][0] - up[k][0], belief[p][1] - up[k][1]];
                    let down = [lse2(rest[0], rest[1]), lse2(rest[0], rest[1] + w)];
                    belief[k] = [inward[k][0] + down[0], inward[k][1] + down[1]];
                    comp_log_z[k] = comp_log_z[p];
                }
            }
        }
        let node_marginals = (0..self.n)
            .map(|k| (belief[k][1] - comp_log_z[k]).exp())
            .collect();
        let edge_marginals = self
            .edges
            .iter()
            .enumerate()
            .map(|(e, &(u, v))| {
                let (c, p) = if self.parent[u].map(|(_, pe)| pe) == Some(e) { (u, v) } else { (v, u) };
                let w = potentials.edge_potentials[e];
                let rest = [belief[p][0] - up[c][0], belief[p][1] - up[c][1]];
                let z = comp_log_z[c];
                let mut table = [[0.0; 2]; 2];
                for (sc, row) in table.iter_mut().enumerate() {
                    for (sp, cell) in row.iter_mut().enumerate() {
                        let pair = if sc == 1 && sp == 1 { w } else { 0.0 };
                        *cell = (inward[c][sc] + rest[sp] + pair - z).exp();
                    }
                }
                if c == u {
                    table
                } else {
                    [[table[0][0], table[1][0]], [table[0][1], table[1][1]]]
                }
            })
            .collect();
        Ok(BeliefState {
            node_marginals,
            edge_marginals,
            log_partition,
        })
    }

    /// Prepares conditional tables for repeated exact ancestral sampling.
    pub fn sampler(&self, potentials: &PotentialAssignment, evidence: &Evidence) -> Result<Sampler<'_>> {
        self.check(potentials, evidence)?;
        let (inward, _) = self.upward(potentials, evidence);
        // p_one[k][s] = P(z_k = 1 | z_parent = s); roots use index 0.
        let p_one = (0..self.n)
            .map(|k| match self.parent[k] {
                None => [sigmoid(inward[k][1] - inward[k][0]); 2],
                Some((_, e)) => {
                    let w = potentials.edge_potentials[e];
                    [
                        sigmoid(inward[k][1] - inward[k][0]),
                        sigmoid(inward[k][1] + w - inward[k][0]),
                    ]
                }
            })
            .collect();
        Ok(Sampler { topology: self, p_one })
    }
}

/// Exact sampler for one set of potentials and evidence.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    topology: &'a Topology,
    p_one: Vec<[f64; 2]>,
}

impl Sampler<'_> {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let mut z = vec![0u8; self.topology.n];
        self.draw_into(rng, &mut z);
        z
    }

    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [u8]) {
        for &k in &self.topology.order {
            let s = self.topology.parent[k].map_or(0, |(p, _)| z[p] as usize);
            let p = self.p_one[k][s];
            // A probability of exactly 0 or 1 never flips, whatever the draw.
            z[k] = u8::from(rng.random::<f64>() < p);
        }
    }
}

/// Sum-product on `structure` with the given potentials and evidence.
pub fn sum_product(
    structure: &LatentTreeStructure,
    potentials: &PotentialAssignment,
    evidence: &Evidence,
) -> Result<BeliefState> {
    Topology::new(structure)?.sum_product(potentials, evidence)
}

/// Posterior `P(h = 1 | y^(t), x^(t))` of every hidden node, in structure
/// order of the hidden nodes.
pub fn infer_hidden(model: &CltmModel, dataset: &TimeSeriesDataset, t: usize) -> Result<Vec<f64>> {
    if model.mode != VariableMode::Binary {
        return Err(CltmError::InvalidModel("inference requires a binary-mode model".into()));
    }
    if t >= dataset.len() {
        return Err(CltmError::OutOfRange(format!("t = {t} outside 0..{}", dataset.len())));
    }
    let binding = CovariateBinding::new(model, dataset)?;
    let pot = binding.potentials(model, dataset, t);
    let ev = binding.evidence_at(dataset, t);
    let belief = sum_product(&model.structure, &pot, &ev)?;
    Ok(model
        .structure
        .hidden_indices()
        .into_iter()
        .map(|h| belief.node_marginals[h])
        .collect())
}

/// One exact sample of every node from the evidence-conditioned distribution.
pub fn sample_configuration<R: Rng + ?Sized>(
    structure: &LatentTreeStructure,
    potentials: &PotentialAssignment,
    evidence: &Evidence,
    rng: &mut R,
) -> Result<Vec<u8>> {
    let topo = Topology::new(structure)?;
    Ok(topo.sampler(potentials, evidence)?.draw(rng))
}

pub(crate) fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
