use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CltmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Observed,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: VariableKind,
}

impl Node {
    pub fn observed(id: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            kind: VariableKind::Observed,
        }
    }

    pub fn hidden(id: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            kind: VariableKind::Hidden,
        }
    }
}

/// Undirected edge between two node indices with an additive length in
/// information-distance units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub length: f64,
}

impl Edge {
    pub fn new(u: usize, v: usize, length: f64) -> Self {
        Edge { u, v, length }
    }

    /// The endpoint that is not `x`.
    pub fn other(&self, x: usize) -> usize {
        if self.u == x {
            self.v
        } else {
            self.u
        }
    }

    pub fn touches(&self, x: usize) -> bool {
        self.u == x || self.v == x
    }
}

/// Graph over observed and hidden variables. Construction only checks
/// referential integrity; tree-ness and canonical form are reported by
/// [`LatentTreeStructure::structural_violations`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTreeStructure {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
}

impl LatentTreeStructure {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.id.is_empty() {
                return Err(CltmError::InvalidArgument(format!("node {i} has an empty id")));
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(CltmError::InvalidArgument(format!(
                    "duplicate node id `{}`",
                    node.id
                )));
            }
        }
        for e in &edges {
            if e.u >= nodes.len() || e.v >= nodes.len() {
                return Err(CltmError::OutOfRange(format!(
                    "edge ({}, {}) references a node outside 0..{}",
                    e.u,
                    e.v,
                    nodes.len()
                )));
            }
        }
        Ok(LatentTreeStructure {
            nodes,
            edges,
            index,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn kind(&self, i: usize) -> VariableKind {
        self.nodes[i].kind
    }

    pub fn is_hidden(&self, i: usize) -> bool {
        self.nodes[i].kind == VariableKind::Hidden
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| CltmError::UnknownNode(id.to_string()))
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.is_hidden(i)).collect()
    }

    pub fn hidden_indices(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.is_hidden(i)).collect()
    }

    pub fn hidden_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == VariableKind::Hidden).count()
    }

    /// Per node: `(neighbour, edge index)` pairs in edge order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.u].push((e.v, k));
            adj[e.v].push((e.u, k));
        }
        adj
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.touches(i)).count()
    }

    /// Whether the edge touches a hidden node.
    pub fn edge_is_hidden_incident(&self, k: usize) -> bool {
        let e = &self.edges[k];
        self.is_hidden(e.u) || self.is_hidden(e.v)
    }

    /// Sum of edge lengths along the unique path from `from` to every node.
    /// Unreachable nodes get `f64::INFINITY`.
    pub fn distances_from(&self, from: usize) -> Result<Vec<f64>> {
        if from >= self.nodes.len() {
            return Err(CltmError::UnknownNode(format!("#{from}")));
        }
        let adj = self.adjacency();
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        dist[from] = 0.0;
        let mut queue = VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            for &(y, k) in &adj[x] {
                if dist[y].is_infinite() {
                    dist[y] = dist[x] + self.edges[k].length;
                    queue.push_back(y);
                }
            }
        }
        Ok(dist)
    }

    /// Additive length of the path between nodes `i` and `j`.
    pub fn path_distance(&self, i: usize, j: usize) -> Result<f64> {
        if j >= self.nodes.len() {
            return Err(CltmError::UnknownNode(format!("#{j}")));
        }
        let d = self.distances_from(i)?[j];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(CltmError::InvalidModel(format!(
                "no path between `{}` and `{}`",
                self.nodes[i].id, self.nodes[j].id
            )))
        }
    }

    pub fn path_distance_by_id(&self, i: &str, j: &str) -> Result<f64> {
        self.path_distance(self.index_of(i)?, self.index_of(j)?)
    }

    /// Every violation of the tree and canonical-form invariants.
    pub fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        if n == 0 {
            out.push(Violation::NotATree("structure has no nodes".into()));
            return out;
        }
        if self.edges.len() != n - 1 {
            out.push(Violation::NotATree(format!(
                "{} edges for {} nodes",
                self.edges.len(),
                n
            )));
        }
        let mut uf = petgraph::unionfind::UnionFind::<usize>::new(n);
        for e in &self.edges {
            if e.u == e.v {
                out.push(Violation::NotATree(format!(
                    "self loop at `{}`",
                    self.nodes[e.u].id
                )));
            } else if !uf.union(e.u, e.v) {
                out.push(Violation::NotATree(format!(
                    "cycle closed by edge `{}`-`{}`",
                    self.nodes[e.u].id, self.nodes[e.v].id
                )));
            }
        }
        let root = uf.find(0);
        if (1..n).any(|i| uf.find(i) != root) {
            out.push(Violation::NotATree("graph is disconnected".into()));
        }
        for e in &self.edges {
            if !(e.length.is_finite() && e.length > 0.0) {
                out.push(Violation::EdgeLength {
                    u: self.nodes[e.u].id.clone(),
                    v: self.nodes[e.v].id.clone(),
                    length: e.length,
                });
            }
        }
        for i in self.hidden_indices() {
            let degree = self.degree(i);
            if degree < 3 {
                out.push(Violation::ContractibleHiddenNode {
                    node: self.nodes[i].id.clone(),
                    degree,
                });
            }
        }
        out
    }
}

/// One failed invariant, with the identity of the offending element.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NotATree(String),
    ContractibleHiddenNode { node: String, degree: usize },
    EdgeLength { u: String, v: String, length: f64 },
    DuplicateCovariate { group: &'static str, name: String },
    ParameterShape(String),
    NonFiniteCoefficient(String),
    HiddenEdgeCovariates { u: String, v: String, arity: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotATree(why) => write!(f, "not a tree: {why}"),
            Violation::ContractibleHiddenNode { node, degree } => {
                write!(f, "contractible hidden node `{node}` (degree {degree})")
            }
            Violation::EdgeLength { u, v, length } => {
                write!(f, "edge `{u}`-`{v}` has non-positive or non-finite length {length}")
            }
            Violation::DuplicateCovariate { group, name } => {
                write!(f, "duplicate {group} covariate `{name}`")
            }
            Violation::ParameterShape(why) => write!(f, "parameter shape: {why}"),
            Violation::NonFiniteCoefficient(at) => write!(f, "non-finite coefficient at {at}"),
            Violation::HiddenEdgeCovariates { u, v, arity } => write!(
                f,
                "hidden-incident edge `{u}`-`{v}` declares {arity} edge covariates (must be bias-only)"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether any violation's message contains `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}
