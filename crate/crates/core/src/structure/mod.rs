//! Latent tree reconstruction from an information-distance matrix.
//!
//! The default learner builds the minimum spanning tree of the distances
//! over the observed nodes and then runs recursive grouping on the closed
//! neighbourhood of each internal node, splicing the local latent subtree
//! back in. Global recursive grouping over all observed nodes is available
//! through [`GroupingVariant::Global`]. Both finish by contracting short
//! hidden edges and hidden nodes of degree two or less.

mod clusters;
mod compare;
mod export;
mod grouping;
mod mst;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use clusters::{cluster_assignment, extract_clusters};
pub use compare::{observed_splits, robinson_foulds};
pub use export::to_dot;
pub use grouping::{classify_pair, phi_statistic, GroupingTestResult, Relation};
pub use mst::chow_liu_skeleton;

use crate::distances::DistanceMatrix;
use crate::error::{CltmError, Result};
use crate::model::{Edge, LatentTreeStructure, Node};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingVariant {
    #[default]
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructureConfig {
    pub eps_test: f64,
    pub eps_min: f64,
    pub variant: GroupingVariant,
    /// Reject outputs whose path lengths miss the input distances by more
    /// than `3 * eps_test`.
    pub check_fit: bool,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            eps_test: 0.1,
            eps_min: 0.05,
            variant: GroupingVariant::Local,
            check_fit: true,
        }
    }
}

impl StructureConfig {
    pub fn eps_fit(&self) -> f64 {
        3.0 * self.eps_test
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps_test > 0.0 && self.eps_min > 0.0) {
            return Err(CltmError::InvalidArgument(format!(
                "eps_test ({}) and eps_min ({}) must be positive",
                self.eps_test, self.eps_min
            )));
        }
        Ok(())
    }
}

/// Recursive grouping over every node of `d`, followed by contraction.
pub fn recursive_grouping(d: &DistanceMatrix, config: &StructureConfig) -> Result<LatentTreeStructure> {
    config.validate()?;
    let local = grouping::group(&d.values, config.eps_test)?;
    if config.check_fit {
        grouping::check_fit(&d.values, &local, config.eps_fit(), &d.labels)?;
    }
    let edges = local.edges.iter().map(|&(u, v, l)| (u, v, l)).collect();
    finish(d, local.node_count(), edges, config)
}

/// Chow-Liu skeleton refined by neighbourhood-local recursive grouping
/// (or global grouping, per `config.variant`).
pub fn cl_grouping(d: &DistanceMatrix, config: &StructureConfig) -> Result<LatentTreeStructure> {
    config.validate()?;
    let n = d.n();
    if n < 3 {
        return Err(CltmError::InvalidArgument(format!("structure learning needs n >= 3, got {n}")));
    }
    if config.variant == GroupingVariant::Global {
        return recursive_grouping(d, config);
    }

    let skeleton = chow_liu_skeleton(d);
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| d.values.row(i).to_vec()).collect();
    let mut edges: BTreeMap<(usize, usize), f64> =
        skeleton.iter().map(|&(i, j)| ((i, j), d.get(i, j))).collect();
    let mut degree = vec![0usize; n];
    for &(i, j) in &skeleton {
        degree[i] += 1;
        degree[j] += 1;
    }

    for center in (0..n).filter(|&i| degree[i] >= 2) {
        let total = dist.len();
        let mut hood: Vec<usize> = vec![center];
        hood.extend(edges.keys().filter_map(|&(a, b)| {
            if a == center {
                Some(b)
            } else if b == center {
                Some(a)
            } else {
                None
            }
        }));
        hood.sort_unstable();
        if hood.len() < 3 {
            continue;
        }
        let local_d = Array2::from_shape_fn((hood.len(), hood.len()), |(a, b)| dist[hood[a]][hood[b]]);
        let local = grouping::group(&local_d, config.eps_test)?;
        if config.check_fit {
            let labels: Vec<String> = hood.iter().map(|&g| label(d, g)).collect();
            grouping::check_fit(&local_d, &local, config.eps_fit(), &labels)?;
        }

        // Which neighbourhood node each outside node hangs from.
        for &x in &hood {
            if x != center {
                edges.remove(&(center.min(x), center.max(x)));
            }
        }
        let attach = attachments(total, &edges, &hood);

        let global_id = |l: usize| -> usize {
            if l < hood.len() {
                hood[l]
            } else {
                total + (l - hood.len())
            }
        };
        for _ in 0..local.n_hidden {
            for row in &mut dist {
                row.push(f64::NAN);
            }
            dist.push(vec![f64::NAN; dist.len() + 1]);
        }
        for &(u, v, l) in &local.edges {
            let (a, b) = (global_id(u), global_id(v));
            edges.insert((a.min(b), a.max(b)), l);
        }
        let paths = local.path_lengths();
        let local_of: BTreeMap<usize, usize> = hood.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        for h in hood.len()..local.node_count() {
            let gh = global_id(h);
            dist[gh][gh] = 0.0;
            for other in 0..local.node_count() {
                if other != h {
                    dist[gh][global_id(other)] = paths[[h, other]];
                    dist[global_id(other)][gh] = paths[[h, other]];
                }
            }
            let across = far_side(&local, h);
            for (k, &anchor) in attach.iter().enumerate().take(total) {
                if local_of.contains_key(&k) {
                    continue;
                }
                let via: Vec<usize> = (0..hood.len()).filter(|&c| !across[c].contains(&local_of[&anchor])).collect();
                let v = via.iter().map(|&c| dist[hood[c]][k] - paths[[c, h]]).sum::<f64>() / via.len() as f64;
                dist[gh][k] = v;
                dist[k][gh] = v;
            }
        }
    }

    let node_count = dist.len();
    let edges: Vec<(usize, usize, f64)> = edges.into_iter().map(|((a, b), l)| (a, b, l)).collect();
    let tree = finish(d, node_count, edges, config)?;
    if config.check_fit {
        check_observed_fit(d, &tree, config.eps_fit())?;
    }
    Ok(tree)
}

fn label(d: &DistanceMatrix, g: usize) -> String {
    d.labels.get(g).cloned().unwrap_or_else(|| format!("hidden#{g}"))
}

/// For each local input node `c`, the set of local nodes in the same branch
/// of `h` as `c` (so `h` lies on the path from `c` to anything outside it).
fn far_side(local: &grouping::LocalTree, h: usize) -> Vec<BTreeSet<usize>> {
    let m = local.node_count();
    let mut adj = vec![Vec::new(); m];
    for &(u, v, _) in &local.edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut branch = vec![usize::MAX; m];
    for &start in &adj[h] {
        branch[start] = start;
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if y != h && branch[y] == usize::MAX {
                    branch[y] = start;
                    stack.push(y);
                }
            }
        }
    }
    (0..local.n_input)
        .map(|c| (0..m).filter(|&x| x != h && branch[x] == branch[c]).collect())
        .collect()
}

/// For every node, the neighbourhood member whose component (after the
/// neighbourhood's internal edges were removed) contains it.
fn attachments(total: usize, edges: &BTreeMap<(usize, usize), f64>, hood: &[usize]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); total];
    for &(a, b) in edges.keys() {
        if a < total && b < total {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut owner = vec![usize::MAX; total];
    for &s in hood {
        owner[s] = s;
        let mut stack = vec![s];
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if owner[y] == usize::MAX {
                    owner[y] = s;
                    stack.push(y);
                }
            }
        }
    }
    owner
}

fn check_observed_fit(d: &DistanceMatrix, tree: &LatentTreeStructure, eps_fit: f64) -> Result<()> {
    let n = d.n();
    for i in 0..n {
        let from = tree.distances_from(i)?;
        for j in i + 1..n {
            let gap = (from[j] - d.get(i, j)).abs();
            if gap.is_nan() || gap > eps_fit {
                let detail = d
                    .max_four_point_violation()
                    .map(|(g, q)| {
                        format!(
                            "; worst quartet ({}, {}, {}, {}) violates the four-point condition by {g:.4}",
                            d.labels[q[0]], d.labels[q[1]], d.labels[q[2]], d.labels[q[3]]
                        )
                    })
                    .unwrap_or_default();
                return Err(CltmError::InconsistentDistances(format!(
                    "path length between `{}` and `{}` misses the input by {gap:.4}{detail}",
                    d.labels[i], d.labels[j]
                )));
            }
        }
    }
    Ok(())
}

/// Contracts the raw edge list into canonical form and names the nodes:
/// observed nodes keep the matrix labels and order, surviving hidden nodes
/// become `h0, h1, ...` in creation order.
fn finish(
    d: &DistanceMatrix,
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
    config: &StructureConfig,
) -> Result<LatentTreeStructure> {
    let n = d.n();
    let edges = contract(n, node_count, edges, config.eps_min);
    let used: BTreeSet<usize> = edges.iter().flat_map(|&(u, v, _)| [u, v]).filter(|&x| x >= n).collect();
    let mut rename = vec![usize::MAX; node_count];
    let mut nodes: Vec<Node> = d.labels.iter().map(Node::observed).collect();
    for (i, r) in rename.iter_mut().enumerate().take(n) {
        *r = i;
    }
    let taken: BTreeSet<&str> = d.labels.iter().map(String::as_str).collect();
    for (k, &h) in used.iter().enumerate() {
        rename[h] = nodes.len();
        let mut id = format!("h{k}");
        while taken.contains(id.as_str()) {
            id.insert(0, '_');
        }
        nodes.push(Node::hidden(id));
    }
    let edges = edges
        .into_iter()
        .map(|(u, v, l)| Edge::new(rename[u], rename[v], l))
        .collect();
    LatentTreeStructure::new(nodes, edges)
}

/// Removes hidden nodes joined by an edge shorter than `eps_min` (merging
/// them into the neighbour) and hidden nodes of degree two or less; clamps
/// remaining observed-observed lengths to at least `eps_min`. Nodes below
/// `n_observed` are observed.
fn contract(
    n_observed: usize,
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
    eps_min: f64,
) -> Vec<(usize, usize, f64)> {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut map: BTreeMap<(usize, usize), f64> = edges.into_iter().map(|(u, v, l)| (key(u, v), l)).collect();
    let hidden = |x: usize| x >= n_observed;
    loop {
        let short = map
            .iter()
            .find(|(&(a, b), &l)| l < eps_min && (hidden(a) || hidden(b)))
            .map(|(&k, &l)| (k, l));
        if let Some(((a, b), l)) = short {
            let (keep, gone) = if !hidden(a) || (hidden(b) && a < b) { (a, b) } else { (b, a) };
            map.remove(&(a, b));
            let moved: Vec<((usize, usize), f64)> = map
                .iter()
                .filter(|(&(x, y), _)| x == gone || y == gone)
                .map(|(&k, &len)| (k, len))
                .collect();
            for ((x, y), len) in moved {
                map.remove(&(x, y));
                let other = if x == gone { y } else { x };
                map.insert(key(keep, other), len + l.max(0.0));
            }
            continue;
        }
        let mut changed = false;
        for h in n_observed..node_count {
            let incident: Vec<((usize, usize), f64)> = map
                .iter()
                .filter(|(&(x, y), _)| x == h || y == h)
                .map(|(&k, &len)| (k, len))
                .collect();
            match incident.len() {
                1 => {
                    map.remove(&incident[0].0);
                    changed = true;
                }
                2 => {
                    let ends: Vec<usize> = incident
                        .iter()
                        .map(|&((x, y), _)| if x == h { y } else { x })
                        .collect();
                    for (k, _) in &incident {
                        map.remove(k);
                    }
                    map.insert(key(ends[0], ends[1]), incident[0].1 + incident[1].1);
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    map.into_iter()
        .map(|((a, b), l)| (a, b, if hidden(a) || hidden(b) { l } else { l.max(eps_min) }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn dm(values: Array2<f64>) -> DistanceMatrix {
        let labels = (1..=values.nrows()).map(|i| i.to_string()).collect();
        DistanceMatrix::new(labels, values).unwrap()
    }

    #[test]
    fn star_distances() {
        let t = cl_grouping(&dm(arr2(&[[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]])), &StructureConfig::default()).unwrap();
        assert_eq!(t.hidden_count(), 1);
        assert!(t.edges().iter().all(|e| (e.length - 1.0).abs() < 1e-12));
        assert!(t.structural_violations().is_empty());
    }

    #[test]
    fn observed_chain() {
        let d = dm(arr2(&[
            [0.0, 1.0, 2.0, 3.5],
            [1.0, 0.0, 1.0, 2.5],
            [2.0, 1.0, 0.0, 1.5],
            [3.5, 2.5, 1.5, 0.0],
        ]));
        for variant in [GroupingVariant::Local, GroupingVariant::Global] {
            let cfg = StructureConfig { variant, ..Default::default() };
            let t = cl_grouping(&d, &cfg).unwrap();
            assert_eq!(t.hidden_count(), 0);
            let mut e: Vec<(usize, usize)> = t.edges().iter().map(|e| (e.u.min(e.v), e.u.max(e.v))).collect();
            e.sort();
            assert_eq!(e, vec![(0, 1), (1, 2), (2, 3)]);
        }
    }

    #[test]
    fn quartet_recovered() {
        let d = dm(arr2(&[
            [0.0, 2.0, 3.0, 3.0],
            [2.0, 0.0, 3.0, 3.0],
            [3.0, 3.0, 0.0, 2.0],
            [3.0, 3.0, 2.0, 0.0],
        ]));
        let t = cl_grouping(&d, &StructureConfig::default()).unwrap();
        assert_eq!(t.hidden_count(), 2);
        let truth = LatentTreeStructure::new(
            vec![
                Node::observed("1"),
                Node::observed("2"),
                Node::observed("3"),
                Node::observed("4"),
                Node::hidden("a"),
                Node::hidden("b"),
            ],
            vec![Edge::new(0, 4, 1.0), Edge::new(1, 4, 1.0), Edge::new(2, 5, 1.0), Edge::new(3, 5, 1.0), Edge::new(4, 5, 1.0)],
        )
        .unwrap();
        assert_eq!(robinson_foulds(&t, &truth).unwrap(), 0);
        for e in t.edges() {
            assert!((e.length - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn contraction_rules() {
        // 0,1,2 observed; 3 hidden of degree 2 between 0 and 4; 4 hidden hub.
        let raw = vec![(0, 3, 0.5), (3, 4, 0.5), (4, 1, 1.0), (4, 2, 1.0)];
        let mut out = contract(3, 5, raw, 0.05);
        out.sort_by_key(|e| (e.0, e.1));
        assert_eq!(out, vec![(0, 4, 1.0), (1, 4, 1.0), (2, 4, 1.0)]);
        // A hidden node 0.01 from an observed node merges into it.
        let raw = vec![(0, 3, 0.01), (3, 1, 1.0), (3, 2, 1.0)];
        let mut out = contract(3, 4, raw, 0.05);
        out.sort_by_key(|e| (e.0, e.1));
        assert_eq!(out, vec![(0, 1, 1.01), (0, 2, 1.01)]);
    }

    #[test]
    fn rejects_non_additive_input() {
        let d = dm(arr2(&[
            [0.0, 1.0, 5.0, 1.0],
            [1.0, 0.0, 1.0, 5.0],
            [5.0, 1.0, 0.0, 1.0],
            [1.0, 5.0, 1.0, 0.0],
        ]));
        let err = recursive_grouping(&d, &StructureConfig::default()).unwrap_err();
        assert!(matches!(err, CltmError::InconsistentDistances(_)), "{err}");
    }
}
