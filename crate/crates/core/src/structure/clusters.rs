use petgraph::unionfind::UnionFind;

use crate::error::{CltmError, Result};
use crate::model::LatentTreeStructure;

/// Partitions the observed nodes by cutting the `n_clusters - 1` longest
/// edges. Among equally long edges hidden-hidden edges are cut first, then
/// the lexicographically smallest pair of endpoint ids. Components
/// without observed nodes contribute no cluster.
///
/// Clusters hold structure node indices, sorted, and are ordered by their
/// smallest member.
pub fn extract_clusters(tree: &LatentTreeStructure, n_clusters: usize) -> Result<Vec<Vec<usize>>> {
    let observed = tree.observed_indices();
    if n_clusters < 1 {
        return Err(CltmError::InvalidArgument("n_clusters must be at least 1".into()));
    }
    if n_clusters > observed.len() {
        return Err(CltmError::InvalidArgument(format!(
            "{n_clusters} clusters requested for {} observed nodes",
            observed.len()
        )));
    }
    let mut order: Vec<usize> = (0..tree.edge_count()).collect();
    let hidden_hidden = |k: usize| {
        let e = tree.edges()[k];
        tree.is_hidden(e.u) && tree.is_hidden(e.v)
    };
    let key = |k: usize| {
        let e = tree.edges()[k];
        let (a, b) = (tree.nodes()[e.u].id.as_str(), tree.nodes()[e.v].id.as_str());
        (a.min(b), a.max(b))
    };
    order.sort_by(|&a, &b| {
        let (ea, eb) = (tree.edges()[a], tree.edges()[b]);
        eb.length
            .total_cmp(&ea.length)
            .then(hidden_hidden(b).cmp(&hidden_hidden(a)))
            .then(key(a).cmp(&key(b)))
    });
    let cut: Vec<usize> = order.into_iter().take(n_clusters - 1).collect();

    let mut uf = UnionFind::<usize>::new(tree.node_count());
    for (k, e) in tree.edges().iter().enumerate() {
        if !cut.contains(&k) {
            uf.union(e.u, e.v);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in &observed {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    clusters.sort_by_key(|c| c[0]);
    Ok(clusters)
}

/// Cluster number of each observed node id.
pub fn cluster_assignment(tree: &LatentTreeStructure, n_clusters: usize) -> Result<Vec<(String, usize)>> {
    let clusters = extract_clusters(tree, n_clusters)?;
    let mut out: Vec<(String, usize)> = clusters
        .iter()
        .enumerate()
        .flat_map(|(c, members)| members.iter().map(move |&i| (tree.nodes()[i].id.clone(), c)))
        .collect();
    out.sort();
    Ok(out)
}
