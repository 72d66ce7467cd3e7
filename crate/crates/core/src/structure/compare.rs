use std::collections::BTreeSet;

use crate::error::{CltmError, Result};
use crate::model::LatentTreeStructure;

/// Observed-node bipartitions induced by the edges of `tree`, trivial
/// splits included, as membership vectors over the observed ids in sorted
/// order (normalized so the first observed id is on the `false` side).
pub fn observed_splits(tree: &LatentTreeStructure) -> BTreeSet<Vec<bool>> {
    let mut observed: Vec<(&str, usize)> = tree
        .observed_indices()
        .into_iter()
        .map(|i| (tree.nodes()[i].id.as_str(), i))
        .collect();
    observed.sort();
    let adj = tree.adjacency();
    let mut out = BTreeSet::new();
    for (k, e) in tree.edges().iter().enumerate() {
        // Nodes reachable from `e.v` without crossing edge `k`.
        let mut side = vec![false; tree.node_count()];
        side[e.v] = true;
        let mut stack = vec![e.v];
        while let Some(x) = stack.pop() {
            for &(y, f) in &adj[x] {
                if f != k && !side[y] {
                    side[y] = true;
                    stack.push(y);
                }
            }
        }
        let mut split: Vec<bool> = observed.iter().map(|&(_, i)| side[i]).collect();
        if split.iter().all(|&b| b) || split.iter().all(|&b| !b) {
            continue;
        }
        if split[0] {
            split.iter_mut().for_each(|b| *b = !*b);
        }
        out.insert(split);
    }
    out
}

/// Robinson-Foulds distance over observed-node splits (trivial splits
/// included, so an observed internal node and a hidden node in its place are
/// told apart). Zero iff the two trees are the same labelled latent tree
/// when every hidden node has degree at least three.
pub fn robinson_foulds(a: &LatentTreeStructure, b: &LatentTreeStructure) -> Result<usize> {
    let ids = |t: &LatentTreeStructure| -> BTreeSet<String> {
        t.observed_indices().into_iter().map(|i| t.nodes()[i].id.clone()).collect()
    };
    if ids(a) != ids(b) {
        return Err(CltmError::InvalidArgument("trees have different observed node sets".into()));
    }
    let sa = observed_splits(a);
    let sb = observed_splits(b);
    Ok(sa.symmetric_difference(&sb).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Edge, Node};

    fn star() -> LatentTreeStructure {
        LatentTreeStructure::new(
            vec![Node::observed("a"), Node::observed("b"), Node::observed("c"), Node::hidden("h")],
            vec![Edge::new(3, 0, 1.0), Edge::new(3, 1, 1.0), Edge::new(3, 2, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn star_versus_chain() {
        let chain = LatentTreeStructure::new(
            vec![Node::observed("a"), Node::observed("b"), Node::observed("c")],
            vec![Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)],
        )
        .unwrap();
        assert_eq!(robinson_foulds(&star(), &star()).unwrap(), 0);
        assert_eq!(robinson_foulds(&star(), &chain).unwrap(), 1);
    }

    #[test]
    fn hidden_names_and_lengths_do_not_matter() {
        let other = LatentTreeStructure::new(
            vec![Node::hidden("zz"), Node::observed("c"), Node::observed("b"), Node::observed("a")],
            vec![Edge::new(0, 1, 3.0), Edge::new(2, 0, 0.5), Edge::new(0, 3, 1.0)],
        )
        .unwrap();
        assert_eq!(robinson_foulds(&star(), &other).unwrap(), 0);
    }

    #[test]
    fn different_leaf_sets_rejected() {
        let other = LatentTreeStructure::new(vec![Node::observed("x")], vec![]).unwrap();
        assert!(robinson_foulds(&star(), &other).is_err());
    }
}
