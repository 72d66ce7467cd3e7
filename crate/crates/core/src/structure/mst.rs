use petgraph::unionfind::UnionFind;

use crate::distances::DistanceMatrix;

/// Minimum spanning tree of `d` (Kruskal). Equal distances are resolved by
/// the lexicographic order of `(min id, max id)`. Edges are returned as
/// `(i, j)` with `i < j`, in insertion order.
pub fn chow_liu_skeleton(d: &DistanceMatrix) -> Vec<(usize, usize)> {
    let n = d.n();
    let mut candidates: Vec<(usize, usize)> = crate::model::pairs(n).collect();
    candidates.sort_by(|&(a, b), &(c, e)| d.get(a, b).total_cmp(&d.get(c, e)).then((a, b).cmp(&(c, e))));
    let mut uf = UnionFind::<usize>::new(n);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for (i, j) in candidates {
        if uf.union(i, j) {
            out.push((i, j));
            if out.len() + 1 == n {
                break;
            }
        }
    }
    out
}
