//! Sibling/parent tests on the `phi_ijk = d_ik - d_jk` statistic and the
//! recursive grouping procedure built on them.

use std::collections::BTreeMap;

use ndarray::Array2;
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{CltmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `i` and `j` are leaves sharing a parent.
    Siblings,
    /// `i` lies on the path from `j` to every witness.
    IParentOfJ,
    /// `j` lies on the path from `i` to every witness.
    JParentOfI,
    Separated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingTestResult {
    pub relation: Relation,
    pub phi_mean: f64,
    pub phi_spread: f64,
}

/// `D[i][k] - D[j][k]`.
pub fn phi_statistic(d: &Array2<f64>, i: usize, j: usize, k: usize) -> Result<f64> {
    let n = d.nrows();
    if i >= n || j >= n || k >= n {
        return Err(CltmError::OutOfRange(format!("({i}, {j}, {k}) in a {n}x{n} matrix")));
    }
    if i == j || i == k || j == k {
        return Err(CltmError::InvalidArgument(format!("indices ({i}, {j}, {k}) must be distinct")));
    }
    Ok(d[[i, k]] - d[[j, k]])
}

/// Classifies the pair `(i, j)` from `phi_ijk` over the witnesses `k`.
///
/// A spread above `eps_test` means the witnesses disagree and the pair is
/// `Separated`. Otherwise `phi_mean` close to `+d_ij` puts `j` on every
/// path from `i` (`JParentOfI`), close to `-d_ij` puts `i` on every path
/// from `j` (`IParentOfJ`), and anything strictly inside the band means the
/// two share a parent.
pub fn classify_pair(
    d: &Array2<f64>,
    i: usize,
    j: usize,
    witnesses: &[usize],
    eps_test: f64,
) -> Result<GroupingTestResult> {
    if witnesses.is_empty() {
        return Err(CltmError::Empty("witness set".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &k in witnesses {
        if k == i || k == j {
            return Err(CltmError::InvalidArgument(format!("witness {k} overlaps the pair")));
        }
        let phi = phi_statistic(d, i, j, k)?;
        lo = lo.min(phi);
        hi = hi.max(phi);
        sum += phi;
    }
    let phi_mean = sum / witnesses.len() as f64;
    let phi_spread = hi - lo;
    let dij = d[[i, j]];
    let relation = if phi_spread > eps_test {
        Relation::Separated
    } else if phi_mean >= dij - eps_test {
        Relation::JParentOfI
    } else if phi_mean <= -(dij - eps_test) {
        Relation::IParentOfJ
    } else {
        Relation::Siblings
    };
    Ok(GroupingTestResult {
        relation,
        phi_mean,
        phi_spread,
    })
}

/// Output of recursive grouping on `n_input` nodes: input nodes keep
/// indices `0..n_input`, created hidden nodes follow.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LocalTree {
    pub n_input: usize,
    pub n_hidden: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl LocalTree {
    pub fn node_count(&self) -> usize {
        self.n_input + self.n_hidden
    }

    /// All-pairs path lengths.
    pub fn path_lengths(&self) -> Array2<f64> {
        let m = self.node_count();
        let mut adj = vec![Vec::new(); m];
        for &(u, v, l) in &self.edges {
            adj[u].push((v, l));
            adj[v].push((u, l));
        }
        let mut out = Array2::from_elem((m, m), f64::INFINITY);
        for s in 0..m {
            out[[s, s]] = 0.0;
            let mut stack = vec![s];
            while let Some(x) = stack.pop() {
                for &(y, l) in &adj[x] {
                    if out[[s, y]].is_infinite() {
                        out[[s, y]] = out[[s, x]] + l;
                        stack.push(y);
                    }
                }
            }
        }
        out
    }
}

/// Grows a square distance table as hidden nodes are created.
struct Table {
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn get(&self, a: usize, b: usize) -> f64 {
        self.rows[a][b]
    }

    fn set(&mut self, a: usize, b: usize, v: f64) {
        self.rows[a][b] = v;
        self.rows[b][a] = v;
    }

    fn push_node(&mut self) -> usize {
        let id = self.rows.len();
        for r in &mut self.rows {
            r.push(f64::NAN);
        }
        let mut row = vec![f64::NAN; id + 1];
        row[id] = 0.0;
        self.rows.push(row);
        id
    }

    fn as_array(&self, nodes: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((nodes.len(), nodes.len()), |(a, b)| self.get(nodes[a], nodes[b]))
    }
}

/// Child-to-parent lengths for a sibling group with a new hidden parent.
///
/// Least squares over `x_a + x_b = d_ab` and `x_a - x_b = mean_k phi_abk`
/// for every pair in the group (the witnesses are all other active nodes).
/// The normal matrix is `2 (c - 1) I`, so each length is the average of
/// `(d_ab + mean_k phi_abk) / 2` over the other members `b`.
fn sibling_lengths(d: &Array2<f64>, family: &[usize], witnesses_of: impl Fn(usize, usize) -> Vec<usize>) -> Vec<f64> {
    let c = family.len();
    family
        .iter()
        .map(|&a| {
            let mut acc = 0.0;
            for &b in family.iter().filter(|&&b| b != a) {
                let ks = witnesses_of(a, b);
                let mean_phi = ks.iter().map(|&k| d[[a, k]] - d[[b, k]]).sum::<f64>() / ks.len() as f64;
                acc += d[[a, b]] + mean_phi;
            }
            acc / (2.0 * (c as f64 - 1.0))
        })
        .collect()
}

/// Recursive grouping over all nodes of `d`.
pub(crate) fn group(d: &Array2<f64>, eps_test: f64) -> Result<LocalTree> {
    let n = d.nrows();
    if n < 2 {
        return Err(CltmError::InvalidArgument(format!("recursive grouping needs >= 2 nodes, got {n}")));
    }
    let mut table = Table {
        rows: (0..n).map(|i| d.row(i).to_vec()).collect(),
    };
    let mut active: Vec<usize> = (0..n).collect();
    let mut edges = Vec::new();

    while active.len() > 2 {
        let local = table.as_array(&active);
        let a = active.len();
        let witnesses_of = |i: usize, j: usize| -> Vec<usize> { (0..a).filter(|&k| k != i && k != j).collect() };

        let mut rel = vec![vec![Relation::Separated; a]; a];
        let mut uf = UnionFind::<usize>::new(a);
        for i in 0..a {
            for j in i + 1..a {
                let r = classify_pair(&local, i, j, &witnesses_of(i, j), eps_test)?;
                rel[i][j] = r.relation;
                rel[j][i] = match r.relation {
                    Relation::IParentOfJ => Relation::JParentOfI,
                    Relation::JParentOfI => Relation::IParentOfJ,
                    other => other,
                };
                if r.relation != Relation::Separated {
                    uf.union(i, j);
                }
            }
        }
        let mut families: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..a {
            families.entry(uf.find(i)).or_default().push(i);
        }
        let mut families: Vec<Vec<usize>> = families.into_values().collect();
        if families.iter().all(|f| f.len() == 1) {
            // Noise hid every family: group the closest pair.
            let (mut bi, mut bj) = (0, 1);
            for i in 0..a {
                for j in i + 1..a {
                    if local[[i, j]] < local[[bi, bj]] {
                        (bi, bj) = (i, j);
                    }
                }
            }
            families.retain(|f| f[0] != bi && f[0] != bj);
            families.push(vec![bi, bj]);
        }
        families.sort_by_key(|f| f[0]);

        let mut next_active = Vec::new();
        let mut created: Vec<(usize, Vec<usize>, Vec<f64>)> = Vec::new();
        for fam in &families {
            if fam.len() == 1 {
                next_active.push(active[fam[0]]);
                continue;
            }
            let parent = fam
                .iter()
                .copied()
                .filter(|&p| fam.iter().all(|&c| c == p || rel[c][p] == Relation::JParentOfI))
                .min_by(|&p, &q| {
                    let sp: f64 = fam.iter().map(|&c| local[[p, c]]).sum();
                    let sq: f64 = fam.iter().map(|&c| local[[q, c]]).sum();
                    sp.total_cmp(&sq).then(p.cmp(&q))
                });
            match parent {
                Some(p) => {
                    for &c in fam.iter().filter(|&&c| c != p) {
                        edges.push((active[p], active[c], local[[p, c]]));
                    }
                    next_active.push(active[p]);
                }
                None => {
                    let lengths = sibling_lengths(&local, fam, witnesses_of);
                    let h = table.push_node();
                    for (&c, &l) in fam.iter().zip(&lengths) {
                        edges.push((h, active[c], l));
                        table.set(h, active[c], l);
                    }
                    created.push((h, fam.iter().map(|&c| active[c]).collect(), lengths));
                    next_active.push(h);
                }
            }
        }

        // Distances from each new hidden node to the surviving old nodes and
        // to the other new hidden nodes.
        for (h, children, lens) in &created {
            for &k in &next_active {
                if created.iter().any(|(g, _, _)| g == &k) {
                    continue;
                }
                let v = children
                    .iter()
                    .zip(lens)
                    .map(|(&c, &l)| table.get(k, c) - l)
                    .sum::<f64>()
                    / children.len() as f64;
                table.set(*h, k, v);
            }
        }
        for (x, (h, ch, lh)) in created.iter().enumerate() {
            for (g, cg, lg) in &created[x + 1..] {
                let mut acc = 0.0;
                for (&a, &la) in ch.iter().zip(lh) {
                    for (&b, &lb) in cg.iter().zip(lg) {
                        acc += table.get(a, b) - la - lb;
                    }
                }
                table.set(*h, *g, acc / (ch.len() * cg.len()) as f64);
            }
        }
        next_active.sort_unstable();
        if next_active.len() == active.len() {
            return Err(CltmError::InconsistentDistances(
                "recursive grouping made no progress".into(),
            ));
        }
        active = next_active;
    }
    if active.len() == 2 {
        edges.push((active[0], active[1], table.get(active[0], active[1])));
    }
    Ok(LocalTree {
        n_input: n,
        n_hidden: table.rows.len() - n,
        edges,
    })
}

/// Errors when the tree's path lengths miss `d` by more than `eps_fit` on
/// some input pair, naming the worst quartet of `d`.
pub(crate) fn check_fit(d: &Array2<f64>, tree: &LocalTree, eps_fit: f64, labels: &[String]) -> Result<()> {
    let paths = tree.path_lengths();
    let n = tree.n_input;
    let mut worst = (0.0, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let gap = (paths[[i, j]] - d[[i, j]]).abs();
            if gap > worst.0 || gap.is_nan() {
                worst = (gap, i, j);
            }
        }
    }
    if let Some(&(u, v, l)) = tree.edges.iter().find(|e| e.2 < -eps_fit) {
        let name = |x: usize| labels.get(x).cloned().unwrap_or_else(|| format!("hidden#{x}"));
        return Err(CltmError::InconsistentDistances(format!(
            "no additive fit: edge ({}, {}) would need length {l:.4}",
            name(u),
            name(v)
        )));
    }
    if worst.0 <= eps_fit {
        return Ok(());
    }
    let dm = crate::distances::DistanceMatrix {
        labels: labels.to_vec(),
        values: d.clone(),
    };
    let detail = match dm.max_four_point_violation() {
        Some((gap, q)) => format!(
            "worst quartet ({}, {}, {}, {}) violates the four-point condition by {gap:.4}",
            labels[q[0]], labels[q[1]], labels[q[2]], labels[q[3]]
        ),
        None => format!("pair ({}, {}) misfit {:.4}", labels[worst.1], labels[worst.2], worst.0),
    };
    Err(CltmError::InconsistentDistances(format!(
        "no additive fit within {eps_fit}: max misfit {:.4}; {detail}",
        worst.0
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn quartet() -> Array2<f64> {
        arr2(&[
            [0.0, 2.0, 3.0, 3.0],
            [2.0, 0.0, 3.0, 3.0],
            [3.0, 3.0, 0.0, 2.0],
            [3.0, 3.0, 2.0, 0.0],
        ])
    }

    #[test]
    fn phi_examples() {
        let chain = arr2(&[[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]]);
        assert_eq!(phi_statistic(&chain, 0, 1, 2).unwrap(), 1.0);
        let star = arr2(&[[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]]);
        assert_eq!(phi_statistic(&star, 0, 1, 2).unwrap(), 0.0);
        let q = quartet();
        assert_eq!(phi_statistic(&q, 0, 1, 2).unwrap(), 0.0);
        assert_eq!(phi_statistic(&q, 0, 1, 3).unwrap(), 0.0);
        assert!(phi_statistic(&q, 0, 0, 1).is_err());
        assert!(phi_statistic(&q, 0, 1, 7).is_err());
    }

    #[test]
    fn classify_examples() {
        // Chain 1-2-3 with node 2 in the middle: node 2 is on every path from 1.
        let chain = arr2(&[[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]]);
        let r = classify_pair(&chain, 0, 1, &[2], 0.1).unwrap();
        assert_eq!(r.relation, Relation::JParentOfI);
        assert_eq!(r.phi_mean, 1.0);
        let r = classify_pair(&chain, 1, 0, &[2], 0.1).unwrap();
        assert_eq!(r.relation, Relation::IParentOfJ);

        let star = arr2(&[[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]]);
        assert_eq!(classify_pair(&star, 0, 1, &[2], 0.1).unwrap().relation, Relation::Siblings);

        let q = quartet();
        let r = classify_pair(&q, 0, 2, &[1, 3], 0.1).unwrap();
        assert_eq!(r.relation, Relation::Separated);
        assert_eq!(r.phi_spread, 2.0);
        let r = classify_pair(&q, 0, 1, &[2, 3], 0.1).unwrap();
        assert_eq!((r.relation, r.phi_spread), (Relation::Siblings, 0.0));
    }

    #[test]
    fn classify_requires_witnesses() {
        assert!(matches!(classify_pair(&quartet(), 0, 1, &[], 0.1), Err(CltmError::Empty(_))));
        assert!(classify_pair(&quartet(), 0, 1, &[1], 0.1).is_err());
    }

    #[test]
    fn star_gets_one_hidden_root() {
        let star = arr2(&[[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]]);
        let t = group(&star, 0.1).unwrap();
        assert_eq!(t.n_hidden, 1);
        assert_eq!(t.edges.len(), 3);
        for &(u, _, l) in &t.edges {
            assert_eq!(u, 3);
            assert!((l - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quartet_gets_two_hidden_parents() {
        let t = group(&quartet(), 0.1).unwrap();
        assert_eq!(t.n_hidden, 2);
        let mut e: Vec<(usize, usize, f64)> = t.edges.iter().map(|&(u, v, l)| (u.min(v), u.max(v), l)).collect();
        e.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let expect = [(0, 4, 1.0), (1, 4, 1.0), (2, 5, 1.0), (3, 5, 1.0), (4, 5, 1.0)];
        assert_eq!(e.len(), expect.len());
        for (got, want) in e.iter().zip(expect) {
            assert_eq!((got.0, got.1), (want.0, want.1));
            assert!((got.2 - want.2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_leaves_single_edge() {
        let t = group(&arr2(&[[0.0, 1.5], [1.5, 0.0]]), 0.1).unwrap();
        assert_eq!(t.n_hidden, 0);
        assert_eq!(t.edges, vec![(0, 1, 1.5)]);
    }

    #[test]
    fn chain_has_no_hidden_nodes() {
        let chain = arr2(&[[0.0, 1.0, 3.0], [1.0, 0.0, 2.0], [3.0, 2.0, 0.0]]);
        let t = group(&chain, 0.1).unwrap();
        assert_eq!(t.n_hidden, 0);
        let mut e: Vec<(usize, usize)> = t.edges.iter().map(|&(u, v, _)| (u.min(v), u.max(v))).collect();
        e.sort();
        assert_eq!(e, vec![(0, 1), (1, 2)]);
    }
}
