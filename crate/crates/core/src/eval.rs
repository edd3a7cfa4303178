//! Retrieval and hierarchy-quality metrics.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hierloss::HierGeometry;
use crate::mining::DistanceMatrix;

/// Recall@k for every `k` in `ks`: the fraction of queries with a
/// same-label item among their `k` nearest neighbors (self excluded, ties
/// broken by index).
pub fn recall_at_k(dist: &DistanceMatrix, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    let n = dist.len();
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {n} items",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::invalid("recall needs at least two items"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(Error::invalid(format!(
            "k = {k} must satisfy 1 <= k < n = {n}"
        )));
    }
    // rank (0-based) of the first same-label neighbor, n if none
    let first_hit: Vec<usize> = (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| dist.get(i, a).total_cmp(&dist.get(i, b)).then(a.cmp(&b)));
            order
                .iter()
                .position(|&j| labels[j] == labels[i])
                .unwrap_or(n)
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| first_hit.iter().filter(|&&r| r < k).count() as f64 / n as f64)
        .collect())
}

/// Rooted tree whose first `leaves` nodes are the leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InducedTree {
    parent: Vec<Option<usize>>,
    leaves: usize,
    root: usize,
    depth: Vec<usize>,
    leaf_count: Vec<usize>,
}

impl InducedTree {
    /// Validates that `parent` describes one rooted tree and that nodes
    /// `0..leaves` have no children.
    pub fn new(parent: Vec<Option<usize>>, leaves: usize) -> Result<Self> {
        let n = parent.len();
        if leaves > n {
            return Err(Error::Validation(format!(
                "{leaves} leaves in a tree of {n} nodes"
            )));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Validation(format!(
                "tree is disconnected: {} roots",
                roots.len()
            )));
        }
        for (i, p) in parent.iter().enumerate() {
            match *p {
                Some(p) if p >= n => {
                    return Err(Error::Validation(format!(
                        "node {i} has unknown parent {p}"
                    )))
                }
                Some(p) if p < leaves => {
                    return Err(Error::Validation(format!("leaf {p} has child {i}")))
                }
                _ => {}
            }
        }
        // depths by walking up with memoization; a cycle never reaches the root
        let mut depth: Vec<Option<usize>> = vec![None; n];
        depth[roots[0]] = Some(0);
        for start in 0..n {
            let mut path = vec![];
            let mut cur = start;
            while depth[cur].is_none() {
                if path.len() > n {
                    return Err(Error::Validation("tree contains a cycle".into()));
                }
                path.push(cur);
                cur = parent[cur].expect("non-root has parent");
            }
            let mut d = depth[cur].expect("set");
            for &node in path.iter().rev() {
                d += 1;
                depth[node] = Some(d);
            }
        }
        let depth: Vec<usize> = depth.into_iter().map(|d| d.expect("all reached")).collect();
        let mut leaf_count = vec![0usize; n];
        for leaf in 0..leaves {
            let mut cur = Some(leaf);
            while let Some(c) = cur {
                leaf_count[c] += 1;
                cur = parent[c];
            }
        }
        Ok(InducedTree {
            parent,
            leaves,
            root: roots[0],
            depth,
            leaf_count,
        })
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Number of leaves below (or at) `node`.
    pub fn leaves_under(&self, node: usize) -> usize {
        self.leaf_count[node]
    }

    pub fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].expect("non-root");
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].expect("non-root");
        }
        while a != b {
            a = self.parent[a].expect("non-root");
            b = self.parent[b].expect("non-root");
        }
        a
    }

    /// `(child, parent)` pairs in child order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (c, p)))
            .collect()
    }

    /// Text edge list, one `child_id parent_id` line per edge.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (c, p) in self.edges() {
            writeln!(out, "{c} {p}").expect("string write");
        }
        out
    }
}

/// `Σ_{i<j} w(i, j) · |leaves(i ∨ j)|` over all leaf pairs.
pub fn dasgupta_cost(tree: &InducedTree, weight: impl Fn(usize, usize) -> f64) -> Result<f64> {
    let n = tree.leaf_count();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = weight(i, j);
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!(
                    "weight ({i}, {j}) = {w} is not a finite nonnegative value"
                )));
            }
            if w != 0.0 {
                total += w * tree.leaves_under(tree.lca(i, j)) as f64;
            }
        }
    }
    Ok(total)
}

/// Random binary tree over `leaves` leaves built by merging two uniformly
/// chosen clusters until one remains. Internal nodes follow the leaves in
/// creation order; the last one is the root.
pub fn random_binary_tree<R: Rng + ?Sized>(leaves: usize, rng: &mut R) -> Result<InducedTree> {
    if leaves == 0 {
        return Err(Error::invalid("a tree needs at least one leaf"));
    }
    let total = 2 * leaves - 1;
    let mut parent = vec![None; total];
    let mut active: Vec<usize> = (0..leaves).collect();
    let mut next = leaves;
    while active.len() > 1 {
        let a = active.swap_remove(rng.random_range(0..active.len()));
        let b = active.swap_remove(rng.random_range(0..active.len()));
        parent[a] = Some(next);
        parent[b] = Some(next);
        active.push(next);
        next += 1;
    }
    InducedTree::new(parent, leaves)
}

/// Tree over samples and hierarchical proxies.
///
/// Nodes `0..n` are samples, `n..n+P` are proxies and `n+P` is a virtual
/// root. A sample's parent is its nearest proxy. A proxy's parent is the
/// nearest proxy with strictly smaller norm, or the virtual root when none
/// exists. Ties go to the lower index.
pub fn extract_tree(
    samples: &[f64],
    proxies: &[f64],
    dim: usize,
    geom: &HierGeometry,
) -> Result<InducedTree> {
    if dim == 0 || !samples.len().is_multiple_of(dim) || !proxies.len().is_multiple_of(dim) {
        return Err(Error::invalid(
            "sample/proxy buffers do not match the dimension",
        ));
    }
    let n = samples.len() / dim;
    let p = proxies.len() / dim;
    if p == 0 {
        return Err(Error::invalid("tree extraction needs at least one proxy"));
    }
    let prox = |a: usize| &proxies[a * dim..(a + 1) * dim];
    let nearest = |x: &[f64], candidates: &mut dyn Iterator<Item = usize>| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for a in candidates {
            let d = geom.distance(x, prox(a));
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((a, d));
            }
        }
        best.map(|(a, _)| a)
    };
    let root = n + p;
    let mut parent = vec![None; n + p + 1];
    for (s, x) in samples.chunks(dim).enumerate() {
        parent[s] = nearest(x, &mut (0..p)).map(|a| n + a);
    }
    let norms: Vec<f64> = proxies
        .chunks(dim)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for a in 0..p {
        let mut smaller = (0..p).filter(|&b| norms[b] < norms[a]);
        parent[n + a] = Some(nearest(prox(a), &mut smaller).map_or(root, |b| n + b));
    }
    InducedTree::new(parent, n)
}

/// Class-by-class mean negative distance. `None` marks a singleton class's
/// undefined diagonal entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub classes: usize,
    pub entries: Vec<Option<f64>>,
}

impl AffinityMatrix {
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.entries[a * self.classes + b]
    }

    /// CSV with a header row and a leading class column; missing entries are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for b in 0..self.classes {
            write!(out, ",{b}").expect("string write");
        }
        out.push('\n');
        for a in 0..self.classes {
            write!(out, "{a}").expect("string write");
            for b in 0..self.classes {
                match self.get(a, b) {
                    Some(v) => write!(out, ",{v}").expect("string write"),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn affinity_matrix(dist: &DistanceMatrix, labels: &[usize]) -> Result<AffinityMatrix> {
    let n = dist.len();
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {n} items",
            labels.len()
        )));
    }
    let classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    if classes < 2 {
        return Err(Error::invalid("affinity matrix needs at least two classes"));
    }
    let mut sum = vec![0.0; classes * classes];
    let mut count = vec![0usize; classes * classes];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (labels[i].min(labels[j]), labels[i].max(labels[j]));
            sum[a * classes + b] -= dist.get(i, j);
            count[a * classes + b] += 1;
        }
    }
    // mirror the upper triangle so the matrix is exactly symmetric
    for a in 0..classes {
        for b in 0..a {
            sum[a * classes + b] = sum[b * classes + a];
            count[a * classes + b] = count[b * classes + a];
        }
    }
    let entries = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(AffinityMatrix { classes, entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyNeighbors {
    pub proxy: usize,
    pub norm: f64,
    /// `(sample index, distance)`, nearest first.
    pub neighbors: Vec<(usize, f64)>,
}

/// The `top_m` nearest samples of every proxy, proxies ordered by
/// decreasing norm.
pub fn proxy_neighbor_report(
    samples: &[f64],
    proxies: &[f64],
    dim: usize,
    geom: &HierGeometry,
    top_m: usize,
) -> Result<Vec<ProxyNeighbors>> {
    if dim == 0 || !samples.len().is_multiple_of(dim) || !proxies.len().is_multiple_of(dim) {
        return Err(Error::invalid(
            "sample/proxy buffers do not match the dimension",
        ));
    }
    let n = samples.len() / dim;
    if top_m > n {
        return Err(Error::invalid(format!(
            "top_m = {top_m} exceeds {n} samples"
        )));
    }
    let mut report: Vec<ProxyNeighbors> = proxies
        .chunks(dim)
        .enumerate()
        .map(|(a, rho)| {
            let mut d: Vec<(usize, f64)> = samples
                .chunks(dim)
                .enumerate()
                .map(|(s, x)| (s, geom.distance(x, rho)))
                .collect();
            d.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            d.truncate(top_m);
            ProxyNeighbors {
                proxy: a,
                norm: rho.iter().map(|v| v * v).sum::<f64>().sqrt(),
                neighbors: d,
            }
        })
        .collect();
    report.sort_by(|x, y| y.norm.total_cmp(&x.norm).then(x.proxy.cmp(&y.proxy)));
    Ok(report)
}
