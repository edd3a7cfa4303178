//! Brute-force reference implementations and random instance builders
//! shared by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hier::eval::{self, InducedTree};
use hier::hierloss::HierGeometry;
use hier::mining::{self, DistanceMatrix, ReciprocalSets, Triplet, TripletKind};

pub const C: f64 = 0.1;
pub const INSTANCES: usize = 100;
pub const MAX_SIZE: usize = 64;

/// Outcome of one oracle comparison over many random instances.
#[derive(Debug)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub instances: usize,
    pub mismatches: Vec<String>,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `arcosh(1 + 2c‖u−v‖² / ((1−c‖u‖²)(1−c‖v‖²))) / √c`.
pub fn oracle_distance(u: &[f64], v: &[f64], c: f64) -> f64 {
    let sq = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let arg = 1.0 + 2.0 * c * diff / ((1.0 - c * sq(u)) * (1.0 - c * sq(v)));
    arg.max(1.0).acosh() / c.sqrt()
}

/// `n` ball points of dimension `dim` as a flat buffer.
pub fn random_ball_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    (0..n)
        .flat_map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            hier::geometry::exp_map_0_slice(&v, C)
        })
        .collect()
}

fn row(buf: &[f64], dim: usize, i: usize) -> &[f64] {
    &buf[i * dim..(i + 1) * dim]
}

/// Neighbor lists by a full sort of every row, nearest first.
pub fn oracle_knn(points: &[f64], dim: usize, k: usize) -> Vec<Vec<usize>> {
    let n = points.len() / dim;
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    (
                        oracle_distance(row(points, dim, i), row(points, dim, j), C),
                        j,
                    )
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Membership matrix form of the reciprocal sets.
pub fn oracle_reciprocal(lists: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = lists.len();
    let mut member = vec![vec![false; n]; n];
    for (i, l) in lists.iter().enumerate() {
        for &j in l {
            member[i][j] = true;
        }
    }
    (0..n)
        .map(|i| (0..n).map(|j| member[i][j] && member[j][i]).collect())
        .collect()
}

pub fn oracle_feasible(recip: &[Vec<bool>], t: Triplet) -> bool {
    let distinct = t.i != t.j && t.j != t.k && t.i != t.k;
    distinct && recip[t.i][t.j] && !recip[t.i][t.k]
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize, usize) {
    let n = rng.random_range(2..=MAX_SIZE);
    let dim = rng.random_range(2..=8);
    (random_ball_points(rng, n, dim), n, dim)
}

pub fn check_knn(seed: u64) -> OracleOutcome {
    let mut rng = rng(seed);
    let mut mismatches = Vec::new();
    for inst in 0..INSTANCES {
        let (pts, n, dim) = random_instance(&mut rng);
        let k = rng.random_range(1..n);
        let idx = mining::knn_from_distances(&DistanceMatrix::hyperbolic(&pts, dim, C), k).unwrap();
        let want = oracle_knn(&pts, dim, k);
        for (i, w) in want.iter().enumerate() {
            let got: Vec<usize> = idx.neighbors(i).iter().map(|&(j, _)| j).collect();
            if &got != w {
                mismatches.push(format!("instance {inst} row {i}: {got:?} vs {w:?}"));
            }
        }
    }
    OracleOutcome {
        name: "knn",
        instances: INSTANCES,
        mismatches,
    }
}

fn reciprocal_of(pts: &[f64], dim: usize, k: usize) -> ReciprocalSets {
    mining::reciprocal_knn(
        &mining::knn_from_distances(&DistanceMatrix::hyperbolic(pts, dim, C), k).unwrap(),
    )
}

pub fn check_reciprocal(seed: u64) -> OracleOutcome {
    let mut rng = rng(seed);
    let mut mismatches = Vec::new();
    for inst in 0..INSTANCES {
        let (pts, n, dim) = random_instance(&mut rng);
        let k = rng.random_range(1..n);
        let got = reciprocal_of(&pts, dim, k);
        let want = oracle_reciprocal(&oracle_knn(&pts, dim, k));
        for i in 0..n {
            let w: Vec<usize> = (0..n).filter(|&j| want[i][j]).collect();
            if got.get(i) != w.as_slice() {
                mismatches.push(format!(
                    "instance {inst} row {i}: {:?} vs {w:?}",
                    got.get(i)
                ));
            }
        }
    }
    OracleOutcome {
        name: "reciprocal_knn",
        instances: INSTANCES,
        mismatches,
    }
}

/// Every built triplet satisfies the brute-force predicate, anchors are the
/// eligible ones (or a budget-sized subset of them), and `is_feasible`
/// agrees with the predicate on every triple of small instances.
pub fn check_triplets(seed: u64) -> OracleOutcome {
    let mut rng = rng(seed);
    let mut mismatches = Vec::new();
    for inst in 0..INSTANCES {
        let (pts, n, dim) = random_instance(&mut rng);
        let k = rng.random_range(1..n);
        let recip = reciprocal_of(&pts, dim, k);
        let want = oracle_reciprocal(&oracle_knn(&pts, dim, k));
        let eligible: Vec<usize> = (0..n)
            .filter(|&i| {
                let r = want[i].iter().filter(|&&b| b).count();
                r > 0 && r < n - 1
            })
            .collect();
        let budget = rng.random_range(1..=n);
        let batch = mining::build_triplets(&recip, budget, TripletKind::Samples, &mut rng);
        let anchors: Vec<usize> = batch.triplets.iter().map(|t| t.i).collect();
        if anchors.len() != eligible.len().min(budget) {
            mismatches.push(format!(
                "instance {inst}: {} anchors, {} eligible, budget {budget}",
                anchors.len(),
                eligible.len()
            ));
        }
        if anchors.windows(2).any(|w| w[0] >= w[1]) || anchors.iter().any(|a| !eligible.contains(a))
        {
            mismatches.push(format!(
                "instance {inst}: anchors {anchors:?} not a sorted subset of {eligible:?}"
            ));
        }
        for &t in &batch.triplets {
            if !oracle_feasible(&want, t) {
                mismatches.push(format!("instance {inst}: infeasible {t:?}"));
            }
        }
        let probes: Vec<Triplet> = if n <= 12 {
            (0..n)
                .flat_map(|i| (0..n).flat_map(move |j| (0..n).map(move |k| Triplet { i, j, k })))
                .collect()
        } else {
            (0..2000)
                .map(|_| Triplet {
                    i: rng.random_range(0..n),
                    j: rng.random_range(0..n),
                    k: rng.random_range(0..n),
                })
                .collect()
        };
        for t in probes {
            if mining::is_feasible(&recip, t) != oracle_feasible(&want, t) {
                mismatches.push(format!("instance {inst}: predicate differs on {t:?}"));
            }
        }
    }
    OracleOutcome {
        name: "build_triplets",
        instances: INSTANCES,
        mismatches,
    }
}

/// Rooted binary tree over labeled leaves.
#[derive(Debug, Clone)]
pub enum Bin {
    Leaf(usize),
    Join(Box<Bin>, Box<Bin>),
}

/// Every rooted binary tree whose leaves are `set`.
pub fn all_binary_trees(set: &[usize]) -> Vec<Bin> {
    if set.len() == 1 {
        return vec![Bin::Leaf(set[0])];
    }
    let mut out = Vec::new();
    let rest = &set[1..];
    // the first leaf always goes left, so each unordered split is seen once
    for mask in 0..(1u32 << rest.len()) - 1 {
        let mut left = vec![set[0]];
        let mut right = Vec::new();
        for (b, &x) in rest.iter().enumerate() {
            if mask >> b & 1 == 1 {
                left.push(x);
            } else {
                right.push(x);
            }
        }
        for l in all_binary_trees(&left) {
            for r in all_binary_trees(&right) {
                out.push(Bin::Join(Box::new(l.clone()), Box::new(r)));
            }
        }
    }
    out
}

/// Leaf sets of every subtree, as bit masks.
fn clusters(t: &Bin, out: &mut Vec<u64>) -> u64 {
    let m = match t {
        Bin::Leaf(i) => 1u64 << i,
        Bin::Join(a, b) => clusters(a, out) | clusters(b, out),
    };
    out.push(m);
    m
}

/// Cost as the sum over pairs of `w_ij` times the size of the smallest
/// cluster holding both.
pub fn oracle_dasgupta(t: &Bin, n: usize, w: &[Vec<f64>]) -> f64 {
    let mut cl = Vec::new();
    clusters(t, &mut cl);
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let both = (1u64 << i) | (1u64 << j);
            let size = cl
                .iter()
                .filter(|&&m| m & both == both)
                .map(|m| m.count_ones())
                .min()
                .unwrap();
            total += w[i][j] * size as f64;
        }
    }
    total
}

/// Parent array with leaves first and internal nodes after them.
pub fn to_induced(t: &Bin, n: usize) -> InducedTree {
    fn walk(t: &Bin, parent: &mut Vec<Option<usize>>) -> usize {
        match t {
            Bin::Leaf(i) => *i,
            Bin::Join(a, b) => {
                let (x, y) = (walk(a, parent), walk(b, parent));
                parent.push(None);
                let me = parent.len() - 1;
                parent[x] = Some(me);
                parent[y] = Some(me);
                me
            }
        }
    }
    let mut parent = vec![None; n];
    walk(t, &mut parent);
    InducedTree::new(parent, n).unwrap()
}

pub fn check_dasgupta(seed: u64) -> OracleOutcome {
    let mut rng = rng(seed);
    let mut mismatches = Vec::new();
    for inst in 0..INSTANCES {
        let n = rng.random_range(2..=6);
        let mut w = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                // small integers keep every sum exact
                let x = rng.random_range(0..=4) as f64;
                w[i][j] = x;
                w[j][i] = x;
            }
        }
        let leaves: Vec<usize> = (0..n).collect();
        for t in all_binary_trees(&leaves) {
            let got = eval::dasgupta_cost(&to_induced(&t, n), |i, j| w[i][j]).unwrap();
            let want = oracle_dasgupta(&t, n, &w);
            if got != want {
                mismatches.push(format!("instance {inst}: {got} vs {want} for {t:?}"));
            }
        }
    }
    OracleOutcome {
        name: "dasgupta_cost",
        instances: INSTANCES,
        mismatches,
    }
}

/// Parents by brute-force argmin, node layout as in `extract_tree`.
pub fn oracle_extract(samples: &[f64], proxies: &[f64], dim: usize) -> Vec<Option<usize>> {
    let n = samples.len() / dim;
    let p = proxies.len() / dim;
    let argmin = |x: &[f64], cands: &[usize]| -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for &a in cands {
            let d = oracle_distance(x, row(proxies, dim, a), C);
            match best {
                Some((bd, _)) if bd <= d => {}
                _ => best = Some((d, a)),
            }
        }
        best.map(|(_, a)| a)
    };
    let all: Vec<usize> = (0..p).collect();
    let norm = |a: usize| row(proxies, dim, a).iter().map(|v| v * v).sum::<f64>();
    let mut parent: Vec<Option<usize>> = (0..n)
        .map(|s| argmin(row(samples, dim, s), &all).map(|a| n + a))
        .collect();
    for a in 0..p {
        let smaller: Vec<usize> = (0..p).filter(|&b| norm(b) < norm(a)).collect();
        parent.push(Some(
            argmin(row(proxies, dim, a), &smaller).map_or(n + p, |b| n + b),
        ));
    }
    parent.push(None);
    parent
}

pub fn check_extract(seed: u64) -> OracleOutcome {
    let mut rng = rng(seed);
    let geom = HierGeometry::hyperbolic(C, 2.3);
    let mut mismatches = Vec::new();
    for inst in 0..INSTANCES {
        let n = rng.random_range(1..=MAX_SIZE);
        let p = rng.random_range(1..=16);
        let dim = rng.random_range(2..=8);
        let samples = random_ball_points(&mut rng, n, dim);
        let proxies = random_ball_points(&mut rng, p, dim);
        let tree = eval::extract_tree(&samples, &proxies, dim, &geom).unwrap();
        let want = oracle_extract(&samples, &proxies, dim);
        if tree.parents() != want.as_slice() {
            mismatches.push(format!("instance {inst}: parents differ"));
        }
    }
    OracleOutcome {
        name: "extract_tree",
        instances: INSTANCES,
        mismatches,
    }
}

/// Recall@k by ranking every other item with the oracle distance.
pub fn oracle_recall(points: &[f64], dim: usize, labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut hits = 0;
    for q in 0..n {
        let mut ranked: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| {
                (
                    oracle_distance(row(points, dim, q), row(points, dim, j), C),
                    j,
                )
            })
            .collect();
        ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if ranked.iter().take(k).any(|&(_, j)| labels[j] == labels[q]) {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

pub fn check_recall(seed: u64) -> OracleOutcome {
    let mut rng = rng(seed);
    let mut mismatches = Vec::new();
    for inst in 0..INSTANCES {
        let (pts, n, dim) = random_instance(&mut rng);
        let classes = rng.random_range(1..=n.min(6));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let ks: Vec<usize> = (1..n).filter(|k| k.is_power_of_two()).collect();
        let got =
            eval::recall_at_k(&DistanceMatrix::hyperbolic(&pts, dim, C), &labels, &ks).unwrap();
        for (&k, g) in ks.iter().zip(got) {
            let want = oracle_recall(&pts, dim, &labels, k);
            if g != want {
                mismatches.push(format!("instance {inst} k {k}: {g} vs {want}"));
            }
        }
    }
    OracleOutcome {
        name: "recall_at_k",
        instances: INSTANCES,
        mismatches,
    }
}

pub fn all_oracles(seed: u64) -> Vec<OracleOutcome> {
    vec![
        check_knn(seed),
        check_reciprocal(seed + 1),
        check_triplets(seed + 2),
        check_dasgupta(seed + 3),
        check_extract(seed + 4),
        check_recall(seed + 5),
    ]
}
