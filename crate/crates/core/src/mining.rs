//! Exact nearest neighbors, reciprocal neighbors and feasible triplets.
//!
//! A triplet `(i, j, k)` is feasible when `j` is a reciprocal K-nearest
//! neighbor of `i` and `k` is not. Mining works on detached values; nothing
//! here touches the tape.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{self, HyperbolicPoint};

/// Dense symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Fills the matrix from a symmetric distance function on row indices.
    pub fn from_fn(n: usize, mut dist: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix { n, data }
    }

    /// Hyperbolic distances between rows of a row-major `n×dim` buffer.
    pub fn hyperbolic(rows: &[f64], dim: usize, c: f64) -> Self {
        let n = rows.len() / dim.max(1);
        Self::from_fn(n, |i, j| {
            geometry::distance(
                &rows[i * dim..(i + 1) * dim],
                &rows[j * dim..(j + 1) * dim],
                c,
            )
        })
    }

    pub fn of_points(points: &[HyperbolicPoint]) -> Result<Self> {
        if let Some(first) = points.first() {
            let c = first.curvature();
            if points
                .iter()
                .any(|p| p.curvature() != c || p.dim() != first.dim())
            {
                return Err(Error::invalid("points must share curvature and dimension"));
            }
            Ok(Self::from_fn(points.len(), |i, j| {
                geometry::distance(points[i].coords(), points[j].coords(), c.value())
            }))
        } else {
            Ok(DistanceMatrix { n: 0, data: vec![] })
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// For each item, its K nearest other items in ascending distance order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    k: usize,
    lists: Vec<Vec<(usize, f64)>>,
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.lists[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.lists[i].iter().any(|&(x, _)| x == j)
    }
}

/// Exact kNN from a distance matrix. Ties go to the smaller index.
pub fn knn_from_distances(dist: &DistanceMatrix, k: usize) -> Result<NeighborIndex> {
    let n = dist.len();
    if k >= n {
        return Err(Error::invalid(format!(
            "K = {k} must be smaller than the point count {n}"
        )));
    }
    let lists = (0..n)
        .map(|i| {
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dist.get(i, j)))
                .collect();
            let by = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < cand.len() {
                cand.select_nth_unstable_by(k, by);
                cand.truncate(k);
            }
            cand.sort_by(by);
            cand
        })
        .collect();
    Ok(NeighborIndex { k, lists })
}

/// Exact kNN under the hyperbolic distance.
pub fn knn(points: &[HyperbolicPoint], k: usize) -> Result<NeighborIndex> {
    knn_from_distances(&DistanceMatrix::of_points(points)?, k)
}

/// Reciprocal neighbor sets, each sorted ascending by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReciprocalSets(Vec<Vec<usize>>);

impl ReciprocalSets {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.0[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.0[i].binary_search(&j).is_ok()
    }
}

/// `R_K(x) = {x' ∈ N_K(x) : x ∈ N_K(x')}`.
pub fn reciprocal_knn(index: &NeighborIndex) -> ReciprocalSets {
    let sets = (0..index.len())
        .map(|i| {
            let mut r: Vec<usize> = index
                .neighbors(i)
                .iter()
                .map(|&(j, _)| j)
                .filter(|&j| index.contains(j, i))
                .collect();
            r.sort_unstable();
            r
        })
        .collect();
    ReciprocalSets(sets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripletKind {
    Samples,
    Proxies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub kind: TripletKind,
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn empty(kind: TripletKind) -> Self {
        TripletBatch {
            kind,
            triplets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Whether `(i, j, k)` satisfies the feasibility predicate.
pub fn is_feasible(recip: &ReciprocalSets, t: Triplet) -> bool {
    t.i != t.j && t.i != t.k && t.j != t.k && recip.contains(t.i, t.j) && !recip.contains(t.i, t.k)
}

/// Draws one feasible triplet per eligible anchor, at most `budget` in total.
///
/// An anchor is eligible when it has a reciprocal neighbor and at least one
/// item outside its reciprocal set. When there are more eligible anchors
/// than `budget`, a uniform subset is kept (in ascending order).
pub fn build_triplets<R: Rng + ?Sized>(
    recip: &ReciprocalSets,
    budget: usize,
    kind: TripletKind,
    rng: &mut R,
) -> TripletBatch {
    let n = recip.len();
    let eligible: Vec<usize> = (0..n)
        .filter(|&i| {
            let r = recip.get(i).len();
            r > 0 && n - 1 - r > 0
        })
        .collect();
    let anchors: Vec<usize> = if eligible.len() > budget {
        let mut picked: Vec<usize> = sample(rng, eligible.len(), budget)
            .into_iter()
            .map(|p| eligible[p])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        eligible
    };
    let mut triplets = Vec::with_capacity(anchors.len());
    for i in anchors {
        let r = recip.get(i);
        let j = r[rng.random_range(0..r.len())];
        let complement: Vec<usize> = (0..n)
            .filter(|&x| x != i && !recip.contains(i, x))
            .collect();
        let k = complement[rng.random_range(0..complement.len())];
        triplets.push(Triplet { i, j, k });
    }
    TripletBatch { kind, triplets }
}
