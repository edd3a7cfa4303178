//! Synthetic labeled hierarchies with known ground-truth similarity.
//!
//! A complete `branching`-ary tree of the given depth is laid out level by
//! level (root is node 0, leaves come last). Class centers diffuse down the
//! tree: each child's center is its parent's plus an isotropic Gaussian step
//! whose scale halves at every level. Samples scatter around their leaf
//! center with standard deviation `cluster_spread`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Per-coordinate standard deviation of the first diffusion step.
pub const ROOT_STEP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub depth: usize,
    pub branching: usize,
    /// Must equal `branching^depth`.
    pub classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl GenerateSpec {
    /// Complete tree with every leaf used as a class.
    pub fn complete(depth: usize, branching: usize) -> Self {
        GenerateSpec {
            depth,
            branching,
            classes: branching.saturating_pow(depth as u32),
            samples_per_class: 200,
            feature_dim: 32,
            cluster_spread: 0.3,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.branching < 2 {
            return Err(Error::invalid(format!(
                "branching must be >= 2, got {}",
                self.branching
            )));
        }
        if self.depth < 2 {
            return Err(Error::invalid(format!(
                "depth must be >= 2, got {}",
                self.depth
            )));
        }
        let leaves = self
            .branching
            .checked_pow(self.depth as u32)
            .filter(|&l| l <= 1 << 20)
            .ok_or_else(|| Error::invalid("tree too large"))?;
        if self.classes != leaves {
            return Err(Error::invalid(format!(
                "classes ({}) must equal branching^depth ({leaves})",
                self.classes
            )));
        }
        if self.samples_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::invalid(
                "samples_per_class and feature_dim must be positive",
            ));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread >= 0.0) {
            return Err(Error::invalid("cluster_spread must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub is_leaf: bool,
}

/// A rooted tree whose leaves are the classes, in ascending node-id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTree {
    nodes: Vec<TreeNode>,
    leaf_nodes: Vec<usize>,
}

impl ClassTree {
    pub fn complete(depth: usize, branching: usize) -> Self {
        let mut nodes = vec![TreeNode {
            id: 0,
            parent: None,
            depth: 0,
            is_leaf: depth == 0,
        }];
        let mut frontier = vec![0];
        for d in 1..=depth {
            let mut next = Vec::with_capacity(frontier.len() * branching);
            for &p in &frontier {
                for _ in 0..branching {
                    let id = nodes.len();
                    nodes.push(TreeNode {
                        id,
                        parent: Some(p),
                        depth: d,
                        is_leaf: d == depth,
                    });
                    next.push(id);
                }
            }
            frontier = next;
        }
        let leaf_nodes = nodes.iter().filter(|n| n.is_leaf).map(|n| n.id).collect();
        ClassTree { nodes, leaf_nodes }
    }

    /// Validates a node list: ids are `0..n`, one root, parents exist,
    /// depths are consistent and leaves have no children.
    pub fn from_nodes(mut nodes: Vec<TreeNode>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        if nodes.iter().enumerate().any(|(i, n)| n.id != i) {
            return Err(Error::Validation(
                "tree node ids must be 0..n without gaps".into(),
            ));
        }
        let roots = nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::Validation(format!(
                "tree must have exactly one root, found {roots}"
            )));
        }
        let mut has_child = vec![false; nodes.len()];
        for n in &nodes {
            match n.parent {
                None if n.depth != 0 => {
                    return Err(Error::Validation("root must have depth 0".into()));
                }
                Some(p) => {
                    let parent = nodes.get(p).ok_or_else(|| {
                        Error::Validation(format!("node {} has unknown parent {p}", n.id))
                    })?;
                    if parent.depth + 1 != n.depth {
                        return Err(Error::Validation(format!(
                            "node {} has inconsistent depth",
                            n.id
                        )));
                    }
                    has_child[p] = true;
                }
                None => {}
            }
        }
        for n in &nodes {
            if n.is_leaf == has_child[n.id] {
                return Err(Error::Validation(format!(
                    "node {} leaf flag disagrees with children",
                    n.id
                )));
            }
        }
        let leaf_nodes = nodes.iter().filter(|n| n.is_leaf).map(|n| n.id).collect();
        Ok(ClassTree { nodes, leaf_nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn num_classes(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn num_internal(&self) -> usize {
        self.nodes.len() - self.leaf_nodes.len()
    }

    pub fn leaf_node(&self, class: usize) -> usize {
        self.leaf_nodes[class]
    }

    /// Number of edges on the path between two class leaves.
    pub fn class_distance(&self, a: usize, b: usize) -> usize {
        let (mut x, mut y) = (self.leaf_nodes[a], self.leaf_nodes[b]);
        let mut steps = 0;
        while x != y {
            let (dx, dy) = (self.nodes[x].depth, self.nodes[y].depth);
            if dx >= dy {
                x = self.nodes[x].parent.expect("non-root");
                steps += 1;
            }
            if dy >= dx && x != y || dy > dx {
                y = self.nodes[y].parent.expect("non-root");
                steps += 1;
            }
        }
        steps
    }

    /// Ground-truth similarity `2^(−tree distance)`.
    pub fn class_weight(&self, a: usize, b: usize) -> f64 {
        0.5f64.powi(self.class_distance(a, b) as i32)
    }

    /// Depth of the lowest common ancestor of two classes.
    pub fn lca_depth(&self, a: usize, b: usize) -> usize {
        let leaf_depth = self.nodes[self.leaf_nodes[a]].depth;
        leaf_depth - self.class_distance(a, b) / 2
    }
}

/// Result of the leaf-level separability check done at generation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    /// Half of the smallest distance between two leaf centers.
    pub min_center_half_distance: f64,
    pub spread_below_half_distance: bool,
    /// Fraction of samples whose nearest leaf center is their own.
    pub nearest_center_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHierarchy {
    pub spec: GenerateSpec,
    pub tree: ClassTree,
    /// Leaf centers, `classes × feature_dim`, row-major.
    pub centers: Vec<f64>,
    pub dataset: Dataset,
    pub separability: Separability,
}

impl SyntheticHierarchy {
    /// `w_ij` between two samples by dataset index.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.tree.class_weight(
            self.dataset.labels[i] as usize,
            self.dataset.labels[j] as usize,
        )
    }

    /// Class-level weight matrix, `classes × classes`.
    pub fn class_weights(&self) -> Vec<f64> {
        let c = self.tree.num_classes();
        let mut out = vec![0.0; c * c];
        for a in 0..c {
            for b in 0..c {
                out[a * c + b] = self.tree.class_weight(a, b);
            }
        }
        out
    }
}

pub fn generate(spec: GenerateSpec) -> Result<SyntheticHierarchy> {
    spec.validate()?;
    let tree = ClassTree::complete(spec.depth, spec.branching);
    let dim = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut node_centers = vec![0.0; tree.nodes.len() * dim];
    for node in &tree.nodes[1..] {
        let parent = node.parent.expect("non-root");
        let step = ROOT_STEP / f64::powi(2.0, node.depth as i32 - 1);
        let normal = Normal::new(0.0, step).expect("std");
        for k in 0..dim {
            node_centers[node.id * dim + k] =
                node_centers[parent * dim + k] + normal.sample(&mut rng);
        }
    }
    let centers: Vec<f64> = tree
        .leaf_nodes
        .iter()
        .flat_map(|&l| node_centers[l * dim..(l + 1) * dim].to_vec())
        .collect();

    let noise = Normal::new(0.0, spec.cluster_spread.max(f64::MIN_POSITIVE)).expect("std");
    let n = spec.classes * spec.samples_per_class;
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * dim);
    for class in 0..spec.classes {
        for _ in 0..spec.samples_per_class {
            labels.push(class as u32);
            for k in 0..dim {
                let x = centers[class * dim + k]
                    + if spec.cluster_spread > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                features.push(x as f32);
            }
        }
    }
    let dataset = Dataset::new((0..n as u64).collect(), labels, dim, features)?;
    let separability = check_separability(&centers, &dataset, spec.classes, spec.cluster_spread);
    Ok(SyntheticHierarchy {
        spec,
        tree,
        centers,
        dataset,
        separability,
    })
}

fn check_separability(centers: &[f64], ds: &Dataset, classes: usize, spread: f64) -> Separability {
    let dim = ds.dim;
    let center = |c: usize| &centers[c * dim..(c + 1) * dim];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut min_d = f64::INFINITY;
    for a in 0..classes {
        for b in (a + 1)..classes {
            min_d = min_d.min(sq(center(a), center(b)).sqrt());
        }
    }
    let half = min_d / 2.0;
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let x: Vec<f64> = ds.row(i).iter().map(|&v| v as f64).collect();
        let nearest = (0..classes)
            .min_by(|&a, &b| sq(&x, center(a)).total_cmp(&sq(&x, center(b))))
            .expect("classes");
        correct += (nearest == ds.labels[i] as usize) as usize;
    }
    Separability {
        min_center_half_distance: half,
        spread_below_half_distance: spread < half,
        nearest_center_accuracy: correct as f64 / ds.len().max(1) as f64,
    }
}

/// Text sidecar, one line per node: `node_id parent_id depth is_leaf`
/// (`parent_id` is `-1` for the root, `is_leaf` is `0` or `1`).
pub fn format_tree(tree: &ClassTree) -> String {
    let mut out = String::new();
    for n in &tree.nodes {
        let parent = n.parent.map_or(-1, |p| p as i64);
        writeln!(out, "{} {} {} {}", n.id, parent, n.depth, n.is_leaf as u8).expect("string write");
    }
    out
}

pub fn parse_tree(text: &str) -> Result<ClassTree> {
    let mut nodes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || {
            Error::Parse(format!(
                "tree line {}: expected 4 integer fields",
                lineno + 1
            ))
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        let id: usize = fields[0].parse().map_err(|_| bad())?;
        let parent: i64 = fields[1].parse().map_err(|_| bad())?;
        let depth: usize = fields[2].parse().map_err(|_| bad())?;
        let is_leaf = match fields[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        let parent = match parent {
            -1 => None,
            p if p >= 0 => Some(p as usize),
            _ => return Err(bad()),
        };
        nodes.push(TreeNode {
            id,
            parent,
            depth,
            is_leaf,
        });
    }
    ClassTree::from_nodes(nodes)
}

pub fn write_tree(tree: &ClassTree, path: &Path) -> Result<()> {
    fs::write(path, format_tree(tree)).map_err(|e| Error::io(path, e))
}

pub fn read_tree(path: &Path) -> Result<ClassTree> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tree(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenerateSpec {
        GenerateSpec {
            samples_per_class: 5,
            feature_dim: 4,
            ..GenerateSpec::complete(3, 2)
        }
    }

    #[test]
    fn depth_one_rejected() {
        let spec = GenerateSpec {
            samples_per_class: 2,
            ..GenerateSpec::complete(1, 2)
        };
        assert!(generate(spec).is_err());
        let spec = GenerateSpec {
            branching: 1,
            ..small()
        };
        assert!(generate(spec).is_err());
        let spec = GenerateSpec {
            classes: 7,
            ..small()
        };
        assert!(generate(spec).is_err());
    }

    #[test]
    fn binary_depth_three_shape() {
        let h = generate(small()).unwrap();
        assert_eq!(h.tree.num_classes(), 8);
        assert_eq!(h.tree.num_internal(), 7);
        assert_eq!(h.dataset.len(), 40);
        assert_eq!(h.dataset.num_classes(), 8);
    }

    #[test]
    fn generation_is_bitwise_reproducible() {
        let a = generate(small()).unwrap();
        let b = generate(small()).unwrap();
        assert_eq!(a, b);
        let c = generate(GenerateSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.dataset.features, c.dataset.features);
    }

    #[test]
    fn weights_follow_tree_distance() {
        let t = ClassTree::complete(3, 2);
        assert_eq!(t.class_distance(0, 0), 0);
        assert_eq!(t.class_distance(0, 1), 2);
        assert_eq!(t.class_distance(0, 2), 4);
        assert_eq!(t.class_distance(0, 7), 6);
        assert_eq!(t.class_weight(0, 1), 0.25);
        assert_eq!(t.lca_depth(0, 1), 2);
        assert_eq!(t.lca_depth(0, 7), 0);
    }

    #[test]
    fn tree_text_round_trip() {
        let t = ClassTree::complete(2, 3);
        let text = format_tree(&t);
        assert!(text.starts_with("0 -1 0 0\n"));
        assert_eq!(parse_tree(&text).unwrap(), t);
        assert!(parse_tree("0 -1 0 0\n1 0 1 1\n2 -1 0 1\n").is_err());
        assert!(parse_tree("0 -1 0 x\n").is_err());
    }

    #[test]
    fn tight_clusters_are_separable() {
        let h = generate(GenerateSpec {
            cluster_spread: 0.05,
            ..small()
        })
        .unwrap();
        assert!(h.separability.spread_below_half_distance);
        assert_eq!(h.separability.nearest_center_accuracy, 1.0);
    }
}
