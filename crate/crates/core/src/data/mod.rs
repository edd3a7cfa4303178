//! Datasets: the in-memory form, the binary feature file, class-disjoint
//! splits and synthetic hierarchies.

mod features;
mod synthetic;

pub use features::{
    decode_features, encode_features, read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synthetic::{
    format_tree, generate, parse_tree, read_tree, write_tree, ClassTree, GenerateSpec,
    Separability, SyntheticHierarchy, TreeNode,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Labeled feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub labels: Vec<u32>,
    pub dim: usize,
    pub features: Vec<f32>,
}

impl Dataset {
    pub fn new(ids: Vec<u64>, labels: Vec<u32>, dim: usize, features: Vec<f32>) -> Result<Self> {
        let ds = Dataset {
            ids,
            labels,
            dim,
            features,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .iter()
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Features widened to `f64`, row-major.
    pub fn features_f64(&self) -> Vec<f64> {
        self.features.iter().map(|&x| x as f64).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            out.extend(self.row(i).iter().map(|&x| x as f64));
        }
        out
    }

    /// Checks shapes and that labels cover `0..C` without gaps.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.ids.len() != n {
            return Err(Error::Validation(format!(
                "{} ids for {n} labels",
                self.ids.len()
            )));
        }
        if self.features.len() != n * self.dim {
            return Err(Error::Validation(format!(
                "{} feature values for {n} rows of dim {}",
                self.features.len(),
                self.dim
            )));
        }
        let classes = self.num_classes();
        let mut seen = vec![false; classes];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "labels are not contiguous: class {gap} is missing below {}",
                classes - 1
            )));
        }
        Ok(())
    }
}

/// Class-disjoint split. Each side is relabeled to `0..C'` in ascending
/// order of the original labels; sample ids are kept.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let classes = dataset.num_classes();
    if classes < 2 {
        return Err(Error::invalid(format!(
            "split needs at least 2 classes, found {classes}"
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "split fraction {fraction} outside [0, 1]"
        )));
    }
    let n_train = (fraction * classes as f64).round() as usize;
    if n_train == 0 || n_train == classes {
        return Err(Error::invalid(format!(
            "split fraction {fraction} leaves one side empty for {classes} classes"
        )));
    }
    let mut order: Vec<u32> = (0..classes as u32).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_classes = order[..n_train].to_vec();
    let mut test_classes = order[n_train..].to_vec();
    train_classes.sort_unstable();
    test_classes.sort_unstable();
    Ok((
        subset(dataset, &train_classes),
        subset(dataset, &test_classes),
    ))
}

fn subset(ds: &Dataset, classes: &[u32]) -> Dataset {
    let mut map = vec![None; ds.num_classes()];
    for (new, &old) in classes.iter().enumerate() {
        map[old as usize] = Some(new as u32);
    }
    let mut out = Dataset {
        ids: vec![],
        labels: vec![],
        dim: ds.dim,
        features: vec![],
    };
    for i in 0..ds.len() {
        if let Some(new) = map[ds.labels[i] as usize] {
            out.ids.push(ds.ids[i]);
            out.labels.push(new);
            out.features.extend_from_slice(ds.row(i));
        }
    }
    out
}
