//! Seeded finite-difference battery over the differentiable composites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::autodiff::{grad_check, GradCheckReport, Tape, Tensor, Var};
use crate::error::Result;
use crate::geometry::{self, diff};
use crate::hierloss::{
    assign_lcas, hier_loss_assigned, HierGeometry, HierInputs, LcaNoise, Reduction,
};
use crate::mining::{Triplet, TripletBatch, TripletKind};
use crate::mlloss::{
    multi_similarity_loss, proxy_anchor_loss, MultiSimilarityParams, ProxyAnchorParams,
};

pub const THRESHOLD: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
pub const INSTANCES: usize = 100;

const C: f64 = 0.1;
const R: f64 = 2.3;

#[derive(Debug, Clone, Serialize)]
pub struct CompositeResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CompositeResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < THRESHOLD && self.checked > 0
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let n = Normal::new(0.0, std).expect("std");
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| n.sample(rng)).collect(),
    )
    .expect("shape")
}

fn ball_points(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor {
    let raw = normal_matrix(rng, rows, dim, 0.8);
    let pts: Vec<f64> = raw
        .data()
        .chunks(dim)
        .flat_map(|r| geometry::exp_map_0_slice(&geometry::clip_slice(r, R), C))
        .collect();
    Tensor::matrix(rows, dim, pts).expect("shape")
}

/// Weighted sum of a matrix so every entry influences the scalar.
fn project(tape: &mut Tape, x: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(w.clone());
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn run<F>(name: &'static str, seed: u64, instances: usize, mut one: F) -> Result<CompositeResult>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<GradCheckReport>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = GradCheckReport::default();
    for _ in 0..instances {
        total = total.merge(one(&mut rng)?);
    }
    Ok(CompositeResult {
        name,
        instances,
        max_rel_error: total.max_rel_error,
        checked: total.checked,
        skipped: total.skipped,
    })
}

pub fn check_distance(seed: u64, instances: usize) -> Result<CompositeResult> {
    run("hyperbolic_distance", seed, instances, |rng| {
        let (rows, dim) = (rng.random_range(1..4), rng.random_range(2..6));
        let u = ball_points(rng, rows, dim);
        let v = ball_points(rng, rows, dim);
        grad_check(
            |t, x| {
                let d = diff::distance(t, x[0], x[1], C)?;
                Ok(t.sum(d))
            },
            &[u, v],
            STEP,
        )
    })
}

pub fn check_exp_map(seed: u64, instances: usize) -> Result<CompositeResult> {
    run("exp_map", seed, instances, |rng| {
        let (rows, dim) = (rng.random_range(1..4), rng.random_range(2..6));
        let v = normal_matrix(rng, rows, dim, 1.0);
        let w = normal_matrix(rng, rows, dim, 1.0);
        grad_check(
            |t, x| {
                let e = diff::exp_map_0(t, x[0], C)?;
                project(t, e, &w)
            },
            &[v],
            STEP,
        )
    })
}

pub fn check_clip_and_exp(seed: u64, instances: usize) -> Result<CompositeResult> {
    run("clip_and_exp", seed, instances, |rng| {
        let (rows, dim) = (rng.random_range(1..4), rng.random_range(2..6));
        // norms straddle the clip radius
        let v = normal_matrix(rng, rows, dim, 2.0);
        let w = normal_matrix(rng, rows, dim, 1.0);
        grad_check(
            |t, x| {
                let e = diff::clip_and_exp(t, x[0], R, C)?;
                project(t, e, &w)
            },
            &[v],
            STEP,
        )
    })
}

/// Six samples and four proxies, fixed triplets, LCAs chosen without noise
/// at the base point and then held fixed.
pub fn check_hier(seed: u64, instances: usize) -> Result<CompositeResult> {
    let geom = HierGeometry::hyperbolic(C, R);
    run("hier_loss", seed, instances, |rng| {
        let dim = rng.random_range(2..5);
        let samples = normal_matrix(rng, 6, dim, 1.0);
        let proxies = normal_matrix(rng, 4, dim, 0.5);
        let triplets: Vec<Triplet> = (0..3)
            .map(|_| {
                let mut idx = rand::seq::index::sample(rng, 6, 3).into_vec();
                idx.sort_unstable();
                Triplet {
                    i: idx[0],
                    j: idx[1],
                    k: idx[2],
                }
            })
            .collect();
        let batch = TripletBatch {
            kind: TripletKind::Samples,
            triplets,
        };
        let pv = geom.realize_rows(samples.data(), dim);
        let qv = geom.realize_rows(proxies.data(), dim);
        let lcas = assign_lcas(&batch, &pv, &qv, dim, &geom, LcaNoise::Off, rng)?;
        // delta large enough that most hinges are active
        let delta = 1.0;
        grad_check(
            |t, x| {
                let p = geom.realize(t, x[0])?;
                let q = geom.realize(t, x[1])?;
                let pv = t.value(p).data().to_vec();
                let qv = t.value(q).data().to_vec();
                let inputs = HierInputs {
                    points: p,
                    point_values: &pv,
                    proxies: q,
                    proxy_values: &qv,
                    dim,
                };
                hier_loss_assigned(t, inputs, &lcas, delta, &geom, Reduction::Mean)
            },
            &[samples, proxies],
            STEP,
        )
    })
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

pub fn check_proxy_anchor(seed: u64, instances: usize) -> Result<CompositeResult> {
    run("proxy_anchor", seed, instances, |rng| {
        let (b, dim, classes) = (
            rng.random_range(2..7),
            rng.random_range(2..6),
            rng.random_range(2..4),
        );
        let emb = normal_matrix(rng, b, dim, 1.0);
        let prox = normal_matrix(rng, classes, dim, 1.0);
        let y = labels(rng, b, classes);
        grad_check(
            |t, x| {
                let e = t.l2_normalize(x[0]);
                proxy_anchor_loss(t, e, &y, x[1], ProxyAnchorParams::default())
            },
            &[emb, prox],
            STEP,
        )
    })
}

pub fn check_multi_similarity(seed: u64, instances: usize) -> Result<CompositeResult> {
    run("multi_similarity", seed, instances, |rng| {
        let (b, dim) = (rng.random_range(3..8), rng.random_range(2..6));
        let emb = normal_matrix(rng, b, dim, 1.0);
        let y = labels(rng, b, 2);
        grad_check(
            |t, x| {
                let e = t.l2_normalize(x[0]);
                multi_similarity_loss(t, e, &y, MultiSimilarityParams::default())
            },
            &[emb],
            STEP,
        )
    })
}

/// Every composite, each over `instances` seeded random instances.
pub fn run_battery(seed: u64, instances: usize) -> Result<Vec<CompositeResult>> {
    Ok(vec![
        check_distance(seed, instances)?,
        check_exp_map(seed.wrapping_add(1), instances)?,
        check_clip_and_exp(seed.wrapping_add(2), instances)?,
        check_hier(seed.wrapping_add(3), instances)?,
        check_proxy_anchor(seed.wrapping_add(4), instances)?,
        check_multi_similarity(seed.wrapping_add(5), instances)?,
    ])
}
