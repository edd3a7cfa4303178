//! Hierarchical proxies and the hierarchical triplet loss.
//!
//! For a feasible triplet `(i, j, k)` the pair LCA `ρ_ij` is the proxy that
//! maximizes `π_ij(ρ) = exp(−max{d(x_i, ρ), d(x_j, ρ)})` under Gumbel
//! perturbation, and the triplet LCA `ρ_ijk` is chosen the same way from the
//! remaining proxies. The loss pulls `x_i`, `x_j` toward `ρ_ij` and `x_k`
//! toward `ρ_ijk`, each against the other proxy with margin `δ`.
//!
//! LCA selection is a hard argmax on detached values; gradients reach the
//! samples and the two selected proxies only through the six distances.

use rand::Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, diff, HyperbolicPoint};
use crate::mining::{Triplet, TripletBatch};

/// Initial standard deviation of proxy pre-images.
pub const PROXY_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierSpace {
    Hyperbolic,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDomain {
    /// `argmax(π + g)`.
    Value,
    /// `argmax(log π + g)`, the textbook Gumbel-max form.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcaNoise {
    Off,
    Gumbel(NoiseDomain),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Sum,
}

/// How raw vectors become points and how points are compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierGeometry {
    pub space: HierSpace,
    pub curvature: f64,
    pub clip_radius: f64,
}

impl HierGeometry {
    pub fn hyperbolic(curvature: f64, clip_radius: f64) -> Self {
        HierGeometry {
            space: HierSpace::Hyperbolic,
            curvature,
            clip_radius,
        }
    }

    /// Maps a raw row to its point (clip + exp map, or unit normalization).
    pub fn realize_row(&self, raw: &[f64]) -> Vec<f64> {
        match self.space {
            HierSpace::Hyperbolic => geometry::exp_map_0_slice(
                &geometry::clip_slice(raw, self.clip_radius),
                self.curvature,
            ),
            HierSpace::Spherical => geometry::l2_normalize_slice(raw),
        }
    }

    pub fn realize_rows(&self, raw: &[f64], dim: usize) -> Vec<f64> {
        raw.chunks(dim).flat_map(|r| self.realize_row(r)).collect()
    }

    pub fn realize(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        match self.space {
            HierSpace::Hyperbolic => {
                diff::clip_and_exp(tape, raw, self.clip_radius, self.curvature)
            }
            HierSpace::Spherical => Ok(tape.l2_normalize(raw)),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.space {
            HierSpace::Hyperbolic => geometry::distance(a, b, self.curvature),
            HierSpace::Spherical => geometry::chord_distance(a, b),
        }
    }

    pub fn distance_rows(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        match self.space {
            HierSpace::Hyperbolic => diff::distance(tape, a, b, self.curvature),
            HierSpace::Spherical => diff::chord_distance(tape, a, b),
        }
    }
}

/// Learnable Euclidean pre-images of the hierarchical proxies, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct HierProxySet {
    pre_images: Tensor,
}

impl HierProxySet {
    pub fn new(pre_images: Tensor) -> Result<Self> {
        if pre_images.rows() < 2 {
            return Err(Error::invalid(
                "at least two hierarchical proxies are required",
            ));
        }
        Ok(HierProxySet { pre_images })
    }

    /// I.i.d. normal pre-images with standard deviation [`PROXY_INIT_STD`].
    pub fn init<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, PROXY_INIT_STD).expect("valid std");
        let data = (0..count * dim).map(|_| normal.sample(rng)).collect();
        Self::new(Tensor::matrix(count, dim, data)?)
    }

    pub fn count(&self) -> usize {
        self.pre_images.rows()
    }

    pub fn dim(&self) -> usize {
        self.pre_images.cols()
    }

    pub fn pre_images(&self) -> &Tensor {
        &self.pre_images
    }

    pub fn pre_images_mut(&mut self) -> &mut Tensor {
        &mut self.pre_images
    }

    /// Realized points, row-major.
    pub fn realized(&self, geom: &HierGeometry) -> Vec<f64> {
        geom.realize_rows(self.pre_images.data(), self.dim())
    }
}

/// The proxies selected for one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LcaAssignment {
    pub triplet: Triplet,
    pub rho_pair: usize,
    pub rho_triple: usize,
}

/// `exp(−max_m d(x_m, ρ))` for every proxy row.
pub fn lca_logits(
    members: &[&[f64]],
    proxies: &[f64],
    dim: usize,
    geom: &HierGeometry,
) -> Vec<f64> {
    proxies
        .chunks(dim)
        .map(|rho| {
            let worst = members
                .iter()
                .map(|x| geom.distance(x, rho))
                .fold(f64::NEG_INFINITY, f64::max);
            (-worst).exp()
        })
        .collect()
}

/// `π_ij(ρ)` for hyperbolic points.
pub fn lca_logits_pair(
    x_i: &HyperbolicPoint,
    x_j: &HyperbolicPoint,
    proxies: &[HyperbolicPoint],
) -> Result<Vec<f64>> {
    typed_logits(&[x_i, x_j], proxies)
}

/// `π_ijk(ρ)` for hyperbolic points.
pub fn lca_logits_triple(
    x_i: &HyperbolicPoint,
    x_j: &HyperbolicPoint,
    x_k: &HyperbolicPoint,
    proxies: &[HyperbolicPoint],
) -> Result<Vec<f64>> {
    typed_logits(&[x_i, x_j, x_k], proxies)
}

fn typed_logits(members: &[&HyperbolicPoint], proxies: &[HyperbolicPoint]) -> Result<Vec<f64>> {
    proxies
        .iter()
        .map(|rho| {
            let mut worst = f64::NEG_INFINITY;
            for x in members {
                worst = worst.max(geometry::hyp_distance(x, rho)?);
            }
            Ok((-worst).exp())
        })
        .collect()
}

/// Gumbel-max selection over the non-excluded proxies.
///
/// One Gumbel(0, 1) variate is drawn for every proxy (excluded ones
/// included) so the stream advances by a fixed amount per call. Ties go to
/// the smaller index.
pub fn sample_lca<R: Rng + ?Sized>(
    logits: &[f64],
    excluded: Option<usize>,
    noise: LcaNoise,
    rng: &mut R,
) -> Result<usize> {
    let available = logits.len() - usize::from(excluded.is_some_and(|e| e < logits.len()));
    if available == 0 {
        return Err(Error::invalid("no proxy left to sample an LCA from"));
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let mut best: Option<(usize, f64)> = None;
    for (idx, &pi) in logits.iter().enumerate() {
        let score = match noise {
            LcaNoise::Off => pi,
            LcaNoise::Gumbel(NoiseDomain::Value) => pi + gumbel.sample(rng),
            LcaNoise::Gumbel(NoiseDomain::Log) => pi.ln() + gumbel.sample(rng),
        };
        if Some(idx) == excluded {
            continue;
        }
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((idx, score));
        }
    }
    Ok(best.expect("at least one candidate").0)
}

/// Per-row hierarchical triplet loss, `T×1`.
///
/// Each argument holds `T` rows; row `t` of every input belongs to triplet `t`.
#[allow(clippy::too_many_arguments)]
pub fn hier_loss_rows(
    tape: &mut Tape,
    x_i: Var,
    x_j: Var,
    x_k: Var,
    rho_pair: Var,
    rho_triple: Var,
    delta: f64,
    geom: &HierGeometry,
) -> Result<Var> {
    let hinge = |tape: &mut Tape, x: Var, near: Var, far: Var| -> Result<Var> {
        let dn = geom.distance_rows(tape, x, near)?;
        let df = geom.distance_rows(tape, x, far)?;
        let diff = tape.sub(dn, df)?;
        let shifted = tape.shift(diff, delta);
        Ok(tape.relu(shifted))
    };
    let a = hinge(tape, x_i, rho_pair, rho_triple)?;
    let b = hinge(tape, x_j, rho_pair, rho_triple)?;
    let c = hinge(tape, x_k, rho_triple, rho_pair)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// Scalar loss of a single triplet given its two LCAs (each a `1×n` row).
#[allow(clippy::too_many_arguments)]
pub fn hier_loss_triplet(
    tape: &mut Tape,
    x_i: Var,
    x_j: Var,
    x_k: Var,
    rho_pair: Var,
    rho_triple: Var,
    delta: f64,
    geom: &HierGeometry,
) -> Result<Var> {
    let rows = hier_loss_rows(tape, x_i, x_j, x_k, rho_pair, rho_triple, delta, geom)?;
    Ok(tape.sum(rows))
}

/// Items and proxies as seen by [`hier_loss_batch`]: tape handles for the
/// realized rows plus their detached values for LCA selection.
#[derive(Debug, Clone, Copy)]
pub struct HierInputs<'a> {
    pub points: Var,
    pub point_values: &'a [f64],
    pub proxies: Var,
    pub proxy_values: &'a [f64],
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct HierBatchOutput {
    pub loss: Var,
    pub assignments: Vec<LcaAssignment>,
}

/// Samples both LCAs for every triplet of `batch`.
pub fn assign_lcas<R: Rng + ?Sized>(
    batch: &TripletBatch,
    point_values: &[f64],
    proxy_values: &[f64],
    dim: usize,
    geom: &HierGeometry,
    noise: LcaNoise,
    rng: &mut R,
) -> Result<Vec<LcaAssignment>> {
    let row = |i: usize| -> Result<&[f64]> {
        point_values
            .get(i * dim..(i + 1) * dim)
            .ok_or_else(|| Error::invalid(format!("triplet index {i} has no point")))
    };
    batch
        .triplets
        .iter()
        .map(|&t| {
            let (xi, xj, xk) = (row(t.i)?, row(t.j)?, row(t.k)?);
            let pair = lca_logits(&[xi, xj], proxy_values, dim, geom);
            let rho_pair = sample_lca(&pair, None, noise, rng)?;
            let triple = lca_logits(&[xi, xj, xk], proxy_values, dim, geom);
            let rho_triple = sample_lca(&triple, Some(rho_pair), noise, rng)?;
            Ok(LcaAssignment {
                triplet: t,
                rho_pair,
                rho_triple,
            })
        })
        .collect()
}

/// Reduced loss for already-assigned triplets; zero for an empty batch.
pub fn hier_loss_assigned(
    tape: &mut Tape,
    inputs: HierInputs<'_>,
    assignments: &[LcaAssignment],
    delta: f64,
    geom: &HierGeometry,
    reduction: Reduction,
) -> Result<Var> {
    if assignments.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    let pick = |f: fn(&LcaAssignment) -> usize| assignments.iter().map(f).collect::<Vec<_>>();
    let xi = tape.select_rows(inputs.points, &pick(|a| a.triplet.i))?;
    let xj = tape.select_rows(inputs.points, &pick(|a| a.triplet.j))?;
    let xk = tape.select_rows(inputs.points, &pick(|a| a.triplet.k))?;
    let rp = tape.select_rows(inputs.proxies, &pick(|a| a.rho_pair))?;
    let rt = tape.select_rows(inputs.proxies, &pick(|a| a.rho_triple))?;
    let rows = hier_loss_rows(tape, xi, xj, xk, rp, rt, delta, geom)?;
    match reduction {
        Reduction::Mean => tape.mean(rows),
        Reduction::Sum => Ok(tape.sum(rows)),
    }
}

/// Samples LCAs for every triplet and returns the reduced loss.
#[allow(clippy::too_many_arguments)]
pub fn hier_loss_batch<R: Rng + ?Sized>(
    tape: &mut Tape,
    batch: &TripletBatch,
    inputs: HierInputs<'_>,
    delta: f64,
    geom: &HierGeometry,
    noise: LcaNoise,
    reduction: Reduction,
    rng: &mut R,
) -> Result<HierBatchOutput> {
    let assignments = assign_lcas(
        batch,
        inputs.point_values,
        inputs.proxy_values,
        inputs.dim,
        geom,
        noise,
        rng,
    )?;
    let loss = hier_loss_assigned(tape, inputs, &assignments, delta, geom, reduction)?;
    Ok(HierBatchOutput { loss, assignments })
}
