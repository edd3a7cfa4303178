//! Poincaré-ball geometry in double precision.
//!
//! The ball of curvature `-c` is the open set `{x : c‖x‖² < 1}`. Every
//! constructor of [`HyperbolicPoint`] either goes through the exponential map
//! or checks membership explicitly, so a point that exists is inside the ball.
//!
//! Slice-level helpers ([`distance`], [`exp_map_0_slice`], ...) are the hot
//! paths used by mining and evaluation; the typed wrappers validate inputs.
//! Differentiable versions of the same formulas live in [`diff`].

pub mod diff;

use crate::error::{Error, Result};

/// Points with `c‖x‖² ≥ 1 − BALL_EPS` are rescaled back onto that shell.
pub const BALL_EPS: f64 = 1e-5;

/// Upper clamp for the arctanh argument.
pub const ATANH_MAX: f64 = 1.0 - 1e-15;

/// Curvature magnitude `c > 0`; the manifold has sectional curvature `-c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!(
                "curvature must be finite and > 0, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Euclidean radius of the ball, `1/√c`.
    pub fn radius(self) -> f64 {
        1.0 / self.sqrt()
    }
}

/// An unconstrained Euclidean vector, typically an encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(x) = coords.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "tangent vector has non-finite entry {x}"
            )));
        }
        Ok(TangentVector(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A point strictly inside the Poincaré ball.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl HyperbolicPoint {
    /// Wraps `coords` after checking `c‖x‖² < 1`.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("point has non-finite coordinates"));
        }
        let n2 = norm_sq(&coords);
        if curvature.value() * n2 >= 1.0 {
            return Err(Error::invalid(format!(
                "point outside the ball: c*|x|^2 = {}",
                curvature.value() * n2
            )));
        }
        Ok(HyperbolicPoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        HyperbolicPoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.coords).sqrt()
    }

    /// Additive inverse, also the Möbius inverse.
    pub fn neg(&self) -> Self {
        HyperbolicPoint {
            coords: self.coords.iter().map(|x| -x).collect(),
            curvature: self.curvature,
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Rescales `x` radially onto the `c‖x‖² = 1 − BALL_EPS` shell when it is at
/// or beyond it.
pub fn project_to_ball(x: &mut [f64], c: f64) {
    let n2 = norm_sq(x);
    if c * n2 >= 1.0 - BALL_EPS {
        let target = ((1.0 - BALL_EPS) / c).sqrt();
        let s = target / n2.sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// `tanh(√c‖v‖) v / (√c‖v‖)`, with the origin mapped to itself.
pub fn exp_map_0_slice(v: &[f64], c: f64) -> Vec<f64> {
    let n = norm_sq(v).sqrt();
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    let sc = c.sqrt() * n;
    let s = sc.tanh() / sc;
    let mut out: Vec<f64> = v.iter().map(|x| x * s).collect();
    project_to_ball(&mut out, c);
    out
}

/// Scales `v` to norm at most `r`.
pub fn clip_slice(v: &[f64], r: f64) -> Vec<f64> {
    let n = norm_sq(v).sqrt();
    if n > r {
        let s = r / n;
        v.iter().map(|x| x * s).collect()
    } else {
        v.to_vec()
    }
}

/// Möbius addition without the ball guard.
fn mobius_add_raw(u: &[f64], v: &[f64], c: f64) -> Vec<f64> {
    let uv = dot(u, v);
    let uu = norm_sq(u);
    let vv = norm_sq(v);
    let a = 1.0 + 2.0 * c * uv + c * vv;
    let b = 1.0 - c * uu;
    let den = 1.0 + 2.0 * c * uv + c * c * uu * vv;
    u.iter()
        .zip(v)
        .map(|(x, y)| (a * x + b * y) / den)
        .collect()
}

pub fn mobius_add_slice(u: &[f64], v: &[f64], c: f64) -> Vec<f64> {
    let mut out = mobius_add_raw(u, v, c);
    project_to_ball(&mut out, c);
    out
}

/// Hyperbolic distance `(2/√c) artanh(√c ‖(−u) ⊕ v‖)`.
///
/// The Möbius sum here is not projected: the distance only needs its norm,
/// and the arctanh clamp bounds the result.
pub fn distance(u: &[f64], v: &[f64], c: f64) -> f64 {
    // ‖−u ⊕ v‖ written as ‖u − v‖ / √(1 − 2c⟨u,v⟩ + c²‖u‖²‖v‖²), exact zero on the diagonal
    let diff = u
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den = 1.0 - 2.0 * c * dot(u, v) + c * c * norm_sq(u) * norm_sq(v);
    let sc = c.sqrt();
    let arg = (sc * diff / den.sqrt()).clamp(0.0, ATANH_MAX);
    2.0 / sc * arg.atanh()
}

/// Distance used by the spherical ablation: twice the chord between unit vectors.
pub fn chord_distance(u: &[f64], v: &[f64]) -> f64 {
    2.0 * u
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn l2_normalize_slice(v: &[f64]) -> Vec<f64> {
    let n = norm_sq(v).sqrt();
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| x / n).collect()
}

pub fn exp_map_0(v: &TangentVector, c: Curvature) -> HyperbolicPoint {
    HyperbolicPoint {
        coords: exp_map_0_slice(v.coords(), c.value()),
        curvature: c,
    }
}

pub fn mobius_add(u: &HyperbolicPoint, v: &HyperbolicPoint) -> Result<HyperbolicPoint> {
    check_same_ball(u, v)?;
    Ok(HyperbolicPoint {
        coords: mobius_add_slice(&u.coords, &v.coords, u.curvature.value()),
        curvature: u.curvature,
    })
}

pub fn hyp_distance(u: &HyperbolicPoint, v: &HyperbolicPoint) -> Result<f64> {
    check_same_ball(u, v)?;
    Ok(distance(&u.coords, &v.coords, u.curvature.value()))
}

/// `λ_c(x) = 2 / (1 − c‖x‖²)`.
pub fn conformal_factor(x: &HyperbolicPoint) -> f64 {
    2.0 / (1.0 - x.curvature.value() * norm_sq(&x.coords))
}

/// Clips `v` to norm `r`, then maps it onto the ball.
pub fn clip_and_exp(v: &TangentVector, r: f64, c: Curvature) -> Result<HyperbolicPoint> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::invalid(format!("clip radius must be > 0, got {r}")));
    }
    Ok(HyperbolicPoint {
        coords: exp_map_0_slice(&clip_slice(v.coords(), r), c.value()),
        curvature: c,
    })
}

fn check_same_ball(u: &HyperbolicPoint, v: &HyperbolicPoint) -> Result<()> {
    if u.curvature != v.curvature {
        return Err(Error::invalid(format!(
            "curvature mismatch: {} vs {}",
            u.curvature.value(),
            v.curvature.value()
        )));
    }
    if u.dim() != v.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(())
}
