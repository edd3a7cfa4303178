//! Differentiable Poincaré-ball composites, one point per row.
//!
//! These mirror the slice functions in the parent module but are assembled
//! from tape primitives so gradients flow through them. The ball guard is
//! not applied here: inputs come from `clip_and_exp` with a finite radius,
//! which keeps `c‖x‖²` at most `tanh²(√c·r)`.

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Norms below this are treated as this value inside `tanh(s)/s`, which
/// keeps the Jacobian at the origin equal to the identity.
const NORM_FLOOR: f64 = 1e-12;

/// Row-wise exponential map at the origin.
pub fn exp_map_0(tape: &mut Tape, v: Var, c: f64) -> Result<Var> {
    let n = tape.norm2(v);
    let floor = tape.scalar_const(NORM_FLOOR);
    let n = tape.max2(n, floor)?;
    let s = tape.scale(n, c.sqrt());
    let t = tape.tanh(s);
    let ratio = tape.div(t, s)?;
    tape.scale_rows(v, ratio)
}

/// Row-wise `v · min(1, r/‖v‖)`.
pub fn clip(tape: &mut Tape, v: Var, r: f64) -> Result<Var> {
    let n = tape.norm2(v);
    let floor = tape.scalar_const(NORM_FLOOR);
    let n = tape.max2(n, floor)?;
    let radius = tape.scalar_const(r);
    let q = tape.div(radius, n)?;
    let factor = tape.clamp(q, 0.0, 1.0);
    tape.scale_rows(v, factor)
}

pub fn clip_and_exp(tape: &mut Tape, v: Var, r: f64, c: f64) -> Result<Var> {
    let clipped = clip(tape, v, r)?;
    exp_map_0(tape, clipped, c)
}

/// Row-wise Möbius addition `u ⊕_c v`.
pub fn mobius_add(tape: &mut Tape, u: Var, v: Var, c: f64) -> Result<Var> {
    let uv = tape.dot(u, v)?;
    let uu = tape.dot(u, u)?;
    let vv = tape.dot(v, v)?;
    let two_c_uv = tape.scale(uv, 2.0 * c);
    let c_vv = tape.scale(vv, c);
    let a = tape.add(two_c_uv, c_vv)?;
    let a = tape.shift(a, 1.0);
    let c_uu = tape.scale(uu, -c);
    let b = tape.shift(c_uu, 1.0);
    let uuvv = tape.mul(uu, vv)?;
    let c2 = tape.scale(uuvv, c * c);
    let den = tape.add(two_c_uv, c2)?;
    let den = tape.shift(den, 1.0);
    let au = tape.scale_rows(u, a)?;
    let bv = tape.scale_rows(v, b)?;
    let num = tape.add(au, bv)?;
    let one = tape.scalar_const(1.0);
    let inv = tape.div(one, den)?;
    tape.scale_rows(num, inv)
}

/// Row-wise hyperbolic distance, `n×d, n×d → n×1`.
pub fn distance(tape: &mut Tape, u: Var, v: Var, c: f64) -> Result<Var> {
    // same closed form for ‖−u ⊕ v‖ as the f64 version
    let diff = tape.sub(u, v)?;
    let num = tape.norm2(diff);
    let uv = tape.dot(u, v)?;
    let uu = tape.dot(u, u)?;
    let vv = tape.dot(v, v)?;
    let prod = tape.mul(uu, vv)?;
    let a = tape.scale(uv, -2.0 * c);
    let b = tape.scale(prod, c * c);
    let den = tape.add(a, b)?;
    let den = tape.shift(den, 1.0);
    let den = tape.sqrt(den);
    let n = tape.div(num, den)?;
    let sc = c.sqrt();
    let arg = tape.scale(n, sc);
    let at = tape.arctanh(arg);
    Ok(tape.scale(at, 2.0 / sc))
}

/// Row-wise `2‖u − v‖`, the spherical-ablation distance.
pub fn chord_distance(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    let d = tape.sub(u, v)?;
    let n = tape.norm2(d);
    Ok(tape.scale(n, 2.0))
}
