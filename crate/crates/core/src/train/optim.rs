//! AdamW with decoupled weight decay and per-parameter learning rates.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment estimates and step counts, one entry per parameter.
///
/// Each parameter keeps its own step count so that a group frozen for a
/// while starts with a fresh bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: Vec<u64>,
    pub weight_decay: f64,
}

/// Learning rate and decay flag for one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSchedule {
    pub lr: f64,
    pub decay: bool,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor], weight_decay: f64) -> Self {
        let zeros =
            |t: &&Tensor| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("same shape");
        OptimizerState {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            steps: vec![0; params.len()],
            weight_decay,
        }
    }

    /// One update. `grads[p] = None` leaves parameter `p` and its state
    /// untouched (frozen). Non-finite gradients abort before anything moves.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<Tensor>],
        schedule: &[ParamSchedule],
    ) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != params.len()
            || schedule.len() != params.len()
        {
            return Err(Error::invalid(
                "optimizer received mismatched parameter lists",
            ));
        }
        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params[idx].shape() {
                    return Err(Error::ShapeMismatch {
                        op: "adamw",
                        lhs: params[idx].shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of parameter {idx}")));
                }
            }
        }
        for (idx, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let ParamSchedule { lr, decay } = schedule[idx];
            self.steps[idx] += 1;
            let t = self.steps[idx] as i32;
            let bc1 = 1.0 - BETA1.powi(t);
            let bc2 = 1.0 - BETA2.powi(t);
            let wd = if decay { self.weight_decay } else { 0.0 };
            let p = params[idx].data_mut();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            for (((p, m), v), &g) in p
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut())
                .zip(g.data())
            {
                if wd != 0.0 {
                    *p -= lr * wd * *p;
                }
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
