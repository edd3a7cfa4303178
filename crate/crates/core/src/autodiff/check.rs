use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose `±h` probe crossed a kink (different branch signature).
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        GradCheckReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        }
    }
}

/// Central-difference check of `f` at `inputs` with step `h`.
///
/// `f` receives one differentiable leaf per input and must return a scalar.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<(f64, Vec<u8>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.item(out), tape.branch_signature().to_vec()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let base_sig = tape.branch_signature().to_vec();

    let mut report = GradCheckReport::default();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (t, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        for k in 0..inputs[t].len() {
            let x0 = inputs[t].data()[k];
            probe[t].data_mut()[k] = x0 + h;
            let (fp, sp) = eval(&probe)?;
            probe[t].data_mut()[k] = x0 - h;
            let (fm, sm) = eval(&probe)?;
            probe[t].data_mut()[k] = x0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let mut err = (analytic.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            if err.is_nan() {
                err = f64::INFINITY;
            }
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
