//! Central-difference verification of analytic loss gradients.

use serde::Serialize;

use super::LossValue;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct ArgReport {
    pub coords: usize,
    pub max_abs_error: f64,
    /// `||a - n|| / max(||a||, ||n||, floor)` over the whole argument.
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub args: Vec<ArgReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.args.iter().map(|a| a.rel_error).fold(0.0, f64::max)
    }
}

/// Compares every coordinate of `grads[i]` returned by `f(args)` against a
/// central difference with the given `step`. Relative error is measured per
/// argument on the whole gradient vector, `||a - n|| / max(||a||, ||n||, floor)`,
/// so that coordinates whose true gradient is far below the difference noise
/// do not dominate.
pub fn finite_difference_check<F>(f: F, args: &[Vec<f64>], step: f64, floor: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Vec<f64>]) -> Result<LossValue>,
{
    let analytic = f(args)?;
    if analytic.grads.len() != args.len() {
        return Err(Error::CheckFailure(format!(
            "loss returned {} gradients for {} arguments",
            analytic.grads.len(),
            args.len()
        )));
    }
    let mut work = args.to_vec();
    let mut reports = Vec::with_capacity(args.len());
    for (i, arg) in args.iter().enumerate() {
        if analytic.grads[i].len() != arg.len() {
            return Err(Error::CheckFailure(format!("gradient {i} has the wrong length")));
        }
        let mut rep = ArgReport { coords: arg.len(), max_abs_error: 0.0, rel_error: 0.0 };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in 0..arg.len() {
            let x = arg[j];
            work[i][j] = x + step;
            let up = f(&work)?.value;
            work[i][j] = x - step;
            let down = f(&work)?.value;
            work[i][j] = x;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.grads[i][j];
            if !(numeric.is_finite() && a.is_finite()) {
                return Err(Error::CheckFailure(format!("non-finite gradient at argument {i}, coordinate {j}")));
            }
            let err = (a - numeric).abs();
            rep.max_abs_error = rep.max_abs_error.max(err);
            diff2 += err * err;
            a2 += a * a;
            n2 += numeric * numeric;
        }
        rep.rel_error = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(floor);
        reports.push(rep);
    }
    Ok(GradCheckReport { args: reports })
}
