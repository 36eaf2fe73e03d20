use super::params::ModelParams;
use super::tape::{Tape, Var};
use crate::error::{IopError, Result};

/// Largest relative disagreement between reverse-mode gradients of `loss`
/// and central differences `(f(x + eps) - f(x - eps)) / (2 eps)`, taken over
/// every parameter coordinate. Relative error uses `max(|a|, |b|, 1e-8)` as
/// denominator.
pub fn grad_check<F>(params: &ModelParams, eps: f64, loss: F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    Ok(grad_check_report(params, eps, 1e-8, loss)?.max_rel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - b| / max(|a|, |b|, floor)` over all coordinates.
    pub max_rel: f64,
    pub coordinates: usize,
    /// Coordinates where both gradients were below `floor`, so the check
    /// there is absolute: `|a - b| / floor`.
    pub below_floor: usize,
}

/// [`grad_check`] with an explicit denominator floor. Central differences
/// lose about `ulp(f) / eps` to cancellation, so gradients much smaller than
/// that cannot be resolved relatively; `floor` should sit above that level.
pub fn grad_check_report<F>(params: &ModelParams, eps: f64, floor: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(IopError::Numeric(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    if !(floor > 0.0) {
        return Err(IopError::Numeric(format!(
            "relative-error floor must be positive, got {floor}"
        )));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        let out = loss(&mut tape)?;
        finite(tape.scalar(out))?;
        tape.backward(out)
    };
    let eval = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new(p);
        let out = loss(&mut tape)?;
        finite(tape.scalar(out))
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel: 0.0,
        coordinates: 0,
        below_floor: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let exact = analytic.get(id).map(<[f64]>::to_vec);
        for i in 0..params.get(id).len() {
            let orig = work.get(id).data[i];
            work.get_mut(id).data[i] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data[i] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = exact.as_ref().map_or(0.0, |g| g[i]);
            finite(a)?;
            let scale = a.abs().max(numeric.abs());
            report.coordinates += 1;
            report.below_floor += (scale < floor) as usize;
            report.max_rel = report.max_rel.max((a - numeric).abs() / scale.max(floor));
        }
    }
    Ok(report)
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(IopError::Numeric(format!("non-finite value {x} during gradient check")))
    }
}
