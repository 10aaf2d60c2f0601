use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const GRAD_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compare reverse-mode gradients of `loss` against central differences.
///
/// `loss` builds the scalar on a fresh tape over the given store. The error for
/// one coordinate is `|a - n| / max(GRAD_FLOOR, |a| + |n|)`; the maximum over every
/// checked coordinate is returned. Below the floor, roundoff in the difference
/// quotient dominates, so tiny gradients are judged on absolute error. With `max_coords_per_param` set, larger
/// tensors are probed at evenly spaced indices.
pub fn finite_diff_check<F>(
    params: &ParamStore<f64>,
    eps: f64,
    max_coords_per_param: Option<usize>,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut analytic = params.zero_grads();
    {
        let mut tape = Tape::new(params);
        let l = loss(&mut tape)?;
        let value = tape.scalar(l);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {value}")));
        }
        tape.backward(l)?.accumulate(&mut analytic);
    }

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        let v = tape.scalar(l);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("loss evaluated to {v} during perturbation")))
        }
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let coords: Vec<usize> = match max_coords_per_param {
            Some(k) if n > k && k > 0 => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        for k in coords {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id)[k];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_FLOOR);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}
