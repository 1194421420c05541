//! Central finite-difference verification of tape gradients.

use super::array::Array;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Per-parameter comparison between analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub id: ParamId,
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    /// Set when the function or a gradient produced NaN or infinity.
    pub non_finite: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.non_finite.is_none() && self.max_rel_error() < self.tolerance
    }
}

/// Relative error with a small floor so near-zero gradients compare by absolute difference.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks every parameter of `params` that `f` reads.
///
/// `f` must build a scalar on the inference tape it is given and must be
/// deterministic, since it is re-evaluated twice per scalar.
pub fn grad_check<F>(f: F, params: &ParamStore, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (analytic, base) = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        let base = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let analytic: Vec<(ParamId, Array)> = grads
            .params()
            .into_iter()
            .map(|(id, g)| (id, g.clone()))
            .collect();
        (analytic, base)
    };
    let mut report = GradCheckReport {
        params: Vec::new(),
        tolerance: tol,
        non_finite: None,
    };
    if !base.is_finite() {
        report.non_finite = Some(format!("loss evaluated to {base}"));
        return Ok(report);
    }

    let mut probe = params.clone();
    for (id, grad) in analytic {
        if !grad.all_finite() {
            report.non_finite = Some(format!("gradient of {} is not finite", params.name(id)));
            return Ok(report);
        }
        let mut check = ParamCheck {
            id,
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for j in 0..grad.len() {
            let orig = params.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + h;
            let plus = eval(&f, &probe)?;
            probe.get_mut(id).data_mut()[j] = orig - h;
            let minus = eval(&f, &probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                report.non_finite = Some(format!("perturbed loss not finite at {}[{j}]", check.name));
                return Ok(report);
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
        }
        report.params.push(check);
    }
    Ok(report)
}

fn eval<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let loss = f(&mut tape)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm() {
        let mut ps = ParamStore::new();
        let p = ps.add("p", Array::vector(vec![0.3, -1.2, 2.5]));
        let report = grad_check(
            |t| {
                let v = t.param(p);
                let sq = t.mul(v, v)?;
                let s = t.sum(sq);
                Ok(t.scale(s, 0.5))
            },
            &ps,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn non_finite_is_reported() {
        let mut ps = ParamStore::new();
        let p = ps.add("p", Array::vector(vec![1e300]));
        let report = grad_check(
            |t| {
                let v = t.param(p);
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &ps,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.non_finite.is_some());
        assert!(!report.passed());
    }
}
