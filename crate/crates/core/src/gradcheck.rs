//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates forward values, so it stays independent
//! of the backward rules it is used to verify.

use crate::error::Result;
use crate::tensor::{Graph, ParameterSet, Var};

/// Floor on the denominator of the relative error, so that components whose
/// true gradient is ~0 are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences with step `h`, for every element of every parameter
/// named in `names` (all parameters when empty).
pub fn check_gradients<F>(params: &ParameterSet<f64>, names: &[&str], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParameterSet<f64>) -> Result<Var>,
{
    let mut analytic = params.clone();
    analytic.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, &analytic)?;
    g.backward(loss, &mut analytic)?;

    let eval = |p: &ParameterSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, p)?;
        Ok(g.value(loss).item())
    };

    let selected: Vec<String> = if names.is_empty() {
        params.names().map(str::to_string).collect()
    } else {
        names.iter().map(|s| s.to_string()).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    for name in &selected {
        let len = params.value(name)?.numel();
        let grad = analytic.get(name)?.grad.clone();
        for i in 0..len {
            let base = params.value(name)?.data()[i];
            probe.get_mut(name)?.value.data_mut()[i] = base + h;
            let plus = eval(&probe)?;
            probe.get_mut(name)?.value.data_mut()[i] = base - h;
            let minus = eval(&probe)?;
            probe.get_mut(name)?.value.data_mut()[i] = base;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
