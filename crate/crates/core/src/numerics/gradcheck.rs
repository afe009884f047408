//! Central finite-difference gradient checking.
//!
//! Only forward values are used on the numeric side, so the check is
//! independent of every backward rule it exercises.

use super::{Graph, ParamStore, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that entries where
/// both gradients are ~0 compare absolutely.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares `d loss / d param` from `backward` against central differences
/// with step `h` for every entry of every parameter in `store`.
///
/// `loss_fn` must build a scalar loss deterministically on the given graph.
pub fn check<F>(store: &ParamStore, h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store, false);
    let loss = loss_fn(&mut g)?;
    g.backward(loss)?;
    let analytic = g.param_grads();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s, false);
        let l = loss_fn(&mut g)?;
        Ok(g.value(l).item())
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id)[i];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = e;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
