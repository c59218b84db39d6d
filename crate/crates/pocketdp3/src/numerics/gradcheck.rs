//! Central-difference verification of the tape's gradients.


use super::graph::{Graph, Var};
use super::param::ParamStore;
use crate::error::{Error, Result};

/// Where and how badly the analytic and numeric gradients disagree most.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_elem: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare analytic gradients against central finite differences for every
/// scalar element of every parameter in `store`.
///
/// `f` rebuilds the forward graph (it must be deterministic given the store);
/// the returned value is the worst relative error, with the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradcheck<F>(store: &mut ParamStore<f64>, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    gradcheck_detailed(store, eps, f).map(|r| r.max_rel_err)
}

/// [`gradcheck`] with the location of the worst disagreement.
pub fn gradcheck_detailed<F>(store: &mut ParamStore<f64>, eps: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    // analytic pass
    let mut sink = store.grad_buffers();
    {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        let v = g.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("gradcheck: loss at unperturbed point".into()));
        }
        g.backward(loss, &mut sink)?;
    }

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_elem: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for pi in 0..store.len() {
        for ei in 0..sink[pi].numel() {
            let orig = store.get(super::param::ParamId(pi)).value.data()[ei];

            store.get_mut(super::param::ParamId(pi)).value.data_mut()[ei] = orig + eps;
            let fp = eval(store)?;
            store.get_mut(super::param::ParamId(pi)).value.data_mut()[ei] = orig - eps;
            let fm = eval(store)?;
            store.get_mut(super::param::ParamId(pi)).value.data_mut()[ei] = orig;

            if !fp.is_finite() || !fm.is_finite() {
                let name = store.get(super::param::ParamId(pi)).name.clone();
                return Err(Error::NonFinite(format!(
                    "gradcheck: loss under perturbation of {name}[{ei}]"
                )));
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = sink[pi].data()[ei];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.get(super::param::ParamId(pi)).name.clone();
                report.worst_elem = ei;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
