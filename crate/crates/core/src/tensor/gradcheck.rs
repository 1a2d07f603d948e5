//! Central finite-difference verification of analytic gradients.

use super::{Graph, ParamStore, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest per-tensor relative error.
    pub max_rel_error: f64,
    /// Name of the tensor attaining it.
    pub worst: String,
}

/// `max|a - n| / max(max|a|, max|n|)`; zero when both are zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares the backward pass of `loss` against central differences with
/// step `eps` for every trainable tensor in `store`. `loss` must build a
/// graph ending in a scalar and be deterministic.
pub fn finite_difference_check<F>(store: &mut ParamStore<f64>, eps: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let root = loss(store, &mut g)?;
    g.backward_into(root, store);
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let r = loss(s, &mut g)?;
        Ok(g.value(r).item())
    };
    let mut report = GradCheck { max_rel_error: 0.0, worst: String::new() };
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let n = store.get(id).numel();
        let analytic = store.get(id).grad().map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut numeric = vec![0.0; n];
        for (i, num) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            *num = (up - down) / (2.0 * eps);
        }
        let err = relative_error(&analytic, &numeric);
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = store.name(id).to_string();
        }
    }
    store.zero_grads();
    Ok(report)
}
