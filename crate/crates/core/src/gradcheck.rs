//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor: below this magnitude the comparison becomes absolute,
/// since central differences carry roundoff near `1e-11` for unit-scale losses.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, DENOMINATOR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Compares the analytic gradient of `loss_fn` with respect to parameter `id`
/// against central differences with step `h`.
///
/// `loss_fn` must build a scalar on a fresh graph and be deterministic. At most
/// `max_coords` coordinates are probed, spread evenly over the tensor.
pub fn finite_diff_check<F>(
    store: &mut ParamStore<f64>,
    id: ParamId,
    h: f64,
    max_coords: usize,
    mut loss_fn: F,
) -> Result<GradCheck>
where
    F: FnMut(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut graph = Graph::new();
    let loss = loss_fn(store, &mut graph)?;
    graph.backward(loss, store)?;
    let analytic = store.get(id).grad.clone();

    let n = analytic.len();
    let step = (n / max_coords.max(1)).max(1);
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(store, &mut g)?;
        Ok(g.value(l).data()[0])
    };
    for index in (0..n).step_by(step) {
        let original = store.get(id).value.data()[index];
        store.get_mut(id).value.data_mut()[index] = original + h;
        let plus = eval(store)?;
        store.get_mut(id).value.data_mut()[index] = original - h;
        let minus = eval(store)?;
        store.get_mut(id).value.data_mut()[index] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[index];
        let err = relative_error(a, numeric);
        if report.checked == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = index;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Runs [`finite_diff_check`] over every parameter and returns the worst result per name.
pub fn check_all<F>(
    store: &mut ParamStore<f64>,
    h: f64,
    max_coords: usize,
    mut loss_fn: F,
) -> Result<Vec<(String, GradCheck)>>
where
    F: FnMut(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.get(id).name.clone();
        let check = finite_diff_check(store, id, h, max_coords, &mut loss_fn)?;
        out.push((name, check));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(1.0));
        let check = finite_diff_check(&mut store, id, 1e-5, 10, |s, g| {
            let t = g.param(s, id);
            let sq = g.mul(t, t)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!((check.analytic - 2.0).abs() < 1e-12);
        assert!(check.max_rel_error < 1e-9, "{check:?}");
    }

    #[test]
    fn constant_has_zero_error() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(0.3));
        let check = finite_diff_check(&mut store, id, 1e-5, 10, |_, g| {
            let c = g.input(Tensor::scalar(4.0));
            Ok(g.sum(c))
        })
        .unwrap();
        assert_eq!(check.analytic, 0.0);
        assert_eq!(check.numeric, 0.0);
        assert_eq!(check.max_rel_error, 0.0);
    }
}
