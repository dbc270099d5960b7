//! Gradient verification by central finite differences.
//!
//! The loss closure must rebuild the same computation for the current
//! parameter values; it is evaluated 2 * n_scalars times, so keep the toy
//! models small.

use crate::error::Result;

use super::graph::{Graph, NodeId};
use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Parameter name and flat element index of the worst disagreement.
    pub worst: Option<(String, usize)>,
}

impl FiniteDiffReport {
    fn empty() -> FiniteDiffReport {
        FiniteDiffReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        // Treat tiny gradients as an absolute comparison so that
        // finite-difference round-off cannot dominate the ratio.
        let rel = abs / analytic.abs().max(numeric.abs()).max(1e-3);
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some((name.to_string(), idx));
        }
        self.max_abs_err = self.max_abs_err.max(abs);
        self.checked += 1;
    }
}

/// Compare reverse-mode gradients of `loss` against central differences for
/// every element of the listed parameters.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    h: f64,
    mut loss: F,
) -> Result<FiniteDiffReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let root = loss(&mut graph, store)?;
    graph.backward(root)?;
    let analytic = graph.param_grads(store);

    let mut report = FiniteDiffReport::empty();
    for &pid in params {
        let n = store.value(pid).len();
        let name = store.name(pid).to_string();
        for i in 0..n {
            let original = store.value(pid).data()[i];

            store.value_mut(pid).data_mut()[i] = original + h;
            let mut g_plus = Graph::inference();
            let plus = loss(&mut g_plus, store)?;
            let f_plus = g_plus.value(plus).item();

            store.value_mut(pid).data_mut()[i] = original - h;
            let mut g_minus = Graph::inference();
            let minus = loss(&mut g_minus, store)?;
            let f_minus = g_minus.value(minus).item();

            store.value_mut(pid).data_mut()[i] = original;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pid.0]
                .as_ref()
                .map(|t| t.data()[i])
                .unwrap_or(0.0);
            report.record(&name, i, a, numeric);
        }
    }
    Ok(report)
}

/// Check the gradient of a scalar function of a single input tensor.
pub fn finite_diff_check<F>(point: &Tensor, h: f64, mut f: F) -> Result<FiniteDiffReport>
where
    F: FnMut(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let x = graph.input(point.clone());
    let root = f(&mut graph, x)?;
    graph.backward(root)?;
    let analytic = graph.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut report = FiniteDiffReport::empty();
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut g_plus = Graph::inference();
        let xp = g_plus.leaf(plus);
        let rp = f(&mut g_plus, xp)?;
        let f_plus = g_plus.value(rp).item();

        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let mut g_minus = Graph::inference();
        let xm = g_minus.leaf(minus);
        let rm = f(&mut g_minus, xm)?;
        let f_minus = g_minus.value(rm).item();

        let numeric = (f_plus - f_minus) / (2.0 * h);
        report.record("input", i, analytic.data()[i], numeric);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let point = Tensor::from_vec(&[2, 3], vec![0.3, -0.7, 1.2, 0.1, 2.0, -1.1]).unwrap();
        let report = finite_diff_check(&point, 1e-5, |g, x| g.sum(x)).unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
        assert_eq!(report.checked, 6);
    }
}
