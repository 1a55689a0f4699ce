//! Central finite-difference verification of backward passes.

use crate::error::Result;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, in units of
    /// `max(1, |loss|)`. Central differences cannot resolve gradients much
    /// below `eps * |loss| / step`, so those compare in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords_per_param: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords_per_param: usize::MAX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let stride = len as f64 / max as f64;
        (0..max).map(|i| (i as f64 * stride) as usize).collect()
    }
}

/// Gradients of `loss` by central differences on the coordinates that
/// [`grad_check`] inspects.
pub fn numeric_gradients<F>(
    store: &ParamStore,
    loss: &F,
    opts: &GradCheckOptions,
) -> Result<Gradients>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = loss(&mut g, s)?;
        g.check()?;
        Ok(g.scalar(out))
    };
    let mut work = store.clone();
    let mut grads = Gradients::default();
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        let base = store.get(id).clone();
        let mut num = Tensor::zeros(base.rows(), base.cols());
        for i in coords(base.len(), opts.max_coords_per_param) {
            let x = base.data()[i];
            work.get_mut(id).data_mut()[i] = x + opts.step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = x - opts.step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = x;
            num.data_mut()[i] = (up - down) / (2.0 * opts.step);
        }
        grads.set(id, num);
    }
    Ok(grads)
}

/// Backward-pass gradients and the loss value.
pub fn analytic_gradients<F>(store: &ParamStore, loss: &F) -> Result<(Gradients, f64)>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = loss(&mut g, store)?;
    g.check()?;
    let value = g.scalar(out);
    Ok((g.backward(out, &Tensor::scalar(1.0))?, value))
}

/// Compare two gradient sets on the inspected coordinates of a loss whose
/// value is `loss`.
pub fn compare(
    store: &ParamStore,
    analytic: &Gradients,
    numeric: &Gradients,
    loss: f64,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let floor = opts.floor * loss.abs().max(1.0);
    let mut params = Vec::new();
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        let len = store.get(id).len();
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in coords(len, opts.max_coords_per_param) {
            let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
            let n = numeric.get(id).map_or(0.0, |t| t.data()[i]);
            let err = relative_error(a, n, floor);
            check.checked += 1;
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = n;
            }
        }
        params.push(check);
    }
    let max_rel_error = params
        .iter()
        .map(|p| p.max_rel_error)
        .fold(
            0.0,
            |m: f64, e| if e.is_nan() { f64::NAN } else { m.max(e) },
        );
    GradCheckReport {
        passed: max_rel_error < opts.tolerance,
        tolerance: opts.tolerance,
        max_rel_error,
        params,
    }
}

/// Compare backward against central differences for every trainable
/// parameter used by `loss`, which must build a scalar from `store`
/// deterministically.
pub fn grad_check<F>(store: &ParamStore, loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let (analytic, value) = analytic_gradients(store, &loss)?;
    let numeric = numeric_gradients(store, &loss, &opts)?;
    Ok(compare(store, &analytic, &numeric, value, &opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_graph_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::matrix(2, 1, vec![0.5, -1.5]).unwrap(), true);
        let b = store.add("b", Tensor::scalar(0.25), true);
        let report = grad_check(
            &store,
            |g, s| {
                let x = g.input(Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap());
                let wv = g.param(s, w);
                let bv = g.param(s, b);
                let y = g.linear(x, wv, bv);
                Ok(g.sum(y))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed);
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[0.3, -0.8]), true);
        let loss = |g: &mut Graph, s: &ParamStore| {
            let v = g.param(s, x);
            let t = g.tanh(v);
            let sq = g.square(t);
            Ok(g.sum(sq))
        };
        let opts = GradCheckOptions::default();
        let (mut analytic, value) = analytic_gradients(&store, &loss).unwrap();
        let numeric = numeric_gradients(&store, &loss, &opts).unwrap();
        assert!(compare(&store, &analytic, &numeric, value, &opts).passed);
        analytic.get_mut(x).unwrap().data_mut()[1] *= 1.01;
        let report = compare(&store, &analytic, &numeric, value, &opts);
        assert!(!report.passed);
        assert_eq!(report.params[0].worst_index, 1);
    }
}
