use serde::Serialize;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Location of the worst element, as `(tensor name, flat index)`.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst element.
    pub worst_values: Option<(f64, f64)>,
    pub eps: f64,
    pub tol: f64,
    pub passed: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

#[derive(Default)]
struct Tracker {
    checked: usize,
    max: f64,
    worst: Option<(String, usize)>,
    worst_values: Option<(f64, f64)>,
}

impl Tracker {
    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if e > self.max || self.worst.is_none() {
            self.max = e.max(self.max);
            self.worst = Some((name.to_string(), idx));
            self.worst_values = Some((analytic, numeric));
        }
    }

    fn finish(self, eps: f64, tol: f64) -> GradcheckReport {
        GradcheckReport {
            checked: self.checked,
            max_rel_err: self.max,
            worst: self.worst,
            worst_values: self.worst_values,
            eps,
            tol,
            passed: self.max < tol,
        }
    }
}

fn scalar_value(g: &Graph, v: Var) -> Result<f64> {
    g.value(v).item()
}

/// Checks `d f / d x` for a scalar-valued `f`. Fails with
/// [`Error::InvalidCheck`] if `f` samples dropout or is not reproducible.
pub fn gradcheck<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<(f64, bool)> {
        let mut g = Graph::new();
        let v = g.leaf(t.clone());
        let out = f(&mut g, v)?;
        Ok((scalar_value(&g, out)?, g.is_stochastic()))
    };

    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let loss = f(&mut g, xv)?;
    if g.is_stochastic() {
        return Err(Error::InvalidCheck("function samples dropout masks".into()));
    }
    let base = scalar_value(&g, loss)?;
    let (again, _) = eval(x)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::InvalidCheck("function is not deterministic".into()));
    }
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut tracker = Tracker::default();
    let mut probe = x.clone();
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (plus, _) = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let (minus, _) = eval(&probe)?;
        probe.data_mut()[i] = orig;
        tracker.record("x", i, *a, (plus - minus) / (2.0 * eps));
    }
    Ok(tracker.finish(eps, tol))
}

/// Checks the gradient of a scalar-valued `f` with respect to every weight
/// in `store`.
pub fn gradcheck_params<F>(f: F, store: &ParamStore, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    if g.is_stochastic() {
        return Err(Error::InvalidCheck("function samples dropout masks".into()));
    }
    let base = scalar_value(&g, loss)?;
    let mut probe = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        scalar_value(&g, out)
    };
    if eval(&probe)?.to_bits() != base.to_bits() {
        return Err(Error::InvalidCheck("function is not deterministic".into()));
    }
    g.backward(loss)?;
    let grads = g.param_grads(store);

    let mut tracker = Tracker::default();
    for id in store.ids() {
        let n = store.get(id).numel();
        let zeros;
        let analytic = match grads.get(id) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        for (i, a) in analytic.iter().enumerate() {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            tracker.record(store.name(id), i, *a, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(tracker.finish(eps, tol))
}
