//! Central-difference verification of analytic gradients (64-bit only).

use serde::Serialize;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so exact zeros compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct Offender {
    /// Input (or parameter) position in the checked list.
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Offender>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::shape(
            "check_gradients",
            format!("fn must return a scalar, got {:?}", t.shape()),
        ));
    }
    let y = t.data()[0];
    if !y.is_finite() {
        return Err(Error::NonFinite(format!("function value {y} during gradient check")));
    }
    Ok(y)
}

/// Compares analytic gradients against central differences element by element.
///
/// `eval(input, element, delta)` returns the function value with one element shifted.
/// A piecewise-linear kink (relu) inside `±h` corrupts the difference quotient rather
/// than the adjoint, so a failing element is re-measured at `h/10` and `h/100` and the
/// best agreement is kept.
fn compare(
    analytic: &[Tensor<f64>],
    tolerance: f64,
    mut eval: impl FnMut(usize, usize, f64) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        tolerance,
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (input, grad) in analytic.iter().enumerate() {
        for (element, &a) in grad.data().iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut best_numeric = f64::NAN;
            for h in [STEP, STEP / 10.0, STEP / 100.0] {
                let numeric = (eval(input, element, h)? - eval(input, element, -h)?) / (2.0 * h);
                let e = rel_err(a, numeric);
                if e < best {
                    best = e;
                    best_numeric = numeric;
                }
                if best <= tolerance {
                    break;
                }
            }
            report.checked += 1;
            if best > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(best);
                report.worst = Some(Offender {
                    input,
                    element,
                    analytic: a,
                    numeric: best_numeric,
                    rel_err: best,
                });
            }
        }
    }
    Ok(report)
}

/// Checks `∂f/∂inputs` of a scalar function built on a fresh graph.
pub fn check_gradients<F>(mut f: F, inputs: &[Tensor<f64>], tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut shifted: Vec<Tensor<f64>> = inputs.to_vec();
    compare(&analytic, tolerance, |input, element, delta| {
        let orig = shifted[input].data()[element];
        shifted[input].data_mut()[element] = orig + delta;
        let mut g = Graph::new();
        let vars: Vec<Var> = shifted.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        shifted[input].data_mut()[element] = orig;
        scalar_of(&g, out?)
    })
}

/// Checks `∂f/∂θ` for the listed parameter records of `store`.
pub fn check_param_gradients<F>(
    mut f: F,
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .map(|&id| {
            grads
                .param(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
        })
        .collect();

    compare(&analytic, tolerance, |input, element, delta| {
        let id = ids[input];
        let orig = store.value(id).data()[element];
        store.value_mut(id).data_mut()[element] = orig + delta;
        let mut g = Graph::new();
        let out = f(&mut g, store);
        store.value_mut(id).data_mut()[element] = orig;
        scalar_of(&g, out?)
    })
}
