use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Step suited to whole-model checks, where some gradients are ~1e-8.
pub const MODEL_EPS: f64 = 1e-3;

/// Largest relative disagreement between autograd and central finite
/// differences over every element of every parameter.
///
/// `f` rebuilds the scalar objective on a fresh graph from the parameter
/// leaves it is handed. Numeric derivatives use the fourth-order central
/// stencil `(8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h`, so a step
/// around `1e-3` keeps both truncation and cancellation error near 1e-13.
/// The relative error of one element is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let base = g.value(loss).item();
    if !base.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {base}")));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_tensor(v)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("objective evaluated to {v}")))
        }
    };

    let mut work = params.to_vec();
    let mut worst = 0.0_f64;
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..work[p].numel() {
            let orig = work[p].data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                work[p].data_mut()[i] = orig + offset;
                let v = eval(&work);
                work[p].data_mut()[i] = orig;
                v
            };
            let near = at(eps)? - at(-eps)?;
            let far = at(2.0 * eps)? - at(-2.0 * eps)?;
            let numeric = (8.0 * near - far) / (12.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if err.is_nan() {
                return Err(Error::Numeric(format!(
                    "NaN comparing gradients of parameter {p}, element {i}"
                )));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
