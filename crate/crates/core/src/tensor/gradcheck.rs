use super::graph::{Graph, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// Input index and flat element index of the worst element.
    pub worst_input: usize,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Checks the gradient of a scalar-valued `f` with respect to every element
/// of every input using central differences with step `eps`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'g> Fn(&'g Graph<T>, &[Var<'g, T>]) -> Result<Var<'g, T>>,
{
    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&g, &vars)?.value();
        let v = out.item()?.as_f64();
        if !v.is_finite() {
            return Err(Error::numeric("grad_check", "function value is not finite"));
        }
        Ok(v)
    };

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = f(&g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| g.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
        .collect();

    let mut worst: Option<GradCheckReport> = None;
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        for e in 0..x.len() {
            let orig = x.data()[e];
            probe[i].data_mut()[e] = T::from_f64(orig.as_f64() + eps);
            let plus = eval(&probe)?;
            probe[i].data_mut()[e] = T::from_f64(orig.as_f64() - eps);
            let minus = eval(&probe)?;
            probe[i].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[e].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if worst.as_ref().is_none_or(|w| rel > w.max_rel_error) {
                worst = Some(GradCheckReport {
                    max_rel_error: rel,
                    worst_input: i,
                    worst_element: e,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    worst.ok_or_else(|| Error::Graph("grad_check needs at least one input".into()))
}
