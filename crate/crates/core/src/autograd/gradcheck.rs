use super::graph::{Bindings, Graph};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor of the relative error. Gradients that are identically
/// zero (e.g. attention key biases under softmax shift invariance) produce
/// central differences of pure roundoff, around 1e-12 at eps 1e-4.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)
    pub max_relative_error: f64,
    /// Parameter and component index of the worst component.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Components skipped because the probe crossed a ReLU kink.
    pub skipped: usize,
}

/// Compares reverse-mode gradients of a scalar graph against central
/// differences for every component of every bound input the graph reads.
///
/// A component is skipped when the `±eps` probes see different ReLU sign
/// patterns, i.e. the probe straddles a kink (an input sitting exactly on 0
/// is always straddled when the component moves it).
pub fn finite_difference_check(graph: &mut Graph, bindings: &Bindings, eps: f64) -> Result<GradCheckReport> {
    let mut work: Bindings = bindings.clone();
    for t in work.values_mut() {
        t.clear_grad();
    }
    let out = graph.forward(&work)?;
    if out.len() != 1 {
        return Err(Error::NonScalar(out.shape().to_vec()));
    }
    graph.backward_into(&mut work, &Tensor::scalar(1.0))?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for name in graph.input_names() {
        let analytic = work[&name].grad_tensor().into_data();
        for (i, &a) in analytic.iter().enumerate() {
            let original = work[&name].data()[i];

            work.get_mut(&name).unwrap().data_mut()[i] = original + eps;
            let f_plus = graph.forward(&work)?.data()[0];
            let pattern_plus = graph.relu_pattern(&work)?;

            work.get_mut(&name).unwrap().data_mut()[i] = original - eps;
            let f_minus = graph.forward(&work)?.data()[0];
            let pattern_minus = graph.relu_pattern(&work)?;

            work.get_mut(&name).unwrap().data_mut()[i] = original;

            if pattern_plus != pattern_minus {
                report.skipped += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    // Leave the graph evaluated at the unperturbed point.
    graph.forward(&work)?;
    Ok(report)
}
