//! Central-finite-difference verification of tape gradients.

use super::graph::{Graph, VarId};
use super::tensor::{Real, Tensor};

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compare tape gradients of a scalar-valued builder against central finite
/// differences over every element of every input.
///
/// `build` receives a fresh graph plus the leaf ids for `inputs` and must
/// return a scalar node. The step is chosen per precision (1e-3 for f32,
/// 1e-5 for f64); the error is `|analytic - numeric| / max(1, |a|, |n|)`.
pub fn grad_check<T: Real>(
    build: impl Fn(&mut Graph<T>, &[VarId]) -> VarId,
    inputs: &[Tensor<T>],
    tolerance: f64,
) -> GradCheckReport {
    let eval = |tensors: &[Tensor<T>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<VarId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out)[0].to_f64()
    };

    // analytic gradients
    let mut g = Graph::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &ids);
    let grads = g.backward(out).expect("scalar loss");

    let h = if std::mem::size_of::<T>() == 4 { 1e-3 } else { 1e-5 };
    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;

    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (arg, _) in inputs.iter().enumerate() {
        for i in 0..inputs[arg].numel() {
            let orig = work[arg].data()[i];
            work[arg].data_mut()[i] = orig + T::from_f64(h);
            let plus = eval(&work);
            work[arg].data_mut()[i] = orig - T::from_f64(h);
            let minus = eval(&work);
            work[arg].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[ids[arg]][i].to_f64();
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            checked += 1;
        }
    }
    GradCheckReport { max_rel_err, tolerance, checked }
}
