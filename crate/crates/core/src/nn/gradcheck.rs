use ndarray::Array2;

use super::mlp::{Gradients, Mlp};

/// A scalar loss of network parameters with an analytic gradient.
pub trait Objective {
    fn loss(&self, net: &Mlp) -> f64;

    fn loss_and_grad(&self, net: &Mlp) -> (f64, Gradients);

    /// Every input batch the objective feeds through `net`.
    fn inputs(&self) -> Vec<Array2<f64>>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Base finite-difference step, scaled by `max(1, |theta|)` per parameter.
    pub step: f64,
    /// Denominator floor of the relative error, per unit of `max(1, |loss|)`.
    /// Finite-difference roundoff grows with the loss value.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub checked: usize,
    /// Parameters whose perturbation crossed an activation kink.
    pub skipped_kinks: usize,
}

/// Compares backward gradients with central finite differences.
pub fn grad_check(
    net: &Mlp,
    objective: &dyn Objective,
    options: GradCheckOptions,
) -> GradCheckReport {
    let (value, analytic) = objective.loss_and_grad(net);
    let floor = options.floor * value.abs().max(1.0);
    let inputs = objective.inputs();
    let signature = |n: &Mlp| -> Vec<bool> {
        inputs
            .iter()
            .flat_map(|x| {
                n.kink_signature(x.view())
                    .expect("objective inputs match the net")
            })
            .collect()
    };
    let base_sig = signature(net);
    let mut report = GradCheckReport::default();
    let mut probe = net.clone();
    for i in 0..net.num_params() {
        let theta = net.param(i);
        let h = options.step * theta.abs().max(1.0);
        probe.set_param(i, theta + h);
        let plus = objective.loss(&probe);
        let plus_sig = signature(&probe);
        probe.set_param(i, theta - h);
        let minus = objective.loss(&probe);
        let minus_sig = signature(&probe);
        probe.set_param(i, theta);
        if plus_sig != base_sig || minus_sig != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.get(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_param = Some(net.param_name(i));
        }
    }
    report
}
