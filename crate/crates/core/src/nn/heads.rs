/// Log-softmax restricted to legal entries; illegal entries get `-inf`.
/// If nothing is legal every entry is `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.fill(f64::NEG_INFINITY);
        return;
    }
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    let log_z = max + sum.ln();
    for ((o, &l), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { l - log_z } else { f64::NEG_INFINITY };
    }
}

/// Accumulates `scale * d log p[chosen] / d logits` into `grad`, given the
/// masked log-probabilities `log_p`.
pub fn log_softmax_grad(log_p: &[f64], chosen: usize, scale: f64, grad: &mut [f64]) {
    for (j, (&lp, g)) in log_p.iter().zip(grad.iter_mut()).enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let indicator = if j == chosen { 1.0 } else { 0.0 };
        *g += scale * (indicator - lp.exp());
    }
}
