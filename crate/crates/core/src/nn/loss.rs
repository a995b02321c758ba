//! Softmax and the three per-sample losses.

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy `-log softmax(z)[y]`.
pub fn loss_ce(z: &[f64], y: usize) -> f64 {
    log_sum_exp(z) - z[y]
}

/// Cross-entropy on masked logits plus `(delta/2)·‖z'‖²`.
pub fn loss_dom(z_masked: &[f64], y: usize, delta: f64) -> f64 {
    let sq: f64 = z_masked.iter().map(|v| v * v).sum();
    loss_ce(z_masked, y) + 0.5 * delta * sq
}

/// `lambda·L_ce(z) + q·L_dom(z')`.
pub fn loss_all(z: &[f64], z_masked: &[f64], y: usize, q: f64, lambda: f64, delta: f64) -> f64 {
    lambda * loss_ce(z, y) + q * loss_dom(z_masked, y, delta)
}
