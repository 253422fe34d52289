//! Diagonal-Gaussian helpers for the variational objective.

use std::f64::consts::PI;

/// Lower bound on predicted log-variances.
pub const FLOOR_LOGVAR: f64 = -8.0;

/// Smooth floor `floor + softplus(x - floor)`; returns the value and its
/// derivative.
pub fn log_variance_floor(x: f64) -> (f64, f64) {
    let u = x - FLOOR_LOGVAR;
    let (sp, dsp) = if u > 30.0 {
        (u, 1.0)
    } else {
        let e = u.exp();
        (e.ln_1p(), e / (1.0 + e))
    };
    (FLOOR_LOGVAR + sp, dsp)
}

/// `KL(N(mean, exp(logvar)) || N(0, 1))` summed over components, with
/// gradients with respect to the mean and log-variance.
pub fn kl_to_standard_normal(mean: &[f64], logvar: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut kl = 0.0;
    let mut dmean = Vec::with_capacity(mean.len());
    let mut dlogvar = Vec::with_capacity(mean.len());
    for (&m, &lv) in mean.iter().zip(logvar) {
        let var = lv.exp();
        kl += 0.5 * (m * m + var - 1.0 - lv);
        dmean.push(m);
        dlogvar.push(0.5 * (var - 1.0));
    }
    (kl, dmean, dlogvar)
}

/// Negative log-density of `x` under `N(mean, exp(logvar))` summed over
/// components, with gradients with respect to the mean and log-variance.
pub fn gaussian_nll(x: &[f64], mean: &[f64], logvar: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut nll = 0.0;
    let mut dmean = Vec::with_capacity(x.len());
    let mut dlogvar = Vec::with_capacity(x.len());
    for ((&xi, &m), &lv) in x.iter().zip(mean).zip(logvar) {
        let inv = (-lv).exp();
        let diff = xi - m;
        nll += 0.5 * ((2.0 * PI).ln() + lv + diff * diff * inv);
        dmean.push(-diff * inv);
        dlogvar.push(0.5 * (1.0 - diff * diff * inv));
    }
    (nll, dmean, dlogvar)
}
