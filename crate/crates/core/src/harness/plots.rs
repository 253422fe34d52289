use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::svg::{Canvas, PALETTE};
use super::MetricsLog;
use crate::error::{usage, Result};

/// Trailing moving average over up to `window` episodes; `window = 1`
/// returns the input.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        sum += x;
        if k >= window {
            sum -= xs[k - window];
        }
        out.push(sum / (k + 1).min(window) as f64);
    }
    out
}

/// Smoothed mean return across seeds with its population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    pub n_seeds: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn aggregate(label: &str, logs: &[MetricsLog], window: usize) -> Result<CurveSeries> {
    if logs.is_empty() {
        return Err(usage(format!("{label}: at least one seed is needed")));
    }
    let n = logs[0].rows.len();
    if let Some(bad) = logs.iter().find(|l| l.rows.len() != n) {
        return Err(usage(format!(
            "{label}: seeds have different episode counts ({n} and {})",
            bad.rows.len()
        )));
    }
    let smoothed: Vec<Vec<f64>> = logs.iter().map(|l| moving_average(&l.returns(), window)).collect();
    let k = smoothed.len() as f64;
    let mean: Vec<f64> = (0..n).map(|t| smoothed.iter().map(|s| s[t]).sum::<f64>() / k).collect();
    let std = (0..n)
        .map(|t| (smoothed.iter().map(|s| (s[t] - mean[t]).powi(2)).sum::<f64>() / k).sqrt())
        .collect();
    Ok(CurveSeries {
        label: label.into(),
        n_seeds: logs.len(),
        mean,
        std,
    })
}

/// Writes `{stem}.svg` (mean with a one-standard-deviation band per
/// algorithm) and `{stem}.csv` into `out_dir`.
pub fn plot_curves(groups: &[(String, Vec<MetricsLog>)], window: usize, out_dir: &Path, stem: &str) -> Result<Vec<CurveSeries>> {
    if groups.is_empty() {
        return Err(usage("nothing to plot"));
    }
    let series = groups
        .iter()
        .map(|(label, logs)| aggregate(label, logs, window))
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("algorithm,episode,mean,std\n");
    for s in &series {
        for t in 0..s.mean.len() {
            let _ = writeln!(csv, "{},{t},{},{}", s.label, s.mean[t], s.std[t]);
        }
    }

    let x_max = series.iter().map(|s| s.mean.len()).max().unwrap_or(1).saturating_sub(1) as f64;
    let lo = series
        .iter()
        .flat_map(|s| s.mean.iter().zip(&s.std).map(|(m, d)| m - d))
        .fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .flat_map(|s| s.mean.iter().zip(&s.std).map(|(m, d)| m + d))
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let mut canvas = Canvas::new((0.0, x_max.max(1.0)), (lo, hi));
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts = |f: &dyn Fn(usize) -> f64| (0..s.mean.len()).map(|t| (t as f64, f(t))).collect::<Vec<_>>();
        canvas.band(&pts(&|t| s.mean[t] - s.std[t]), &pts(&|t| s.mean[t] + s.std[t]), colour);
        canvas.polyline(&pts(&|t| s.mean[t]), colour);
        canvas.label(x_max.max(1.0) * 0.02, hi - (hi - lo) * 0.06 * (k + 1) as f64, &s.label, colour);
    }
    let svg = canvas.finish(
        &format!("{stem} (smoothed over {window} episodes)"),
        "episode",
        "return",
    );
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(format!("{stem}.csv")), csv)?;
    fs::write(out_dir.join(format!("{stem}.svg")), svg)?;
    Ok(series)
}
