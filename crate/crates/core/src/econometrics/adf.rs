use serde::{Deserialize, Serialize};

use super::ols::{design, ols};
use crate::error::{Error, Result};

/// Response-surface coefficients of the 5% critical value, constant-only case (MacKinnon 2010).
const TAU_C_5PCT: [f64; 4] = [-2.86154, -2.8903, -4.234, -40.040];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    /// t statistic on the lagged level.
    pub statistic: f64,
    pub lag: usize,
    pub n_obs: usize,
    pub critical_value: f64,
    pub reject_unit_root: bool,
}

/// 5% critical value for the constant-only Dickey–Fuller regression with `n_obs` observations.
pub fn critical_value_5pct(n_obs: usize) -> f64 {
    let t = n_obs as f64;
    TAU_C_5PCT[0] + TAU_C_5PCT[1] / t + TAU_C_5PCT[2] / (t * t) + TAU_C_5PCT[3] / (t * t * t)
}

/// Dickey–Fuller regression `Δy_t = α + γ y_{t−1} + Σ δ_j Δy_{t−j}` over rows `start..`.
fn regression(y: &[f64], dy: &[f64], lag: usize, start: usize) -> Result<super::OlsResult> {
    let rows = start..dy.len();
    let response: Vec<f64> = rows.clone().map(|i| dy[i]).collect();
    let level: Vec<f64> = rows.clone().map(|i| y[i]).collect();
    let lagged: Vec<Vec<f64>> = (1..=lag).map(|j| rows.clone().map(|i| dy[i - j]).collect()).collect();
    let mut cols: Vec<&[f64]> = vec![&level];
    cols.extend(lagged.iter().map(Vec::as_slice));
    ols(&response, &design(&cols, true), true)
}

/// Augmented Dickey–Fuller test with a constant, lag order chosen by AIC.
///
/// Candidate lags `0..=max_lag` are compared on a common sample, then the
/// selected order is refitted on all rows it can use.
pub fn adf_test(series: &[f64], max_lag: usize) -> Result<AdfResult> {
    if series.len() <= max_lag + 10 {
        return Err(Error::InsufficientData(format!(
            "ADF with max lag {max_lag} needs more than {} observations, got {}",
            max_lag + 10,
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    if series.iter().all(|v| *v == series[0]) {
        return Err(Error::InvalidInput("constant series".into()));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();

    let mut best: Option<(f64, usize)> = None;
    for lag in 0..=max_lag {
        // lagged differences that are constant are absorbed by the intercept
        let Ok(fit) = regression(series, &dy, lag, max_lag) else { continue };
        let n = fit.n as f64;
        let aic = n * (fit.rss / n).ln() + 2.0 * fit.k as f64;
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, lag));
        }
    }
    let (_, lag) = best.ok_or_else(|| Error::Degenerate("no Dickey–Fuller regression could be fitted".into()))?;
    let fit = regression(series, &dy, lag, lag)?;
    let n_obs = fit.n;
    let critical_value = critical_value_5pct(n_obs);
    let scale: f64 = dy.iter().map(|v| v * v).sum();
    if fit.rss <= 1e-20 * scale {
        // deterministic differences: no stochastic component to test
        return Ok(AdfResult { statistic: 0.0, lag, n_obs, critical_value, reject_unit_root: false });
    }
    let statistic = fit.t_stats[1];
    Ok(AdfResult { statistic, lag, n_obs, critical_value, reject_unit_root: statistic < critical_value })
}
