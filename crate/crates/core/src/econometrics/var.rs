use serde::{Deserialize, Serialize};

use super::ols::{design, ols, OlsResult};
use crate::error::{Error, Result};
use crate::special::f_upper_tail;

/// One equation of the bivariate VAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEquation {
    pub intercept: f64,
    /// Coefficients on the equation's own lags, lag 1 first.
    pub own: Vec<f64>,
    /// Coefficients on the other series' lags.
    pub cross: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
}

/// Bivariate VAR of volatility `v` and volume `z` with equal lag orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub lag: usize,
    pub volatility_eq: VarEquation,
    pub volume_eq: VarEquation,
    /// AIC of the selected lag on the common selection sample.
    pub aic: f64,
    /// AIC for lags `1..=max_lag`.
    pub aic_by_lag: Vec<f64>,
    pub n_obs: usize,
    v: Vec<f64>,
    z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Null: lagged volume does not help predict volatility.
    VolumeToVolatility,
    /// Null: lagged volatility does not help predict volume.
    VolatilityToVolume,
}

impl Direction {
    pub fn null_hypothesis(self) -> &'static str {
        match self {
            Direction::VolumeToVolatility => "volume does not Granger-cause volatility",
            Direction::VolatilityToVolume => "volatility does not Granger-cause volume",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub f_stat: f64,
    pub p_value: f64,
    pub df1: usize,
    pub df2: usize,
}

fn lags(series: &[f64], lag: usize, start: usize) -> Vec<Vec<f64>> {
    (1..=lag).map(|k| (start..series.len()).map(|t| series[t - k]).collect()).collect()
}

/// Regress `target[start..]` on a constant and the first `lag` lags of each series in `sources`.
fn lagged_ols(target: &[f64], sources: &[&[f64]], lag: usize, start: usize) -> Result<OlsResult> {
    let blocks: Vec<Vec<Vec<f64>>> = sources.iter().map(|s| lags(s, lag, start)).collect();
    let cols: Vec<&[f64]> = blocks.iter().flatten().map(Vec::as_slice).collect();
    ols(&target[start..], &design(&cols, true), true)
}

fn equation(fit: OlsResult, lag: usize) -> VarEquation {
    let c = &fit.coefficients;
    VarEquation {
        intercept: c[0],
        own: c[1..=lag].to_vec(),
        cross: c[lag + 1..=2 * lag].to_vec(),
        residuals: fit.residuals,
        rss: fit.rss,
    }
}

fn log_det_cov(e1: &[f64], e2: &[f64]) -> f64 {
    let n = e1.len() as f64;
    let s11 = e1.iter().map(|e| e * e).sum::<f64>() / n;
    let s22 = e2.iter().map(|e| e * e).sum::<f64>() / n;
    let s12 = e1.iter().zip(e2).map(|(a, b)| a * b).sum::<f64>() / n;
    (s11 * s22 - s12 * s12).ln()
}

/// Fit the bivariate VAR for lags `1..=max_lag` and keep the AIC minimiser.
///
/// AIC is `N ln det Σ̂ + 2 · 2(1 + 2p)` on the sample shared by all candidates;
/// the chosen lag is then refitted on every row it can use.
pub fn var_fit_aic(v: &[f64], z: &[f64], max_lag: usize) -> Result<VarModel> {
    if max_lag < 1 {
        return Err(Error::InvalidInput("max lag must be at least 1".into()));
    }
    if v.len() != z.len() {
        return Err(Error::InvalidInput(format!("series lengths differ: {} vs {}", v.len(), z.len())));
    }
    if v.len() <= 2 * max_lag + 10 {
        return Err(Error::InsufficientData(format!(
            "VAR with max lag {max_lag} needs more than {} observations, got {}",
            2 * max_lag + 10,
            v.len()
        )));
    }
    let mut aic_by_lag = Vec::with_capacity(max_lag);
    for lag in 1..=max_lag {
        let ev = lagged_ols(v, &[v, z], lag, max_lag)?;
        let ez = lagged_ols(z, &[v, z], lag, max_lag)?;
        let n = ev.n as f64;
        let params = 2 * (1 + 2 * lag);
        aic_by_lag.push(n * log_det_cov(&ev.residuals, &ez.residuals) + 2.0 * params as f64);
    }
    let (best, aic) = aic_by_lag
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &a)| if a < acc.1 { (i, a) } else { acc });
    let lag = best + 1;
    let volatility_fit = lagged_ols(v, &[v, z], lag, lag)?;
    let volume_fit = lagged_ols(z, &[z, v], lag, lag)?;
    let n_obs = volatility_fit.n;
    Ok(VarModel {
        lag,
        volatility_eq: equation(volatility_fit, lag),
        volume_eq: equation(volume_fit, lag),
        aic,
        aic_by_lag,
        n_obs,
        v: v.to_vec(),
        z: z.to_vec(),
    })
}

/// F test that the cross-lag block of one equation is zero.
pub fn granger_test(model: &VarModel, direction: Direction) -> Result<GrangerResult> {
    let p = model.lag;
    let (target, own, unrestricted) = match direction {
        Direction::VolumeToVolatility => (&model.v, &model.v, &model.volatility_eq),
        Direction::VolatilityToVolume => (&model.z, &model.z, &model.volume_eq),
    };
    let restricted = lagged_ols(target, &[own], p, p)?;
    let df1 = p;
    let df2 = model.n_obs - 2 * p - 1;
    let rss_u = unrestricted.rss;
    if !(rss_u > 0.0) {
        return Err(Error::Degenerate("unrestricted regression fits exactly".into()));
    }
    let f_stat = ((restricted.rss - rss_u) / df1 as f64) / (rss_u / df2 as f64);
    Ok(GrangerResult { f_stat, p_value: f_upper_tail(f_stat, df1 as f64, df2 as f64), df1, df2 })
}
