use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ols::{design, ols, OlsResult};
use crate::error::{Error, Result};
use crate::fitting::lm::{minimize, Bounds, LeastSquares, LmSettings};
use crate::market_data::MarketSeries;

/// Per-session quadratic intraday trend and the residual around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detrended {
    /// `[a₀, a₁, a₂]` for session 0, 1, …
    pub coefficients: Vec<[f64; 3]>,
    pub residual: Vec<f64>,
}

/// Remove `a₀ + a₁ t + a₂ t²` from `z`, fitted separately for every session.
pub fn detrend_volume(z: &[f64], session: &[u8], position: &[u32]) -> Result<Detrended> {
    if z.len() != session.len() || z.len() != position.len() {
        return Err(Error::InvalidInput("volume, session and position lengths differ".into()));
    }
    let n_sessions = session.iter().map(|s| *s as usize + 1).max().unwrap_or(0);
    let mut coefficients = Vec::with_capacity(n_sessions);
    let mut residual = vec![0.0; z.len()];
    for s in 0..n_sessions {
        let idx: Vec<usize> = (0..z.len()).filter(|&i| session[i] as usize == s).collect();
        if idx.len() < 4 {
            return Err(Error::InsufficientData(format!("session {s} has {} observations, need 4", idx.len())));
        }
        let y: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| position[i] as f64).collect();
        let t2: Vec<f64> = t.iter().map(|v| v * v).collect();
        let fit = ols(&y, &design(&[&t, &t2], true), true)?;
        for (&i, e) in idx.iter().zip(&fit.residuals) {
            residual[i] = *e;
        }
        coefficients.push([fit.coefficients[0], fit.coefficients[1], fit.coefficients[2]]);
    }
    Ok(Detrended { coefficients, residual })
}

/// `x_t = c + Σ ar_i x_{t−i} + u_t + Σ ma_j u_{t−j}` estimated by conditional sum of squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaFit {
    pub intercept: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// One-step-ahead innovations; zero for the first `p` observations.
    pub innovations: Vec<f64>,
    /// One-step-ahead predictions, `x_t − u_t`.
    pub fitted: Vec<f64>,
    /// Sum of squared innovations over the conditioning sample.
    pub css: f64,
    pub n_effective: usize,
    pub converged: bool,
    /// All AR roots lie outside the unit circle.
    pub stationary: bool,
    /// All MA roots lie outside the unit circle.
    pub invertible: bool,
}

impl ArmaFit {
    pub fn aic(&self) -> f64 {
        let n = self.n_effective as f64;
        n * (self.css / n).ln() + 2.0 * (1 + self.ar.len() + self.ma.len()) as f64
    }
}

struct CssProblem<'a> {
    x: &'a [f64],
    p: usize,
    q: usize,
    start: usize,
}

impl CssProblem<'_> {
    /// Innovations over the whole series with zero pre-sample innovations.
    fn innovations(&self, beta: &[f64], e: &mut [f64]) {
        let (c, ar, ma) = (beta[0], &beta[1..=self.p], &beta[self.p + 1..]);
        for t in 0..self.x.len() {
            if t < self.start {
                e[t] = 0.0;
                continue;
            }
            let mut pred = c;
            for (i, a) in ar.iter().enumerate() {
                pred += a * self.x[t - i - 1];
            }
            for (j, m) in ma.iter().enumerate() {
                if t > j {
                    pred += m * e[t - j - 1];
                }
            }
            e[t] = self.x[t] - pred;
        }
    }
}

impl LeastSquares for CssProblem<'_> {
    fn n_params(&self) -> usize {
        1 + self.p + self.q
    }

    fn n_residuals(&self) -> usize {
        self.x.len() - self.start
    }

    fn residuals(&self, beta: &[f64], out: &mut [f64]) {
        let mut e = vec![0.0; self.x.len()];
        self.innovations(beta, &mut e);
        out.copy_from_slice(&e[self.start..]);
    }

    fn jacobian(&self, beta: &[f64], out: &mut DMatrix<f64>) -> bool {
        let n = self.x.len();
        let k = self.n_params();
        let ma = &beta[self.p + 1..];
        let mut e = vec![0.0; n];
        self.innovations(beta, &mut e);
        // d[t][l] = ∂e_t/∂β_l, zero before the conditioning start
        let mut d = vec![0.0; n * k];
        for t in self.start..n {
            for l in 0..k {
                let mut v = if l == 0 {
                    -1.0
                } else if l <= self.p {
                    -self.x[t - l]
                } else {
                    let lag = l - self.p;
                    if t >= lag { -e[t - lag] } else { 0.0 }
                };
                for (j, m) in ma.iter().enumerate() {
                    if t > j {
                        v -= m * d[(t - j - 1) * k + l];
                    }
                }
                d[t * k + l] = v;
            }
            for l in 0..k {
                out[(t - self.start, l)] = d[t * k + l];
            }
        }
        true
    }

    fn data_norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Whether every root of `1 − Σ a_i z^i` lies outside the unit circle.
fn roots_outside_unit_circle(a: &[f64]) -> bool {
    let a: Vec<f64> = a.iter().rev().skip_while(|v| **v == 0.0).collect::<Vec<_>>().into_iter().rev().copied().collect();
    if a.is_empty() {
        return true;
    }
    let k = a.len();
    let companion = DMatrix::from_fn(k, k, |i, j| if i == 0 { a[j] } else if i == j + 1 { 1.0 } else { 0.0 });
    companion.complex_eigenvalues().iter().all(|z| z.norm() < 1.0)
}

fn arma_css(x: &[f64], p: usize, q: usize, start: usize, settings: &LmSettings) -> Result<ArmaFit> {
    // AR-only least squares as the starting point
    let mut init = vec![0.0; 1 + p + q];
    if p > 0 {
        let lags: Vec<Vec<f64>> = (1..=p).map(|i| (start..x.len()).map(|t| x[t - i]).collect()).collect();
        let cols: Vec<&[f64]> = lags.iter().map(Vec::as_slice).collect();
        let fit = ols(&x[start..], &design(&cols, true), true)?;
        init[..=p].copy_from_slice(&fit.coefficients);
    } else {
        init[0] = x[start..].iter().sum::<f64>() / (x.len() - start) as f64;
    }
    let problem = CssProblem { x, p, q, start };
    let out = minimize(&problem, &init, &Bounds::unbounded(init.len()), settings)?;
    let beta = out.params;
    let mut innovations = vec![0.0; x.len()];
    problem.innovations(&beta, &mut innovations);
    let fitted = x.iter().zip(&innovations).map(|(v, e)| v - e).collect();
    let ar = beta[1..=p].to_vec();
    let ma = beta[p + 1..].to_vec();
    let neg_ma: Vec<f64> = ma.iter().map(|m| -m).collect();
    Ok(ArmaFit {
        intercept: beta[0],
        stationary: roots_outside_unit_circle(&ar),
        invertible: roots_outside_unit_circle(&neg_ma),
        ar,
        ma,
        innovations,
        fitted,
        css: out.rss,
        n_effective: x.len() - start,
        converged: out.converged,
    })
}

/// Fit ARMA(p, q) by conditional sum of squares, conditioning on the first `p` values.
pub fn arma_fit(x: &[f64], p: usize, q: usize, settings: &LmSettings) -> Result<ArmaFit> {
    if p + q == 0 {
        return Err(Error::InvalidInput("ARMA order must have p + q ≥ 1".into()));
    }
    if x.len() <= 10 * (p + q + 1) {
        return Err(Error::InsufficientData(format!(
            "ARMA({p},{q}) needs more than {} observations, got {}",
            10 * (p + q + 1),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    let fit = arma_css(x, p, q, p, settings)?;
    if !fit.converged {
        return Err(Error::NotConverged(format!("ARMA({p},{q}) conditional sum of squares")));
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ArmaOrders {
    Fixed { p: usize, q: usize },
    /// Minimise AIC over `p ≤ max_p`, `q ≤ max_q`, `p + q ≥ 1`, on a common sample.
    Aic { max_p: usize, max_q: usize },
}

impl Default for ArmaOrders {
    fn default() -> Self {
        ArmaOrders::Aic { max_p: 2, max_q: 2 }
    }
}

/// Log-volume split into an expected (uninformed) and unexpected (informed) part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeDecomposition {
    /// Series observations with a defined log-volume, in time order.
    pub rows: Vec<usize>,
    pub detrend: Vec<[f64; 3]>,
    pub detrended: Vec<f64>,
    pub arma: ArmaFit,
    pub informed: Vec<f64>,
    pub uninformed: Vec<f64>,
}

impl VolumeDecomposition {
    /// Scatter `values` (aligned with `rows`) back onto a series of length `n`.
    pub fn by_observation(&self, n: usize, values: &[f64]) -> Vec<Option<f64>> {
        let mut out = vec![None; n];
        for (&r, &v) in self.rows.iter().zip(values) {
            out[r] = Some(v);
        }
        out
    }
}

/// Detrend log-volume per session, then split it with an ARMA model.
pub fn mdh_decompose(series: &MarketSeries, orders: ArmaOrders, settings: &LmSettings) -> Result<VolumeDecomposition> {
    let rows: Vec<usize> = (0..series.len()).filter(|&i| series.log_volume[i].is_some()).collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData("no observation carries volume".into()));
    }
    let z: Vec<f64> = rows.iter().map(|&i| series.log_volume[i].unwrap_or_default()).collect();
    let session: Vec<u8> = rows.iter().map(|&i| series.session[i]).collect();
    let position: Vec<u32> = rows.iter().map(|&i| series.session_minute[i]).collect();
    let Detrended { coefficients, residual } = detrend_volume(&z, &session, &position)?;
    let arma = select_arma(&residual, orders, settings)?;
    Ok(split(rows, coefficients, residual, arma))
}

fn split(rows: Vec<usize>, detrend: Vec<[f64; 3]>, detrended: Vec<f64>, arma: ArmaFit) -> VolumeDecomposition {
    let uninformed = arma.fitted.clone();
    let informed = detrended.iter().zip(&uninformed).map(|(x, f)| x - f).collect();
    VolumeDecomposition { rows, detrend, detrended, arma, informed, uninformed }
}

/// ARMA fit with fixed or AIC-selected orders.
pub fn select_arma(x: &[f64], orders: ArmaOrders, settings: &LmSettings) -> Result<ArmaFit> {
    match orders {
        ArmaOrders::Fixed { p, q } => arma_fit(x, p, q, settings),
        ArmaOrders::Aic { max_p, max_q } => {
            if max_p + max_q == 0 {
                return Err(Error::InvalidInput("ARMA order caps must allow p + q ≥ 1".into()));
            }
            if x.len() <= 10 * (max_p + max_q + 1) {
                return Err(Error::InsufficientData(format!("{} observations for ARMA order search", x.len())));
            }
            let mut best: Option<(f64, usize, usize)> = None;
            for p in 0..=max_p {
                for q in 0..=max_q {
                    if p + q == 0 {
                        continue;
                    }
                    let Ok(fit) = arma_css(x, p, q, max_p, settings) else { continue };
                    if !fit.converged {
                        continue;
                    }
                    let aic = fit.aic();
                    if best.is_none_or(|(b, _, _)| aic < b) {
                        best = Some((aic, p, q));
                    }
                }
            }
            let (_, p, q) = best.ok_or_else(|| Error::NotConverged("no ARMA candidate converged".into()))?;
            arma_fit(x, p, q, settings)
        }
    }
}

/// Volatility regressed on informed and uninformed volume, with an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvRegression {
    pub ols: OlsResult,
    /// |corr(zi, zu)| above 0.99.
    pub collinear: bool,
}

pub fn vv_regression(v: &[f64], zi: &[f64], zu: &[f64]) -> Result<VvRegression> {
    if v.len() != zi.len() || v.len() != zu.len() {
        return Err(Error::InvalidInput("regression inputs differ in length".into()));
    }
    if v.len() < 10 {
        return Err(Error::InsufficientData(format!("{} observations, need 10", v.len())));
    }
    let collinear = correlation(zi, zu).is_some_and(|r| r.abs() > 0.99);
    let ols = ols(v, &design(&[zi, zu], true), true)?;
    Ok(VvRegression { ols, collinear })
}

fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
