//! Least-squares fitting of response curves.

mod baseline;
pub mod lm;
pub mod models;
mod two_stage;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ve_model::{HestonFitParams, VeParams};

pub use baseline::{fit_heston, fit_heston_points, model_compare, HestonFit, RankedModel};
pub use lm::{Bounds, JacobianMode, LmOutcome, LmSettings};
pub use models::{CurveModel, CurveProblem, ExponentialDecay, PowerLaw, StretchedExponential};
pub use two_stage::{
    default_t_w_grid, fit_power_law_stage, fit_stretched_stage, fit_two_stage, fit_two_stage_points,
    CandidateRss, StageFit, TwoStageFit, TwoStageOptions,
};

/// Outcome of a plain curve fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub params: Vec<f64>,
    pub rss: f64,
    pub n_points: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Fit `model` to `(t, y)` by Levenberg–Marquardt from `init`.
pub fn lm_fit<M: CurveModel>(model: &M, init: &[f64], bounds: &Bounds, t: &[f64], y: &[f64], settings: &LmSettings) -> Result<CurveFit> {
    if t.len() != y.len() {
        return Err(Error::InvalidInput(format!("{} abscissae for {} values", t.len(), y.len())));
    }
    if t.len() < model.n_params() {
        return Err(Error::InsufficientData(format!(
            "{} points for {} parameters",
            t.len(),
            model.n_params()
        )));
    }
    let problem = CurveProblem { model, t, y };
    let out = lm::minimize(&problem, init, bounds, settings)?;
    Ok(CurveFit { params: out.params, rss: out.rss, n_points: t.len(), converged: out.converged, iterations: out.iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "model")]
pub enum FittedParams {
    Ve(VeParams),
    Heston(HestonFitParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FittedParams,
    pub rss: f64,
    /// `(t ≤ t_w, t > t_w)`; the Heston baseline reports everything in the first slot.
    pub per_stage_rss: (f64, f64),
    pub n_points: usize,
    pub converged: bool,
    pub iterations: usize,
    /// A decay rate ended up pinned at its lower bound (flat data).
    pub degenerate: bool,
}

impl FitResult {
    pub fn predict(&self, t: f64) -> f64 {
        match &self.params {
            FittedParams::Ve(p) => crate::ve_model::ve_mean(p, t).unwrap_or(f64::NAN),
            FittedParams::Heston(p) => crate::ve_model::heston_mean(p, t),
        }
    }

    pub fn ve(&self) -> Option<&VeParams> {
        match &self.params {
            FittedParams::Ve(p) => Some(p),
            FittedParams::Heston(_) => None,
        }
    }
}

/// Ordinary least-squares line `y = a + b x`, returning `(a, b, rss)`.
pub(crate) fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Some((intercept, slope, rss))
}
