use serde::{Deserialize, Serialize};

use super::lm::{Bounds, LmSettings};
use super::models::ExponentialDecay;
use super::{line_fit, lm_fit, CurveFit, FitResult, FittedParams};
use crate::error::{Error, Result};
use crate::events::ResponseCurve;
use crate::ve_model::HestonFitParams;

const A_BOUNDS: (f64, f64) = (-100.0, 10.0);
const THETA_BOUNDS: (f64, f64) = (1e-9, 50.0);

#[derive(Debug, Clone, PartialEq)]
pub struct HestonFit {
    pub fit: FitResult,
    /// Closed-form `(a, θ)` from regressing `ln(y − ω)` on `t`, when every point sits above `ω`.
    pub loglinear: Option<(f64, f64)>,
}

/// Fit `ω + exp(a − θ t)` with `ω` held fixed.
pub fn fit_heston_points(t: &[f64], y: &[f64], omega: f64, settings: &LmSettings) -> Result<HestonFit> {
    if t.is_empty() {
        return Err(Error::InsufficientData("empty curve".into()));
    }
    if t.len() != y.len() {
        return Err(Error::InvalidInput("t and y lengths differ".into()));
    }
    let bounds = Bounds::new(vec![A_BOUNDS.0, THETA_BOUNDS.0], vec![A_BOUNDS.1, THETA_BOUNDS.1]);
    let loglinear = if y.iter().all(|v| v - omega > 0.0) {
        let logs: Vec<f64> = y.iter().map(|v| (v - omega).ln()).collect();
        line_fit(t, &logs).map(|(a, slope, _)| (a, -slope))
    } else {
        None
    };

    let level = (y[0] - omega).abs().max(y[0].abs()).max(1e-12).ln();
    let mut starts = vec![vec![level, 0.1], vec![level, 1.0], vec![0.0, 0.0]];
    if let Some((a, theta)) = loglinear {
        starts.insert(0, vec![a, theta]);
    }
    let model = ExponentialDecay { omega };
    let mut best: Option<CurveFit> = None;
    for mut s in starts {
        bounds.project(&mut s);
        let Ok(f) = lm_fit(&model, &s, &bounds, t, y, settings) else { continue };
        if f.rss.is_finite() && best.as_ref().is_none_or(|b| f.rss < b.rss) {
            best = Some(f);
        }
    }
    let best = best.ok_or_else(|| Error::NotConverged("every baseline start failed".into()))?;
    let degenerate = bounds.pinned_low(&best.params, 1);
    let fit = FitResult {
        params: FittedParams::Heston(HestonFitParams { a: best.params[0], theta: best.params[1], omega }),
        rss: best.rss,
        per_stage_rss: (best.rss, 0.0),
        n_points: best.n_points,
        converged: best.converged,
        iterations: best.iterations,
        degenerate,
    };
    Ok(HestonFit { fit, loglinear })
}

pub fn fit_heston(curve: &ResponseCurve, omega: f64, settings: &LmSettings) -> Result<HestonFit> {
    let (t, y) = curve.volatility_points();
    fit_heston_points(&t, &y, omega, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub name: String,
    /// Position in the input list.
    pub index: usize,
    pub rss: f64,
}

/// Rank fits on the same data by RSS, ascending; ties keep input order.
pub fn model_compare(fits: &[(&str, &FitResult)]) -> Result<Vec<RankedModel>> {
    if let Some((_, first)) = fits.first() {
        if let Some((name, _)) = fits.iter().find(|(_, f)| f.n_points != first.n_points) {
            return Err(Error::InvalidInput(format!("fit `{name}` was made on a different number of points")));
        }
    }
    let mut ranked: Vec<RankedModel> =
        fits.iter().enumerate().map(|(index, (name, f))| RankedModel { name: name.to_string(), index, rss: f.rss }).collect();
    ranked.sort_by(|a, b| a.rss.total_cmp(&b.rss));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{fit_two_stage_points, TwoStageOptions};
    use crate::ve_model::{heston_mean, ve_mean, StageOne, StageTwo, VeParams};

    fn lags(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    #[test]
    fn exact_recovery() {
        let truth = HestonFitParams { a: -8.2537, theta: 0.3506, omega: 0.0011 };
        let t = lags(60);
        let y: Vec<f64> = t.iter().map(|&t| heston_mean(&truth, t)).collect();
        let h = fit_heston_points(&t, &y, 0.0011, &LmSettings::default()).unwrap();
        assert!(h.fit.rss < 1e-18, "{:?}", h.fit);
        let FittedParams::Heston(p) = h.fit.params else { panic!() };
        assert!((p.a - truth.a).abs() < 1e-6 && (p.theta - truth.theta).abs() < 1e-6);
        let (a, theta) = h.loglinear.unwrap();
        assert!((p.a - a).abs() < 1e-6 && (p.theta - theta).abs() < 1e-6);
    }

    #[test]
    fn constant_curve_pins_theta() {
        let t = lags(30);
        let y = vec![0.0011 + (-8.0f64).exp(); 30];
        let h = fit_heston_points(&t, &y, 0.0011, &LmSettings::default()).unwrap();
        assert!(h.fit.degenerate, "{:?}", h.fit);
    }

    #[test]
    fn below_omega_falls_back() {
        let t = lags(20);
        let y: Vec<f64> = t.iter().map(|t| 1e-3 + 1e-3 * (-t).exp()).collect();
        let h = fit_heston_points(&t, &y, 1.5e-3, &LmSettings::default()).unwrap();
        assert!(h.loglinear.is_none());
        assert!(h.fit.rss.is_finite());
    }

    #[test]
    fn ve_beats_heston_on_ve_data() {
        let truth = VeParams::two_stage(13, StageOne { rho: 0.89e-3, b: 0.41, c: 2.81 }, StageTwo { rho: 1.06e-3, b: 0.05 });
        let t = lags(240);
        let y: Vec<f64> = t.iter().map(|&t| ve_mean(&truth, t).unwrap()).collect();
        let ve = fit_two_stage_points(&t, &y, &TwoStageOptions::default()).unwrap().best;
        let heston = fit_heston_points(&t, &y, 0.0, &LmSettings::default()).unwrap().fit;
        let ranked = model_compare(&[("heston", &heston), ("ve", &ve)]).unwrap();
        assert_eq!(ranked[0].name, "ve");
    }

    #[test]
    fn ranking_is_stable() {
        let t = lags(20);
        let y: Vec<f64> = t.iter().map(|t| 1e-3 * (-0.1 * t).exp()).collect();
        let f = fit_heston_points(&t, &y, 0.0, &LmSettings::default()).unwrap().fit;
        let single = model_compare(&[("only", &f)]).unwrap();
        assert_eq!(single.len(), 1);
        let tied = model_compare(&[("x", &f), ("y", &f)]).unwrap();
        assert_eq!((tied[0].index, tied[1].index), (0, 1));
        let mut other = f.clone();
        other.n_points = 3;
        assert!(model_compare(&[("x", &f), ("z", &other)]).is_err());
    }
}
