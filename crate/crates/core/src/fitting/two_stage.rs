use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{Bounds, LmSettings};
use super::models::{PowerLaw, StretchedExponential};
use super::{line_fit, lm_fit, FitResult, FittedParams};
use crate::error::{Error, Result};
use crate::events::ResponseCurve;
use crate::ve_model::{StageOne, StageTwo, VeParams};

pub const MIN_STAGE_ONE_POINTS: usize = 3;
pub const MIN_STAGE_TWO_POINTS: usize = 6;

const RHO_BOUNDS: (f64, f64) = (1e-12, 1.0);
const B_BOUNDS: (f64, f64) = (1e-9, 10.0);
const C_BOUNDS: (f64, f64) = (1.0 + 1e-6, 10.0);
const C_SCAN: [f64; 12] = [1.1, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 3.5, 4.0, 5.0, 7.0];

/// `{0} ∪ {3, …, max}`.
pub fn default_t_w_grid(max: u32) -> Vec<u32> {
    std::iter::once(0).chain(MIN_STAGE_ONE_POINTS as u32..=max).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoStageOptions {
    pub t_w_grid: Vec<u32>,
    /// Fixed long-run level; 0 for the primary variant.
    pub omega: f64,
    pub settings: LmSettings,
}

impl Default for TwoStageOptions {
    fn default() -> Self {
        Self { t_w_grid: default_t_w_grid(60), omega: 0.0, settings: LmSettings::default() }
    }
}

/// Best multi-start fit of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFit {
    pub params: Vec<f64>,
    pub rss: f64,
    pub n_points: usize,
    pub converged: bool,
    pub iterations: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRss {
    pub t_w: u32,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageFit {
    pub best: FitResult,
    /// Total RSS of every feasible grid candidate, in grid order.
    pub candidates: Vec<CandidateRss>,
}

fn best_of<I>(starts: I, fit: impl Fn(&[f64]) -> Result<super::CurveFit>, bounds: &Bounds, b_index: usize) -> Option<StageFit>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut best: Option<StageFit> = None;
    for mut start in starts {
        bounds.project(&mut start);
        let Ok(f) = fit(&start) else { continue };
        if !f.rss.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| f.rss < b.rss) {
            let degenerate = bounds.pinned_low(&f.params, b_index);
            best = Some(StageFit {
                params: f.params,
                rss: f.rss,
                n_points: f.n_points,
                converged: f.converged,
                iterations: f.iterations,
                degenerate,
            });
        }
    }
    best
}

fn shifted_logs(y: &[f64], omega: f64) -> Option<Vec<f64>> {
    y.iter().map(|v| (v - omega > 0.0).then(|| (v - omega).ln())).collect()
}

/// Fit `ω + ρ exp(b t^{1−c}/(c−1))` with `c > 1`.
pub fn fit_stretched_stage(t: &[f64], y: &[f64], omega: f64, settings: &LmSettings) -> Result<StageFit> {
    if t.len() < MIN_STAGE_ONE_POINTS {
        return Err(Error::InsufficientData(format!("stage 1 needs {MIN_STAGE_ONE_POINTS} points, got {}", t.len())));
    }
    let bounds = Bounds::new(vec![RHO_BOUNDS.0, B_BOUNDS.0, C_BOUNDS.0], vec![RHO_BOUNDS.1, B_BOUNDS.1, C_BOUNDS.1]);
    let first = y[0] - omega;
    let mut starts = Vec::new();
    for b in [0.05, 0.5] {
        for c in [1.5, 2.5] {
            starts.push(vec![first, b, c]);
        }
    }
    starts.push(vec![0.0, 0.0, 0.0]);
    if let Some(logs) = shifted_logs(y, omega) {
        // ln(y − ω) = ln ρ + (b/(c−1)) t^{1−c} is linear for fixed c
        let scan = C_SCAN
            .iter()
            .filter_map(|&c| {
                let x: Vec<f64> = t.iter().map(|t| t.powf(1.0 - c)).collect();
                line_fit(&x, &logs).map(|(a, s, rss)| (rss, vec![a.exp(), s * (c - 1.0), c]))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, start)) = scan {
            starts.push(start);
        }
    }
    let model = StretchedExponential { omega };
    best_of(starts, |s| lm_fit(&model, s, &bounds, t, y, settings), &bounds, 1)
        .ok_or_else(|| Error::NotConverged("every stage-1 start failed".into()))
}

/// Fit `ω + ρ t^{−b}`.
pub fn fit_power_law_stage(t: &[f64], y: &[f64], omega: f64, settings: &LmSettings) -> Result<StageFit> {
    if t.len() < MIN_STAGE_TWO_POINTS {
        return Err(Error::InsufficientData(format!("stage 2 needs {MIN_STAGE_TWO_POINTS} points, got {}", t.len())));
    }
    let bounds = Bounds::new(vec![RHO_BOUNDS.0, B_BOUNDS.0], vec![RHO_BOUNDS.1, B_BOUNDS.1]);
    let first = y[0] - omega;
    let mut starts = vec![vec![first, 0.05], vec![first, 0.5], vec![0.0, 0.0]];
    if let Some(logs) = shifted_logs(y, omega) {
        let x: Vec<f64> = t.iter().map(|t| t.ln()).collect();
        if let Some((a, s, _)) = line_fit(&x, &logs) {
            starts.push(vec![a.exp(), -s]);
        }
    }
    let model = PowerLaw { omega };
    best_of(starts, |s| lm_fit(&model, s, &bounds, t, y, settings), &bounds, 1)
        .ok_or_else(|| Error::NotConverged("every stage-2 start failed".into()))
}

struct Candidate {
    t_w: u32,
    stage1: Option<StageFit>,
    stage2: StageFit,
}

impl Candidate {
    fn rss(&self) -> f64 {
        self.stage1.as_ref().map_or(0.0, |s| s.rss) + self.stage2.rss
    }

    fn converged(&self) -> bool {
        self.stage1.as_ref().is_none_or(|s| s.converged) && self.stage2.converged
    }
}

fn evaluate(t_w: u32, t: &[f64], y: &[f64], omega: f64, settings: &LmSettings) -> Option<Candidate> {
    let split = t.partition_point(|&v| v <= t_w as f64);
    if t.len() - split < MIN_STAGE_TWO_POINTS {
        return None;
    }
    let stage1 = if t_w == 0 {
        None
    } else {
        if split < MIN_STAGE_ONE_POINTS {
            return None;
        }
        Some(fit_stretched_stage(&t[..split], &y[..split], omega, settings).ok()?)
    };
    let stage2 = fit_power_law_stage(&t[split..], &y[split..], omega, settings).ok()?;
    Some(Candidate { t_w, stage1, stage2 })
}

/// Exhaustive search over the stage boundary, fitting each stage independently.
///
/// `t` must be increasing. Ties go to the smaller `t_w`.
pub fn fit_two_stage_points(t: &[f64], y: &[f64], options: &TwoStageOptions) -> Result<TwoStageFit> {
    if t.len() != y.len() {
        return Err(Error::InvalidInput("t and y lengths differ".into()));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("lags must be strictly increasing".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("curve contains non-finite values".into()));
    }
    options.settings.validate()?;
    let mut grid = options.t_w_grid.clone();
    grid.sort_unstable();
    grid.dedup();

    let fitted: Vec<Candidate> = grid
        .par_iter()
        .map(|&t_w| evaluate(t_w, t, y, options.omega, &options.settings))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if fitted.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no feasible t_w candidate for a curve of {} points",
            t.len()
        )));
    }
    if !fitted.iter().any(Candidate::converged) {
        return Err(Error::NotConverged("no t_w candidate converged".into()));
    }
    let best = fitted
        .iter()
        .fold(None::<&Candidate>, |acc, c| match acc {
            Some(a) if a.rss() <= c.rss() => Some(a),
            _ => Some(c),
        })
        .expect("non-empty");

    let stage2 = StageTwo { rho: best.stage2.params[0], b: best.stage2.params[1] };
    let params = match &best.stage1 {
        Some(s1) => VeParams::two_stage(best.t_w, StageOne { rho: s1.params[0], b: s1.params[1], c: s1.params[2] }, stage2),
        None => VeParams::power_law(stage2),
    }
    .with_omega(options.omega);
    let stage1_rss = best.stage1.as_ref().map_or(0.0, |s| s.rss);
    let result = FitResult {
        params: FittedParams::Ve(params),
        rss: stage1_rss + best.stage2.rss,
        per_stage_rss: (stage1_rss, best.stage2.rss),
        n_points: t.len(),
        converged: best.converged(),
        iterations: best.stage1.as_ref().map_or(0, |s| s.iterations) + best.stage2.iterations,
        degenerate: best.stage2.degenerate || best.stage1.as_ref().is_some_and(|s| s.degenerate),
    };
    let candidates = fitted.iter().map(|c| CandidateRss { t_w: c.t_w, rss: c.rss() }).collect();
    Ok(TwoStageFit { best: result, candidates })
}

/// Fit a response curve, skipping lags no event reached.
pub fn fit_two_stage(curve: &ResponseCurve, options: &TwoStageOptions) -> Result<TwoStageFit> {
    let (t, y) = curve.volatility_points();
    fit_two_stage_points(&t, &y, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ve_model::ve_mean;

    fn lags(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    fn curve(p: &VeParams, n: usize) -> (Vec<f64>, Vec<f64>) {
        let t = lags(n);
        let y = t.iter().map(|&t| ve_mean(p, t).unwrap()).collect();
        (t, y)
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn table_one_round_trip() {
        let truth = VeParams::two_stage(13, StageOne { rho: 0.89e-3, b: 0.41, c: 2.81 }, StageTwo { rho: 1.06e-3, b: 0.05 });
        let (t, y) = curve(&truth, 240);
        let fit = fit_two_stage_points(&t, &y, &TwoStageOptions::default()).unwrap();
        let p = fit.best.ve().unwrap();
        assert_eq!(p.t_w, 13);
        let s1 = p.stage1.unwrap();
        assert!(rel(s1.rho, 0.89e-3) < 1e-2 && rel(s1.b, 0.41) < 1e-2 && rel(s1.c, 2.81) < 1e-2, "{s1:?}");
        assert!(rel(p.stage2.rho, 1.06e-3) < 1e-2 && rel(p.stage2.b, 0.05) < 1e-2);
        assert!(fit.best.converged);
        assert!((fit.best.rss - fit.best.per_stage_rss.0 - fit.best.per_stage_rss.1).abs() <= 1e-30);
        for c in &fit.candidates {
            assert!(fit.best.rss <= c.rss);
        }
    }

    #[test]
    fn pure_power_law_selects_zero() {
        let truth = VeParams::power_law(StageTwo { rho: 1.69e-3, b: 0.13 });
        let (t, y) = curve(&truth, 240);
        let fit = fit_two_stage_points(&t, &y, &TwoStageOptions::default()).unwrap();
        let p = fit.best.ve().unwrap();
        assert_eq!(p.t_w, 0);
        assert!(p.stage1.is_none());
        assert!(rel(p.stage2.b, 0.13) < 1e-6);
    }

    #[test]
    fn flat_curve_is_flagged() {
        let t = lags(100);
        let y = vec![1.2e-3; 100];
        let fit = fit_two_stage_points(&t, &y, &TwoStageOptions::default()).unwrap();
        let p = fit.best.ve().unwrap();
        assert!(p.stage2.b < 1e-5, "{p:?}");
        assert!(fit.best.degenerate);
    }

    #[test]
    fn too_short_curves_are_rejected() {
        let t = lags(5);
        let y = vec![1e-3; 5];
        assert!(matches!(fit_two_stage_points(&t, &y, &TwoStageOptions::default()), Err(Error::InsufficientData(_))));
        assert!(fit_stretched_stage(&t[..2], &y[..2], 0.0, &LmSettings::default()).is_err());
    }

    #[test]
    fn grid_helper() {
        assert_eq!(default_t_w_grid(5), vec![0, 3, 4, 5]);
    }
}
