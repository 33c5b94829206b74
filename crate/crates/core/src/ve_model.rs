//! The two-stage volatility-evolution (VE) model.
//!
//! After an impulse of strength ρ at `t = 0`, the volatility relaxes under a
//! time-decaying mean-reversion rate `b / t^c`:
//!
//! ```text
//! dV = ρ δ(t) dt − (b / t^c)(V − ω) dt + σ_v dW
//! ```
//!
//! Its ensemble mean is `ω + ρ K(t)` with the linear response
//! `K(t) = exp(b t^{1−c} / (c − 1))` for `c > 1` (stretched exponential) and
//! `K(t) = t^{−b}` for `c = 1` (power law). The first stage `t ≤ t_w` uses
//! `c > 1`, the second stage uses `c = 1`, each with its own `(ρ, b)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stretched-exponential stage, `t ≤ t_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOne {
    pub rho: f64,
    pub b: f64,
    pub c: f64,
}

/// Power-law stage, `t > t_w` (c is fixed at 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTwo {
    pub rho: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VeParams {
    /// Stage boundary in minutes; 0 means the power law holds from the start.
    pub t_w: u32,
    /// Present iff `t_w > 0`.
    pub stage1: Option<StageOne>,
    pub stage2: StageTwo,
    pub omega: f64,
}

impl VeParams {
    pub fn two_stage(t_w: u32, stage1: StageOne, stage2: StageTwo) -> Self {
        Self { t_w, stage1: (t_w > 0).then_some(stage1), stage2, omega: 0.0 }
    }

    pub fn power_law(stage2: StageTwo) -> Self {
        Self { t_w: 0, stage1: None, stage2, omega: 0.0 }
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        match (self.t_w, self.stage1) {
            (0, Some(_)) => return bad("stage 1 given with t_w = 0".into()),
            (t, None) if t > 0 => return bad(format!("t_w = {t} but stage 1 missing")),
            (_, Some(s)) => {
                if !(s.c > 1.0) {
                    return bad(format!("stage-1 exponent c = {} must exceed 1", s.c));
                }
                if !(s.rho > 0.0 && s.b > 0.0) {
                    return bad("stage-1 rho and b must be positive".into());
                }
            }
            _ => {}
        }
        if !(self.stage2.rho > 0.0 && self.stage2.b > 0.0) {
            return bad("stage-2 rho and b must be positive".into());
        }
        if !(self.omega >= 0.0) {
            return bad(format!("omega = {} must be non-negative", self.omega));
        }
        Ok(())
    }
}

/// Linear response `K(t)`; NaN outside `t > 0, c ≥ 1`.
pub fn response_function(b: f64, c: f64, t: f64) -> f64 {
    if !(t > 0.0) || !(c >= 1.0) {
        return f64::NAN;
    }
    if c == 1.0 {
        t.powf(-b)
    } else {
        (b * t.powf(1.0 - c) / (c - 1.0)).exp()
    }
}

pub fn stage_one_mean(s: &StageOne, omega: f64, t: f64) -> f64 {
    omega + s.rho * response_function(s.b, s.c, t)
}

pub fn stage_two_mean(s: &StageTwo, omega: f64, t: f64) -> f64 {
    omega + s.rho * t.powf(-s.b)
}

/// Ensemble-mean volatility at lag `t > 0`.
pub fn ve_mean(params: &VeParams, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("ve_mean needs t > 0, got {t}")));
    }
    if t <= params.t_w as f64 {
        let s = params
            .stage1
            .ok_or_else(|| Error::InvalidInput(format!("t_w = {} but stage 1 missing", params.t_w)))?;
        if !(s.c > 1.0) {
            return Err(Error::InvalidInput(format!("stage-1 exponent c = {} must exceed 1", s.c)));
        }
        Ok(stage_one_mean(&s, params.omega, t))
    } else {
        Ok(stage_two_mean(&params.stage2, params.omega, t))
    }
}

/// Exponential-relaxation baseline `ω + exp(a − θ t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonFitParams {
    pub a: f64,
    pub theta: f64,
    pub omega: f64,
}

pub fn heston_mean(p: &HestonFitParams, t: f64) -> f64 {
    p.omega + (p.a - p.theta * t).exp()
}

/// Euler–Maruyama settings for one VE stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdeConfig {
    pub rho: f64,
    pub b: f64,
    pub c: f64,
    pub omega: f64,
    /// Diffusion scale, volatility units per √minute.
    pub sigma_v: f64,
    /// Step in minutes; `1 / dt` must be an integer.
    pub dt: f64,
    /// Minute at which paths start from the deterministic response `ω + ρ K(t_start)`.
    pub t_start: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            rho: 1.06e-3,
            b: 0.05,
            c: 1.0,
            omega: 0.0,
            sigma_v: 0.0,
            dt: 1e-3,
            t_start: 1.0,
            t_end: 100.0,
            n_paths: 1,
            seed: 0,
        }
    }
}

impl SdeConfig {
    fn steps_per_minute(&self) -> Result<u64> {
        let finite = [self.rho, self.b, self.c, self.omega, self.sigma_v, self.dt, self.t_start, self.t_end]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite simulator parameter".into()));
        }
        if !(self.dt > 0.0) || self.dt >= 1.0 {
            return Err(Error::InvalidInput(format!("dt = {} must lie in (0, 1) minutes", self.dt)));
        }
        let m = (1.0 / self.dt).round();
        if ((1.0 / self.dt) - m).abs() > 1e-9 * m {
            return Err(Error::InvalidInput(format!("dt = {} does not divide one minute", self.dt)));
        }
        if self.sigma_v < 0.0 || self.c < 1.0 || self.b < 0.0 || self.omega < 0.0 {
            return Err(Error::InvalidInput("sigma_v, b, omega must be >= 0 and c >= 1".into()));
        }
        if !(self.t_start > 0.0) || self.t_end < self.t_start + self.dt {
            return Err(Error::InvalidInput(format!(
                "need 0 < t_start and t_end >= t_start + dt (t_start = {}, t_end = {})",
                self.t_start, self.t_end
            )));
        }
        Ok(m as u64)
    }

    /// Integer minutes at which paths are sampled.
    pub fn sample_times(&self) -> Vec<f64> {
        let first = self.t_start.ceil().max(1.0) as u64;
        let last = self.t_end.floor() as u64;
        (first..=last).map(|t| t as f64).collect()
    }

    /// Ensemble-mean solution the simulator approximates.
    pub fn analytic_mean(&self, t: f64) -> f64 {
        self.omega + self.rho * response_function(self.b, self.c, t)
    }
}

/// Simulated volatility at integer minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPaths {
    pub times: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
}

/// One path from stream `stream` of the seed's counter-based generator.
pub fn simulate_path(config: &SdeConfig, stream: u64) -> Result<Vec<f64>> {
    let m = config.steps_per_minute()?;
    Ok(run_path(config, m, stream))
}

fn run_path(config: &SdeConfig, steps_per_minute: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let dt = 1.0 / steps_per_minute as f64;
    let noise = config.sigma_v * dt.sqrt();
    let start = (config.t_start * steps_per_minute as f64).round() as u64;
    let end = (config.t_end * steps_per_minute as f64).floor() as u64;
    let times = config.sample_times();
    let mut out = Vec::with_capacity(times.len());
    let mut next_sample = times.iter().map(|t| *t as u64 * steps_per_minute).peekable();

    let t0 = start as f64 * dt;
    let mut v = config.analytic_mean(t0).max(0.0);
    let mut k = start;
    loop {
        while next_sample.peek() == Some(&k) {
            out.push(v);
            next_sample.next();
        }
        if k >= end {
            break;
        }
        let t = k as f64 * dt;
        let rate = if config.c == 1.0 { config.b / t } else { config.b / t.powf(config.c) };
        let z: f64 = if noise > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
        v += -rate * (v - config.omega) * dt + noise * z;
        if v < 0.0 {
            v = 0.0;
        }
        k += 1;
    }
    out
}

/// Run `n_paths` independent paths. Path `i` draws from stream `i`, so the
/// output does not depend on how paths are scheduled across threads.
pub fn simulate(config: &SdeConfig) -> Result<SimulatedPaths> {
    let m = config.steps_per_minute()?;
    if config.n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be positive".into()));
    }
    let paths: Vec<Vec<f64>> = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| run_path(config, m, i))
        .collect();
    Ok(SimulatedPaths { times: config.sample_times(), paths })
}

/// Per-time ensemble mean and standard error, reduced in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

pub fn ensemble_stats(sim: &SimulatedPaths) -> EnsembleStats {
    let n = sim.paths.len() as f64;
    let mut mean = vec![0.0; sim.times.len()];
    for path in &sim.paths {
        for (m, v) in mean.iter_mut().zip(path) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; sim.times.len()];
    for path in &sim.paths {
        for ((s, v), m) in var.iter_mut().zip(path).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let stderr = var
        .iter()
        .map(|s| if n > 1.0 { (s / (n - 1.0) / n).sqrt() } else { 0.0 })
        .collect();
    EnsembleStats { times: sim.times.clone(), mean, stderr }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_s2() -> VeParams {
        VeParams::two_stage(13, StageOne { rho: 0.89e-3, b: 0.41, c: 2.81 }, StageTwo { rho: 1.06e-3, b: 0.05 })
    }

    #[test]
    fn zero_reversion_is_flat() {
        let p = VeParams::two_stage(5, StageOne { rho: 2e-3, b: 0.0, c: 2.0 }, StageTwo { rho: 3e-3, b: 0.0 });
        for t in [0.5, 1.0, 5.0] {
            assert_eq!(ve_mean(&p, t).unwrap(), 2e-3);
        }
        for t in [5.5, 20.0, 240.0] {
            assert_eq!(ve_mean(&p, t).unwrap(), 3e-3);
        }
    }

    #[test]
    fn hand_evaluated_stages() {
        let p = table1_s2();
        // 1.06e-3 * 100^-0.05
        assert!((ve_mean(&p, 100.0).unwrap() - 8.419879e-4).abs() < 1e-10);
        // 0.89e-3 * exp(0.41 / 1.81)
        assert!((ve_mean(&p, 1.0).unwrap() - 1.116262e-3).abs() < 1e-9);
        assert!(ve_mean(&p, 0.0).is_err());
    }

    #[test]
    fn invalid_stage_one_exponent() {
        let p = VeParams::two_stage(5, StageOne { rho: 1e-3, b: 0.4, c: 1.0 }, StageTwo { rho: 1e-3, b: 0.1 });
        assert!(ve_mean(&p, 2.0).is_err());
        assert!(ve_mean(&p, 6.0).is_ok());
        assert!(p.validate().is_err());
        assert!(table1_s2().validate().is_ok());
    }

    #[test]
    fn response_function_properties() {
        assert_eq!(response_function(0.3, 1.0, 1.0), 1.0);
        assert!((response_function(0.41, 2.81, 1e6) - 1.0).abs() < 1e-6);
        for &(b, c) in &[(0.41, 2.81), (0.05, 1.0), (1.2, 1.5)] {
            let mut prev = f64::INFINITY;
            for i in 1..500 {
                let k = response_function(b, c, i as f64 * 0.37);
                assert!(k < prev);
                prev = k;
            }
        }
        assert!(response_function(0.1, 0.5, 1.0).is_nan());
    }

    #[test]
    fn mean_equals_rho_times_response() {
        let p = table1_s2();
        let s1 = p.stage1.unwrap();
        for t in 1..=240 {
            let t = t as f64;
            let expected = if t <= 13.0 {
                s1.rho * response_function(s1.b, s1.c, t)
            } else {
                p.stage2.rho * response_function(p.stage2.b, 1.0, t)
            };
            assert_eq!(ve_mean(&p, t).unwrap(), expected);
        }
    }

    #[test]
    fn heston_forms() {
        let p = HestonFitParams { a: -8.2537, theta: 0.3506, omega: 0.0011 };
        assert_eq!(heston_mean(&p, 0.0), 0.0011 + (-8.2537f64).exp());
        assert!((heston_mean(&p, 1.0) - 1.283316e-3).abs() < 1e-9);
        assert!((heston_mean(&p, 1e4) - 0.0011).abs() < 1e-300);
        for t in [0.0, 3.0, 17.5] {
            let lhs = (heston_mean(&p, t) - p.omega).ln();
            assert!((lhs - (p.a - p.theta * t)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_impulse_stays_zero() {
        let cfg = SdeConfig { rho: 0.0, sigma_v: 0.0, dt: 0.01, t_end: 20.0, ..Default::default() };
        let sim = simulate(&cfg).unwrap();
        assert!(sim.paths[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_path_tracks_power_law() {
        let cfg = SdeConfig { dt: 1e-3, t_end: 100.0, ..Default::default() };
        let sim = simulate(&cfg).unwrap();
        for (t, v) in sim.times.iter().zip(&sim.paths[0]) {
            let exact = cfg.analytic_mean(*t);
            assert!(((v - exact) / exact).abs() < 1e-3, "t {t}: {v} vs {exact}");
        }
    }

    #[test]
    fn config_validation() {
        let ok = SdeConfig::default();
        assert!(simulate(&SdeConfig { dt: 1.0, ..ok }).is_err());
        assert!(simulate(&SdeConfig { dt: 0.3, ..ok }).is_err());
        assert!(simulate(&SdeConfig { b: f64::NAN, ..ok }).is_err());
        assert!(simulate(&SdeConfig { t_end: 0.5, ..ok }).is_err());
        assert!(simulate(&SdeConfig { n_paths: 0, ..ok }).is_err());
    }

    #[test]
    fn seeded_runs_are_reproducible_and_non_negative() {
        let cfg = SdeConfig { sigma_v: 5e-4, dt: 0.01, t_end: 30.0, n_paths: 20, seed: 9, ..Default::default() };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.paths.iter().flatten().all(|&v| v >= 0.0));
        assert_ne!(a.paths[0], a.paths[1]);
        // path i only depends on its stream
        assert_eq!(simulate_path(&cfg, 3).unwrap(), a.paths[3]);
    }
}
