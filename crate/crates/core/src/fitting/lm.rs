//! Bound-constrained Levenberg–Marquardt.
//!
//! Minimises `Σ r_i(p)²` with Marquardt's diagonal scaling. Bounds are
//! enforced by projecting every trial point onto the box.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum JacobianMode {
    Analytic,
    CentralDifference { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Threshold on the projected gradient cosine `max_j |J_jᵀ r| / (‖J_j‖ ‖r‖)`.
    pub gradient_tolerance: f64,
    /// Threshold on the componentwise relative step.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub jacobian: JacobianMode,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            jacobian: JacobianMode::Analytic,
        }
    }
}

impl LmSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.gradient_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && match self.jacobian {
                JacobianMode::Analytic => true,
                JacobianMode::CentralDifference { step } => step > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid LM settings {self:?}")))
        }
    }
}

/// A residual vector `r(p)` to be driven towards zero.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64], out: &mut [f64]);
    /// Fill `∂r_i/∂p_j`; return `false` when no analytic Jacobian exists.
    fn jacobian(&self, _p: &[f64], _out: &mut DMatrix<f64>) -> bool {
        false
    }
    /// Norm of the data the residuals are taken against; sets the rounding
    /// floor of the gradient test. Zero disables the floor.
    fn data_norm(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Self::new(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    pub fn project(&self, p: &mut [f64]) {
        for ((x, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.lower).zip(&self.upper).all(|((x, lo), hi)| x >= lo && x <= hi)
    }

    /// Whether `p[j]` sits within a small fraction of the range above its lower bound.
    pub fn pinned_low(&self, p: &[f64], j: usize) -> bool {
        let range = (self.upper[j] - self.lower[j]).min(1.0);
        p[j] - self.lower[j] <= 1e-6 * range
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final projected gradient cosine.
    pub gradient_measure: f64,
    /// RSS at the start and after every accepted step.
    pub rss_history: Vec<f64>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<P: LeastSquares>(problem: &P, p: &[f64], bounds: &Bounds, mode: JacobianMode, out: &mut DMatrix<f64>) {
    if let JacobianMode::Analytic = mode {
        if problem.jacobian(p, out) {
            return;
        }
    }
    let step = match mode {
        JacobianMode::CentralDifference { step } => step,
        JacobianMode::Analytic => 1e-6,
    };
    central_difference(problem, p, bounds, step, out);
}

/// Finite-difference Jacobian, central where the box allows it.
pub fn central_difference<P: LeastSquares>(problem: &P, p: &[f64], bounds: &Bounds, step: f64, out: &mut DMatrix<f64>) {
    let m = problem.n_residuals();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut x = p.to_vec();
    for j in 0..p.len() {
        let h = step * (p[j].abs() + step);
        let up = (p[j] + h).min(bounds.upper[j]);
        let down = (p[j] - h).max(bounds.lower[j]);
        x[j] = up;
        problem.residuals(&x, &mut plus);
        x[j] = down;
        problem.residuals(&x, &mut minus);
        x[j] = p[j];
        let width = up - down;
        for i in 0..m {
            out[(i, j)] = (plus[i] - minus[i]) / width;
        }
    }
}

/// Components whose descent direction does not push through an active bound.
fn free_set(g: &DVector<f64>, p: &[f64], bounds: &Bounds) -> Vec<usize> {
    (0..p.len())
        .filter(|&j| {
            let descent = -g[j];
            !((p[j] <= bounds.lower[j] && descent <= 0.0) || (p[j] >= bounds.upper[j] && descent >= 0.0))
        })
        .collect()
}

/// Largest cosine between a free Jacobian column and the residual vector,
/// after discounting gradient components at the rounding level of the data.
fn gradient_measure(jac: &DMatrix<f64>, g: &DVector<f64>, free: &[usize], residual_norm: f64, data_norm: f64) -> f64 {
    if residual_norm == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for &j in free {
        let norm = jac.column(j).norm();
        if norm > 0.0 {
            let noise = 16.0 * f64::EPSILON * norm * data_norm;
            worst = worst.max((g[j].abs() - noise).max(0.0) / (norm * residual_norm));
        }
    }
    worst
}

/// Run Levenberg–Marquardt from `init`, which must lie inside `bounds`.
///
/// Converged means the gradient measure fell below tolerance, or the
/// residual norm dropped to rounding level relative to the start.
pub fn minimize<P: LeastSquares>(problem: &P, init: &[f64], bounds: &Bounds, settings: &LmSettings) -> Result<LmOutcome> {
    settings.validate()?;
    let n = problem.n_params();
    let m = problem.n_residuals();
    if init.len() != n || bounds.lower.len() != n {
        return Err(Error::InvalidInput("parameter/bounds length mismatch".into()));
    }
    if m < n {
        return Err(Error::InsufficientData(format!("{m} residuals for {n} parameters")));
    }
    if !bounds.contains(init) {
        return Err(Error::InvalidInput(format!("initial point {init:?} outside bounds")));
    }

    let mut x = init.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&x, &mut r);
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::NonFinite { params: x });
    }
    let exact_level = cost * 1e-24;
    let data_norm = problem.data_norm();
    let mut lambda = settings.initial_damping;
    let mut jac = DMatrix::zeros(m, n);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut iterations = 0;
    let mut measure;
    let mut rss_history = vec![cost];

    loop {
        jacobian(problem, &x, bounds, settings.jacobian, &mut jac);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { params: x });
        }
        let g = jac.tr_mul(&DVector::from_column_slice(&r));
        let free = free_set(&g, &x, bounds);
        measure = gradient_measure(&jac, &g, &free, cost.sqrt(), data_norm);
        if cost <= exact_level || measure <= settings.gradient_tolerance || iterations >= settings.max_iterations {
            break;
        }
        iterations += 1;

        let k = free.len();
        let a = DMatrix::from_fn(k, k, |i, j| jac.column(free[i]).dot(&jac.column(free[j])));
        let neg_g = DVector::from_fn(k, |i, _| -g[free[i]]);
        let max_diag = (0..k).map(|j| a[(j, j)]).fold(0.0, f64::max);
        let floor = (max_diag * 1e-12).max(f64::MIN_POSITIVE);
        let mut accepted = false;
        let mut small_step = false;
        while lambda < 1e20 {
            let mut damped = a.clone();
            for j in 0..k {
                damped[(j, j)] += lambda * a[(j, j)].max(floor);
            }
            let delta = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&neg_g),
                None => match damped.lu().solve(&neg_g) {
                    Some(d) => d,
                    None => {
                        lambda *= settings.damping_up;
                        continue;
                    }
                },
            };
            trial.copy_from_slice(&x);
            for (i, &j) in free.iter().enumerate() {
                trial[j] = x[j] + delta[i];
            }
            bounds.project(&mut trial);
            let rel_step = (0..n)
                .map(|j| (trial[j] - x[j]).abs() / (x[j].abs() + settings.step_tolerance))
                .fold(0.0, f64::max);
            if rel_step == 0.0 {
                small_step = true;
                break;
            }
            problem.residuals(&trial, &mut r_trial);
            let trial_cost = sum_sq(&r_trial);
            if trial_cost.is_finite() && trial_cost < cost {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = trial_cost;
                rss_history.push(cost);
                lambda = (lambda * settings.damping_down).max(1e-15);
                accepted = true;
                small_step = rel_step <= settings.step_tolerance;
                break;
            }
            if rel_step <= settings.step_tolerance {
                small_step = true;
                break;
            }
            lambda *= settings.damping_up;
        }
        if !accepted || small_step {
            if accepted {
                jacobian(problem, &x, bounds, settings.jacobian, &mut jac);
                let g = jac.tr_mul(&DVector::from_column_slice(&r));
                let free = free_set(&g, &x, bounds);
                measure = gradient_measure(&jac, &g, &free, cost.sqrt(), data_norm);
            }
            break;
        }
    }

    let converged = cost <= exact_level || measure <= settings.gradient_tolerance;
    Ok(LmOutcome { params: x, rss: cost, iterations, converged, gradient_measure: measure, rss_history })
}
