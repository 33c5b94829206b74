//! Curve families used by the fits, with analytic gradients.

use nalgebra::DMatrix;

use super::lm::LeastSquares;

/// A parameterised curve `t ↦ f(p, t)`.
pub trait CurveModel: Sync {
    fn n_params(&self) -> usize;
    fn value(&self, p: &[f64], t: f64) -> f64;
    /// `∂f/∂p` at `t`; `false` if the model has no analytic gradient.
    fn gradient(&self, _p: &[f64], _t: f64, _out: &mut [f64]) -> bool {
        false
    }
}

/// `ω + ρ exp(b t^{1−c} / (c − 1))`, parameters `[ρ, b, c]`.
#[derive(Debug, Clone, Copy)]
pub struct StretchedExponential {
    pub omega: f64,
}

impl CurveModel for StretchedExponential {
    fn n_params(&self) -> usize {
        3
    }

    fn value(&self, p: &[f64], t: f64) -> f64 {
        let (rho, b, c) = (p[0], p[1], p[2]);
        self.omega + rho * (b * t.powf(1.0 - c) / (c - 1.0)).exp()
    }

    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) -> bool {
        let (rho, b, c) = (p[0], p[1], p[2]);
        let s = t.powf(1.0 - c) / (c - 1.0);
        let u = b * s;
        let k = u.exp();
        out[0] = k;
        out[1] = rho * k * s;
        out[2] = -rho * k * u * (t.ln() + 1.0 / (c - 1.0));
        true
    }
}

/// `ω + ρ t^{−b}`, parameters `[ρ, b]`.
#[derive(Debug, Clone, Copy)]
pub struct PowerLaw {
    pub omega: f64,
}

impl CurveModel for PowerLaw {
    fn n_params(&self) -> usize {
        2
    }

    fn value(&self, p: &[f64], t: f64) -> f64 {
        self.omega + p[0] * t.powf(-p[1])
    }

    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) -> bool {
        let k = t.powf(-p[1]);
        out[0] = k;
        out[1] = -p[0] * k * t.ln();
        true
    }
}

/// `ω + exp(a − θ t)`, parameters `[a, θ]`.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialDecay {
    pub omega: f64,
}

impl CurveModel for ExponentialDecay {
    fn n_params(&self) -> usize {
        2
    }

    fn value(&self, p: &[f64], t: f64) -> f64 {
        self.omega + (p[0] - p[1] * t).exp()
    }

    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) -> bool {
        let e = (p[0] - p[1] * t).exp();
        out[0] = e;
        out[1] = -t * e;
        true
    }
}

/// Residuals `y_i − f(p, t_i)` of a curve against data.
pub struct CurveProblem<'a, M: CurveModel> {
    pub model: &'a M,
    pub t: &'a [f64],
    pub y: &'a [f64],
}

impl<M: CurveModel> LeastSquares for CurveProblem<'_, M> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn n_residuals(&self) -> usize {
        self.t.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for ((o, &t), &y) in out.iter_mut().zip(self.t).zip(self.y) {
            *o = y - self.model.value(p, t);
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) -> bool {
        let mut g = vec![0.0; self.model.n_params()];
        for (i, &t) in self.t.iter().enumerate() {
            if !self.model.gradient(p, t, &mut g) {
                return false;
            }
            for (j, gj) in g.iter().enumerate() {
                out[(i, j)] = -gj;
            }
        }
        true
    }

    fn data_norm(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
