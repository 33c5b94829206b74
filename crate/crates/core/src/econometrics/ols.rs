use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{f_upper_tail, student_t_two_sided};

/// Relative size of an R diagonal entry below which a column counts as dependent.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub t_pvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub r_squared: f64,
    /// Overall F statistic; slopes only when the design has an intercept.
    pub f_stat: f64,
    pub f_pvalue: f64,
    pub n: usize,
    pub k: usize,
    pub has_intercept: bool,
}

/// Build a design matrix from columns, optionally prefixed with a column of ones.
pub fn design(columns: &[&[f64]], intercept: bool) -> DMatrix<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    let k = columns.len() + usize::from(intercept);
    DMatrix::from_fn(n, k, |i, j| match (intercept, j) {
        (true, 0) => 1.0,
        (true, j) => columns[j - 1][i],
        (false, j) => columns[j][i],
    })
}

/// Least squares of `y` on the columns of `x` via Householder QR.
///
/// `has_intercept` declares that the first column of `x` is constant, which
/// switches the R² and F test to their centred forms.
pub fn ols(y: &[f64], x: &DMatrix<f64>, has_intercept: bool) -> Result<OlsResult> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidInput(format!("{} responses for {n} design rows", y.len())));
    }
    if k == 0 {
        return Err(Error::InvalidInput("empty design".into()));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} observations for {k} regressors")));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite regression input".into()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if let Some(column) = (0..k).find(|&j| r[(j, j)].abs() <= RANK_TOLERANCE * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient { column });
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().tr_mul(&yv);
    let beta = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient { column: k - 1 })?;
    let residuals: Vec<f64> = (&yv - x * &beta).iter().copied().collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();

    let dof = (n - k) as f64;
    let sigma2 = rss / dof;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::RankDeficient { column: k - 1 })?;
    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ
    let cov_diag: Vec<f64> = (0..k).map(|j| r_inv.row(j).norm_squared()).collect();
    let std_errors: Vec<f64> = cov_diag.iter().map(|c| (sigma2 * c).sqrt()).collect();
    let t_stats: Vec<f64> = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| if *se > 0.0 { b / se } else if *b == 0.0 { 0.0 } else { b.signum() * f64::INFINITY })
        .collect();
    let t_pvalues = t_stats.iter().map(|t| student_t_two_sided(*t, dof)).collect();

    let tss = if has_intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };
    let df_model = if has_intercept { k - 1 } else { k };
    let (f_stat, f_pvalue) = if df_model == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let explained = (tss - rss).max(0.0) / df_model as f64;
        let f = if rss > 0.0 { explained / sigma2 } else if explained > 0.0 { f64::INFINITY } else { f64::NAN };
        (f, f_upper_tail(f, df_model as f64, dof))
    };

    Ok(OlsResult {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_stats,
        t_pvalues,
        residuals,
        rss,
        r_squared,
        f_stat,
        f_pvalue,
        n,
        k,
        has_intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// β = (XᵀX)⁻¹ Xᵀ y by explicit inversion.
    fn normal_equations(y: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
        let xtx = x.transpose() * x;
        let inv = xtx.try_inverse().unwrap();
        (inv * x.transpose() * DVector::from_column_slice(y)).iter().copied().collect()
    }

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = ols(&y, &design(&[&x], true), true).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12 && (fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.rss < 1e-24);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..50).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
            let x = design(&[&cols[0], &cols[1]], true);
            let fit = ols(&y, &x, true).unwrap();
            for (a, b) in fit.coefficients.iter().zip(normal_equations(&y, &x)) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
            // residuals orthogonal to every column
            for j in 0..3 {
                let dot: f64 = x.column(j).iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-8 * x.column(j).norm() * fit.rss.sqrt().max(1.0));
            }
            assert!((fit.rss - fit.residuals.iter().map(|e| e * e).sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn size_under_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut accepted = 0;
        for _ in 0..100 {
            let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..50).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
            let fit = ols(&y, &design(&[&cols[0], &cols[1]], true), true).unwrap();
            accepted += usize::from(fit.f_pvalue > 0.05);
        }
        assert!(accepted >= 90, "{accepted}");
    }

    #[test]
    fn rejects_bad_designs() {
        let x: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let y = x.clone();
        assert!(matches!(ols(&y, &design(&[&x, &twice], true), true), Err(Error::RankDeficient { column: 2 })));
        assert!(matches!(ols(&y[..2], &design(&[&x[..2]], true), true), Err(Error::InsufficientData(_))));
    }
}
