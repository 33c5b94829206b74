//! Regression-based tests of the two-stage explanation: OLS, ADF, VAR and
//! Granger causality, intraday volume detrending and the ARMA split of
//! volume into informed and uninformed parts.

mod adf;
mod ols;
mod var;
mod volume;

pub use adf::{adf_test, critical_value_5pct, AdfResult};
pub use ols::{design, ols, OlsResult};
pub use var::{granger_test, var_fit_aic, Direction, GrangerResult, VarEquation, VarModel};
pub use volume::{
    arma_fit, detrend_volume, mdh_decompose, select_arma, vv_regression, ArmaFit, ArmaOrders, Detrended,
    VolumeDecomposition, VvRegression,
};
