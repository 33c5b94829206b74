//! Volatility evolution after extreme events in minute-bar market data.
//!
//! The crate is organised along the analysis pipeline:
//!
//! * [`market_data`] ingests minute bars and derives log-returns, volatility
//!   (absolute return) and log-volume on a trading-session calendar.
//! * [`events`] detects extreme events, splits them into endogenous and
//!   exogenous classes against news timestamps and builds event-aligned
//!   response curves.
//! * [`ve_model`] holds the two-stage volatility-evolution solution, the
//!   Heston-style exponential baseline and an Euler–Maruyama simulator.
//! * [`fitting`] provides Levenberg–Marquardt least squares and the
//!   two-stage fitting protocol.
//! * [`econometrics`] runs OLS, ADF, VAR/Granger and the volume
//!   decomposition used to explain the two stages.
//! * [`synth`] generates synthetic markets with known injected responses.

pub mod econometrics;
pub mod error;
pub mod events;
pub mod fitting;
pub mod market_data;
pub mod special;
pub mod synth;
pub mod ve_model;

pub use error::{Error, Result};
pub use events::{ClassFilter, Event, EventClass, EventSet, ResponseCurve};
pub use fitting::{FitResult, FittedParams, LmSettings};
pub use market_data::{MarketSeries, SessionCalendar};
pub use ve_model::{HestonFitParams, SdeConfig, StageOne, StageTwo, VeParams};
