//! Synthetic minute-bar markets with injected post-event volatility responses.
//!
//! Each event day carries one jump at a fixed minute, followed by a response
//! drawn from the VE stochastic model: the stage-one path up to the
//! boundary and the stage-two path after it. Returns take a random sign, so
//! the absolute return equals the simulated volatility. Exogenous events get
//! a news timestamp within one minute of the jump.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventClass;
use crate::market_data::{format_timestamp, Bar, SessionCalendar};
use crate::ve_model::{simulate_path, ve_mean, SdeConfig, StageOne, StageTwo, VeParams};

/// Threshold at which the default generator's jumps are cleanly separated
/// from both the background and the post-event response.
pub const CALIBRATED_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    /// First trading day, `YYYY-MM-DD`; weekends are skipped.
    pub start_date: String,
    pub n_days: usize,
    pub n_events: usize,
    /// Share of events synchronised with news.
    pub exogenous_fraction: f64,
    /// Return index within the day at which the jump occurs.
    pub event_offset: usize,
    pub jump: f64,
    pub endogenous: VeParams,
    pub exogenous: VeParams,
    /// Diffusion of the response paths, per √minute.
    pub sigma_v: f64,
    pub dt: f64,
    /// Typical background volatility.
    pub background: f64,
    /// Relative dispersion of the background volatility.
    pub background_spread: f64,
    /// Unrelated news releases kept at least five minutes away from events.
    pub extra_news: usize,
    pub start_price: f64,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            start_date: "2016-01-04".into(),
            n_days: 60,
            n_events: 50,
            exogenous_fraction: 0.5,
            event_offset: 0,
            jump: 1e-2,
            endogenous: VeParams::two_stage(
                12,
                StageOne { rho: 1.26e-3, b: 0.42, c: 2.37 },
                StageTwo { rho: 1.73e-3, b: 0.10 },
            ),
            exogenous: VeParams::power_law(StageTwo { rho: 1.69e-3, b: 0.13 }),
            sigma_v: 5e-6,
            dt: 0.01,
            background: 5e-4,
            background_spread: 0.3,
            extra_news: 20,
            start_price: 3000.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub timestamp: i64,
    pub class: EventClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub calendar: SessionCalendar,
    pub bars: Vec<Bar>,
    pub news: Vec<i64>,
    pub injected: Vec<InjectedEvent>,
}

impl SyntheticMarket {
    pub fn bars_csv(&self) -> String {
        let mut s = String::from("timestamp,price,volume\n");
        for b in &self.bars {
            s.push_str(&format!("{},{:.6},{}\n", format_timestamp(b.timestamp), b.price, b.volume));
        }
        s
    }

    pub fn news_csv(&self) -> String {
        let mut s = String::from("timestamp\n");
        for n in &self.news {
            s.push_str(&format_timestamp(*n));
            s.push('\n');
        }
        s
    }

    pub fn injected_csv(&self) -> String {
        let mut s = String::from("timestamp,class\n");
        for e in &self.injected {
            s.push_str(&format!("{},{}\n", format_timestamp(e.timestamp), e.class.as_str()));
        }
        s
    }
}

fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut days = Vec::with_capacity(n);
    let mut d = start;
    while days.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d += Duration::days(1);
    }
    days
}

/// Post-event volatility at lags `1..=horizon` for one event; the analytic
/// mean when `sigma_v` is zero.
fn response_path(params: &VeParams, cfg: &MarketConfig, horizon: usize, stream: u64) -> Result<Vec<f64>> {
    if cfg.sigma_v == 0.0 {
        return (1..=horizon).map(|t| ve_mean(params, t as f64)).collect();
    }
    let base = SdeConfig {
        omega: params.omega,
        sigma_v: cfg.sigma_v,
        dt: cfg.dt,
        t_start: 1.0,
        t_end: horizon as f64,
        n_paths: 1,
        seed: cfg.seed,
        ..SdeConfig::default()
    };
    let late = simulate_path(&SdeConfig { rho: params.stage2.rho, b: params.stage2.b, c: 1.0, ..base }, 2 * stream + 1)?;
    let mut out = late;
    if let Some(s1) = params.stage1 {
        let t_w = (params.t_w as usize).min(horizon);
        if t_w >= 2 {
            let early = simulate_path(&SdeConfig { rho: s1.rho, b: s1.b, c: s1.c, t_end: t_w as f64, ..base }, 2 * stream)?;
            out[..t_w].copy_from_slice(&early);
        } else if t_w == 1 {
            out[0] = s1.rho * crate::ve_model::response_function(s1.b, s1.c, 1.0);
        }
    }
    Ok(out)
}

/// Generate a market on the Shanghai calendar.
pub fn generate_market(cfg: &MarketConfig) -> Result<SyntheticMarket> {
    let start = NaiveDate::parse_from_str(&cfg.start_date, "%Y-%m-%d")
        .map_err(|e| Error::InvalidInput(format!("start_date `{}`: {e}", cfg.start_date)))?;
    if cfg.n_events > cfg.n_days {
        return Err(Error::InvalidInput("at most one event per day".into()));
    }
    if !(0.0..=1.0).contains(&cfg.exogenous_fraction) {
        return Err(Error::InvalidInput("exogenous_fraction must lie in [0, 1]".into()));
    }
    if !(cfg.start_price > 0.0) || !(cfg.background >= 0.0) || !(cfg.jump > 0.0) {
        return Err(Error::InvalidInput("start_price and jump must be positive, background non-negative".into()));
    }
    cfg.endogenous.validate()?;
    cfg.exogenous.validate()?;
    let calendar = SessionCalendar::shanghai();
    let returns_per_day: usize = calendar.sessions().iter().map(|(o, c)| (c - o) as usize).sum();
    if cfg.event_offset + 2 > returns_per_day {
        return Err(Error::InvalidInput("event_offset leaves no post-event minutes".into()));
    }
    let horizon = returns_per_day - 1 - cfg.event_offset;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let days = trading_days(start, cfg.n_days);
    let mut event_days: Vec<usize> = (0..cfg.n_days).collect();
    event_days.shuffle(&mut rng);
    event_days.truncate(cfg.n_events);
    let n_exo = (cfg.n_events as f64 * cfg.exogenous_fraction).round() as usize;
    // day -> (event number, class)
    let mut plan: Vec<Option<(usize, EventClass)>> = vec![None; cfg.n_days];
    for (k, &d) in event_days.iter().enumerate() {
        let class = if k < n_exo { EventClass::Exogenous } else { EventClass::Endogenous };
        plan[d] = Some((k, class));
    }

    let mut bars = Vec::with_capacity(cfg.n_days * (returns_per_day + calendar.sessions().len()));
    let mut news = Vec::new();
    let mut injected = Vec::new();
    let mut event_minutes = Vec::new();
    let mut price = cfg.start_price;
    let mut ar_state = 0.0;
    for (d, date) in days.iter().enumerate() {
        let midnight = date.and_hms_opt(0, 0, 0).expect("valid midnight").and_utc().timestamp() / 60;
        let mut vol: Vec<f64> = (0..returns_per_day)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                cfg.background * (1.0 + cfg.background_spread * z).abs()
            })
            .collect();
        if let Some((k, class)) = plan[d] {
            let params = match class {
                EventClass::Endogenous => &cfg.endogenous,
                EventClass::Exogenous => &cfg.exogenous,
            };
            vol[cfg.event_offset] = cfg.jump;
            let path = response_path(params, cfg, horizon, k as u64)?;
            vol[cfg.event_offset + 1..].copy_from_slice(&path);
        }
        let mut r = 0;
        for &(open, close) in calendar.sessions() {
            for m in open..=close {
                let ts = midnight + m as i64;
                let within = (m - open) as f64;
                if m > open {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    price *= (sign * vol[r]).exp();
                    if r == cfg.event_offset {
                        if let Some((_, class)) = plan[d] {
                            injected.push(InjectedEvent { timestamp: ts, class });
                            event_minutes.push(ts);
                            if class == EventClass::Exogenous {
                                news.push(ts + rng.random_range(-1..=1));
                            }
                        }
                    }
                    r += 1;
                }
                // U-shaped intraday log-volume with AR(1) deviations
                let session_len = (close - open) as f64;
                let u = within / session_len - 0.5;
                ar_state = 0.6 * ar_state + 0.3 * rng.sample::<f64, _>(StandardNormal);
                let log_volume = 9.0 + 2.0 * u * u + ar_state;
                bars.push(Bar { timestamp: ts, price, volume: log_volume.exp().round().max(1.0) as u64 });
            }
        }
    }

    let mut placed = 0;
    let mut attempts = 0;
    while placed < cfg.extra_news && attempts < 100 * (cfg.extra_news + 1) {
        attempts += 1;
        let ts = bars[rng.random_range(0..bars.len())].timestamp;
        if event_minutes.iter().all(|e| (e - ts).abs() >= 5) {
            news.push(ts);
            placed += 1;
        }
    }
    news.sort_unstable();
    news.dedup();
    Ok(SyntheticMarket { calendar, bars, news, injected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{classify_events, detect_events, DetectOptions};
    use crate::market_data::{parse_bars, parse_news, MarketSeries};

    #[test]
    fn deterministic_and_parseable() {
        let cfg = MarketConfig { n_days: 6, n_events: 4, ..Default::default() };
        let a = generate_market(&cfg).unwrap();
        let b = generate_market(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bars.len(), 6 * 242);
        assert_eq!(parse_bars(&a.bars_csv()).unwrap().len(), a.bars.len());
        assert_eq!(parse_news(&a.news_csv()).unwrap(), a.news);
    }

    #[test]
    fn injected_events_are_found_and_classified() {
        let market = generate_market(&MarketConfig::default()).unwrap();
        let series = MarketSeries::from_bars(market.bars.clone(), market.calendar.clone()).unwrap();
        let events = detect_events(&series, CALIBRATED_THRESHOLD, &DetectOptions::default()).unwrap();
        let events = classify_events(&series, &events, &market.news);
        let mut found = 0;
        for inj in &market.injected {
            if let Some(e) = events.events.iter().find(|e| series.timestamp[e.index] == inj.timestamp) {
                found += 1;
                assert_eq!(e.class, inj.class);
            }
        }
        assert_eq!(found, 50);
        assert_eq!(events.len(), 50);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_market(&MarketConfig { n_events: 10, n_days: 5, ..Default::default() }).is_err());
        assert!(generate_market(&MarketConfig { start_date: "soon".into(), ..Default::default() }).is_err());
    }
}
