//! Extreme-event detection, news-based classification and event-aligned
//! response curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::MarketSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Endogenous,
    Exogenous,
}

impl EventClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::Endogenous => "endogenous",
            EventClass::Exogenous => "exogenous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassFilter {
    All,
    Endogenous,
    Exogenous,
}

impl ClassFilter {
    pub fn admits(self, class: EventClass) -> bool {
        match self {
            ClassFilter::All => true,
            ClassFilter::Endogenous => class == EventClass::Endogenous,
            ClassFilter::Exogenous => class == EventClass::Exogenous,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassFilter::All => "all",
            ClassFilter::Endogenous => "endogenous",
            ClassFilter::Exogenous => "exogenous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Observation index into the [`MarketSeries`].
    pub index: usize,
    pub class: EventClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub threshold: f64,
    pub mean_volatility: f64,
    pub events: Vec<Event>,
}

impl EventSet {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, filter: ClassFilter) -> usize {
        self.events.iter().filter(|e| filter.admits(e.class)).count()
    }
}

/// How the reference level ⟨V⟩ is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// Mean over every minute observation in the sample.
    #[default]
    Pooled,
    /// Mean of per-day means.
    DailyMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectOptions {
    pub mean_mode: MeanMode,
    /// Minimum number of observations between retained events; 0 keeps all.
    pub exclusion_window: usize,
    /// Minutes dropped after each session open when computing ⟨V⟩.
    pub trim_open: u32,
    /// Minutes dropped before each session close when computing ⟨V⟩.
    pub trim_close: u32,
}

/// Reference volatility ⟨V⟩ used by the threshold rule.
pub fn mean_volatility(series: &MarketSeries, options: &DetectOptions) -> f64 {
    let keep = |i: usize| {
        let len = series.calendar.session_length(series.session[i] as usize);
        let m = series.session_minute[i];
        m > options.trim_open && m + options.trim_close <= len
    };
    match options.mean_mode {
        MeanMode::Pooled => {
            let (sum, n) = (0..series.len())
                .filter(|&i| keep(i))
                .fold((0.0, 0usize), |(s, n), i| (s + series.volatility[i], n + 1));
            if n == 0 { 0.0 } else { sum / n as f64 }
        }
        MeanMode::DailyMeans => {
            let mut sums = vec![(0.0, 0usize); series.n_days()];
            for i in (0..series.len()).filter(|&i| keep(i)) {
                let slot = &mut sums[series.day[i] as usize];
                slot.0 += series.volatility[i];
                slot.1 += 1;
            }
            let daily: Vec<f64> = sums.iter().filter(|(_, n)| *n > 0).map(|(s, n)| s / *n as f64).collect();
            if daily.is_empty() { 0.0 } else { daily.iter().sum::<f64>() / daily.len() as f64 }
        }
    }
}

/// All observations with `V > S·⟨V⟩`. Every event starts out endogenous;
/// run [`classify_events`] to mark news-synchronised ones.
pub fn detect_events(series: &MarketSeries, threshold: f64, options: &DetectOptions) -> Result<EventSet> {
    if series.is_empty() {
        return Err(Error::InsufficientData("series has no returns".into()));
    }
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {threshold}")));
    }
    let mean = mean_volatility(series, options);
    if !(mean > 0.0) {
        return Err(Error::ZeroVolatility);
    }
    let cut = threshold * mean;
    let mut events = Vec::new();
    let mut last: Option<usize> = None;
    for (i, &v) in series.volatility.iter().enumerate() {
        if v > cut {
            if let Some(prev) = last {
                if options.exclusion_window > 0 && i - prev <= options.exclusion_window {
                    continue;
                }
            }
            events.push(Event { index: i, class: EventClass::Endogenous });
            last = Some(i);
        }
    }
    Ok(EventSet { threshold, mean_volatility: mean, events })
}

/// An event is exogenous when a news release lies within one minute of it.
pub fn classify_events(series: &MarketSeries, events: &EventSet, news_minutes: &[i64]) -> EventSet {
    let classified = events
        .events
        .iter()
        .map(|e| {
            let minute = series.timestamp[e.index];
            let pos = news_minutes.partition_point(|&n| n < minute - 1);
            let exogenous = news_minutes.get(pos).is_some_and(|&n| n <= minute + 1);
            Event {
                index: e.index,
                class: if exogenous { EventClass::Exogenous } else { EventClass::Endogenous },
            }
        })
        .collect();
    EventSet { events: classified, ..events.clone() }
}

/// Ensemble-averaged response after events, at lags `t = 1..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub horizon: usize,
    pub mean_volatility: Vec<f64>,
    /// NaN where no contributing event has a defined log-volume.
    pub mean_log_volume: Vec<f64>,
    pub n_contributing: Vec<usize>,
}

impl ResponseCurve {
    /// `(t, mean_volatility)` pairs for lags with at least one contributing event.
    pub fn volatility_points(&self) -> (Vec<f64>, Vec<f64>) {
        self.points_of(&self.mean_volatility)
    }

    pub fn points_of(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (0..self.horizon)
            .filter(|&k| self.n_contributing[k] > 0 && values[k].is_finite())
            .map(|k| ((k + 1) as f64, values[k]))
            .unzip()
    }
}

/// Average an arbitrary per-observation quantity over post-event lags.
///
/// Lag `t` of an event at observation `e` uses observation `e + t` only while
/// it belongs to the same trading day. Returns `(means, counts)` where a
/// count is the number of events with a defined value at that lag.
pub fn aligned_mean<F>(series: &MarketSeries, events: &EventSet, horizon: usize, filter: ClassFilter, value: F) -> (Vec<f64>, Vec<usize>)
where
    F: Fn(usize) -> Option<f64>,
{
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for event in events.events.iter().filter(|e| filter.admits(e.class)) {
        let day = series.day[event.index];
        for t in 1..=horizon {
            let j = event.index + t;
            if j >= series.len() || series.day[j] != day {
                break;
            }
            if let Some(v) = value(j) {
                sums[t - 1] += v;
                counts[t - 1] += 1;
            }
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
        .collect();
    (means, counts)
}

pub fn build_response(series: &MarketSeries, events: &EventSet, horizon: usize, filter: ClassFilter) -> Result<ResponseCurve> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if events.count(filter) == 0 {
        return Err(Error::InsufficientData(format!("no {} events", filter.as_str())));
    }
    let (mean_volatility, n_contributing) =
        aligned_mean(series, events, horizon, filter, |j| Some(series.volatility[j]));
    let (mean_log_volume, _) = aligned_mean(series, events, horizon, filter, |j| series.log_volume[j]);
    Ok(ResponseCurve { horizon, mean_volatility, mean_log_volume, n_contributing })
}
