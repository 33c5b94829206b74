//! Minute-bar ingestion, log-returns and the trading-session calendar.

use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MINUTES_PER_CALENDAR_DAY: i64 = 24 * 60;
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Ordered, non-overlapping trading sessions, each given as wall-clock
/// `(open, close)` minutes after midnight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCalendar {
    sessions: Vec<(u32, u32)>,
}

impl SessionCalendar {
    pub fn new(sessions: Vec<(u32, u32)>) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::InvalidInput("calendar needs at least one session".into()));
        }
        for (i, &(open, close)) in sessions.iter().enumerate() {
            if open >= close || close > MINUTES_PER_CALENDAR_DAY as u32 {
                return Err(Error::InvalidInput(format!(
                    "session {i}: open {open} must precede close {close} within one day"
                )));
            }
            if i > 0 && sessions[i - 1].1 >= open {
                return Err(Error::InvalidInput(format!(
                    "session {i} overlaps or precedes session {}",
                    i - 1
                )));
            }
        }
        Ok(Self { sessions })
    }

    /// Two sessions, 09:30–11:30 and 13:00–15:00 (Shanghai).
    pub fn shanghai() -> Self {
        Self::new(vec![(9 * 60 + 30, 11 * 60 + 30), (13 * 60, 15 * 60)]).unwrap()
    }

    /// Parse `HH:MM` pairs.
    pub fn from_wall_clock<S: AsRef<str>>(sessions: &[(S, S)]) -> Result<Self> {
        let parsed = sessions
            .iter()
            .map(|(o, c)| Ok((parse_wall_clock(o.as_ref())?, parse_wall_clock(c.as_ref())?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(parsed)
    }

    pub fn sessions(&self) -> &[(u32, u32)] {
        &self.sessions
    }

    pub fn minutes_per_day(&self) -> u32 {
        self.sessions.iter().map(|(o, c)| c - o).sum()
    }

    /// Session index and minute-within-session for a wall-clock minute.
    pub fn locate(&self, minute_of_day: u32) -> Option<(usize, u32)> {
        self.sessions
            .iter()
            .enumerate()
            .find(|(_, &(open, close))| minute_of_day >= open && minute_of_day <= close)
            .map(|(i, &(open, _))| (i, minute_of_day - open))
    }

    pub fn session_length(&self, session: usize) -> u32 {
        let (o, c) = self.sessions[session];
        c - o
    }
}

fn parse_wall_clock(s: &str) -> Result<u32> {
    let (h, m) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidInput(format!("expected HH:MM, got {s:?}")))?;
    let h: u32 = h.trim().parse().map_err(|_| Error::InvalidInput(format!("bad hour in {s:?}")))?;
    let m: u32 = m.trim().parse().map_err(|_| Error::InvalidInput(format!("bad minute in {s:?}")))?;
    if h > 24 || m > 59 || h * 60 + m > 24 * 60 {
        return Err(Error::InvalidInput(format!("wall clock out of range: {s:?}")));
    }
    Ok(h * 60 + m)
}

/// Parse `YYYY-MM-DDTHH:MM` into integer minutes since the Unix epoch.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp().div_euclid(60))
}

pub fn format_timestamp(minutes: i64) -> String {
    DateTime::from_timestamp(minutes * 60, 0)
        .map(|dt| dt.naive_utc().format(TIMESTAMP_FORMAT).to_string())
        .unwrap_or_default()
}

/// One raw input row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    /// Minutes since the Unix epoch.
    pub timestamp: i64,
    pub price: f64,
    pub volume: u64,
}

/// Log-returns between consecutive prices.
pub fn compute_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &price)) = prices.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
        return Err(Error::NonPositivePrice { index, price });
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Minute returns with their calendar coordinates.
///
/// Every field vector is indexed by observation: one observation per
/// intraday return, attached to the later of its two bars. Returns never span
/// a session or day boundary, so the first bar of every session has no
/// observation.
#[derive(Debug, Clone)]
pub struct MarketSeries {
    pub calendar: SessionCalendar,
    pub bars: Vec<Bar>,
    /// Bar index of the observation's closing price.
    pub row: Vec<usize>,
    pub timestamp: Vec<i64>,
    /// Sequential trading-day number, starting at 0.
    pub day: Vec<u32>,
    pub session: Vec<u8>,
    pub session_minute: Vec<u32>,
    pub log_return: Vec<f64>,
    pub volatility: Vec<f64>,
    /// Natural log of volume; `None` on zero-volume minutes.
    pub log_volume: Vec<Option<f64>>,
}

impl MarketSeries {
    pub fn from_bars(bars: Vec<Bar>, calendar: SessionCalendar) -> Result<Self> {
        let mut coords = Vec::with_capacity(bars.len());
        let mut day = 0u32;
        for (i, bar) in bars.iter().enumerate() {
            if !(bar.price > 0.0) || !bar.price.is_finite() {
                return Err(Error::NonPositivePrice { index: i, price: bar.price });
            }
            if i > 0 && bar.timestamp <= bars[i - 1].timestamp {
                return Err(Error::NonMonotoneTimestamp { line: i + 2 });
            }
            let date = bar.timestamp.div_euclid(MINUTES_PER_CALENDAR_DAY);
            let minute_of_day = bar.timestamp.rem_euclid(MINUTES_PER_CALENDAR_DAY) as u32;
            let (session, within) = calendar.locate(minute_of_day).ok_or_else(|| Error::Parse {
                line: i + 2,
                message: format!("{} lies outside every trading session", format_timestamp(bar.timestamp)),
            })?;
            if i > 0 && date != bars[i - 1].timestamp.div_euclid(MINUTES_PER_CALENDAR_DAY) {
                day += 1;
            }
            coords.push((day, session, within));
        }

        let n = bars.len().saturating_sub(1);
        let mut series = Self {
            calendar,
            row: Vec::with_capacity(n),
            timestamp: Vec::with_capacity(n),
            day: Vec::with_capacity(n),
            session: Vec::with_capacity(n),
            session_minute: Vec::with_capacity(n),
            log_return: Vec::with_capacity(n),
            volatility: Vec::with_capacity(n),
            log_volume: Vec::with_capacity(n),
            bars: Vec::new(),
        };
        for i in 1..bars.len() {
            let (prev_day, prev_session, _) = coords[i - 1];
            let (day, session, within) = coords[i];
            if day != prev_day || session != prev_session {
                continue;
            }
            let r = (bars[i].price / bars[i - 1].price).ln();
            series.row.push(i);
            series.timestamp.push(bars[i].timestamp);
            series.day.push(day);
            series.session.push(session as u8);
            series.session_minute.push(within);
            series.log_return.push(r);
            series.volatility.push(r.abs());
            series
                .log_volume
                .push((bars[i].volume > 0).then(|| (bars[i].volume as f64).ln()));
        }
        series.bars = bars;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.volatility.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volatility.is_empty()
    }

    pub fn n_days(&self) -> usize {
        self.day.last().map_or(0, |d| *d as usize + 1)
    }
}

/// Read a `timestamp,price,volume` CSV file.
pub fn load_series(path: impl AsRef<Path>, calendar: SessionCalendar) -> Result<MarketSeries> {
    let text = fs::read_to_string(path)?;
    let bars = parse_bars(&text)?;
    MarketSeries::from_bars(bars, calendar)
}

pub fn parse_bars(text: &str) -> Result<Vec<Bar>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, header)) if normalize_header(header) == ["timestamp", "price", "volume"] => {}
        Some((i, _)) => {
            return Err(Error::Parse { line: i + 1, message: "expected header `timestamp,price,volume`".into() })
        }
        None => return Err(Error::InsufficientData("empty market file".into())),
    }
    let mut bars = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line: line_no, message: format!("expected 3 fields, found {}", fields.len()) });
        }
        let timestamp = parse_timestamp(fields[0])
            .ok_or_else(|| Error::Parse { line: line_no, message: format!("bad timestamp {:?}", fields[0]) })?;
        let price: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("bad price {:?}", fields[1]) })?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(Error::Parse { line: line_no, message: format!("non-positive price {price}") });
        }
        let volume: u64 = fields[2]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("bad volume {:?}", fields[2]) })?;
        if let Some(prev) = bars.last().map(|b: &Bar| b.timestamp) {
            if timestamp <= prev {
                return Err(Error::NonMonotoneTimestamp { line: line_no });
            }
        }
        bars.push(Bar { timestamp, price, volume });
    }
    Ok(bars)
}

/// Read a news file (`timestamp` header) into sorted, de-duplicated minutes.
pub fn load_news(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    parse_news(&fs::read_to_string(path)?)
}

pub fn parse_news(text: &str) -> Result<Vec<i64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, header)) if normalize_header(header) == ["timestamp"] => {}
        Some((i, _)) => return Err(Error::Parse { line: i + 1, message: "expected header `timestamp`".into() }),
        None => return Ok(Vec::new()),
    }
    let mut minutes = lines
        .map(|(i, l)| {
            parse_timestamp(l).ok_or_else(|| Error::Parse { line: i + 1, message: format!("bad timestamp {l:?}") })
        })
        .collect::<Result<Vec<_>>>()?;
    minutes.sort_unstable();
    minutes.dedup();
    Ok(minutes)
}

fn normalize_header(header: &str) -> Vec<String> {
    header.trim_start_matches('\u{feff}').split(',').map(|s| s.trim().to_ascii_lowercase()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bars_at(start: &str, prices: &[f64]) -> Vec<Bar> {
        let t0 = parse_timestamp(start).unwrap();
        prices
            .iter()
            .enumerate()
            .map(|(i, &p)| Bar { timestamp: t0 + i as i64, price: p, volume: 100 })
            .collect()
    }

    #[test]
    fn constant_prices_have_zero_returns() {
        let s = MarketSeries::from_bars(bars_at("2016-01-04T09:31", &[100.0; 3]), SessionCalendar::shanghai()).unwrap();
        assert_eq!(s.log_return, vec![0.0, 0.0]);
        assert_eq!(s.volatility, vec![0.0, 0.0]);
    }

    #[test]
    fn one_percent_move() {
        let s = MarketSeries::from_bars(bars_at("2016-01-04T09:31", &[100.0, 101.0]), SessionCalendar::shanghai())
            .unwrap();
        assert!((s.log_return[0] - 9.950330853e-3).abs() < 1e-12);
        assert_eq!(s.volatility[0], s.log_return[0]);
        assert_eq!(s.row, vec![1]);
    }

    #[test]
    fn compute_returns_examples() {
        assert_eq!(compute_returns(&[1.0, std::f64::consts::E]).unwrap(), vec![1.0]);
        assert_eq!(compute_returns(&[100.0, 100.0]).unwrap(), vec![0.0]);
        let r = compute_returns(&[100.0, 99.0]).unwrap()[0];
        assert!((r + 0.010050335853501).abs() < 1e-12);
        assert!(matches!(compute_returns(&[1.0, 0.0]), Err(Error::NonPositivePrice { index: 1, .. })));
    }

    #[test]
    fn no_return_across_lunch_break() {
        let text = "timestamp,price,volume\n\
                    2016-01-04T11:29,100,10\n\
                    2016-01-04T11:30,101,10\n\
                    2016-01-04T13:00,105,10\n\
                    2016-01-04T13:01,104,0\n";
        let s = MarketSeries::from_bars(parse_bars(text).unwrap(), SessionCalendar::shanghai()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.session, vec![0, 1]);
        assert!((s.log_return[1] - (104f64 / 105.0).ln()).abs() < 1e-15);
        assert_eq!(s.log_volume[1], None);
        assert_eq!(s.session_minute, vec![120, 1]);
    }

    #[test]
    fn no_return_across_days() {
        let text = "timestamp,price,volume\n\
                    2016-01-04T14:59,100,10\n\
                    2016-01-04T15:00,101,10\n\
                    2016-01-05T09:31,90,10\n\
                    2016-01-05T09:32,91,10\n";
        let s = MarketSeries::from_bars(parse_bars(text).unwrap(), SessionCalendar::shanghai()).unwrap();
        assert_eq!(s.day, vec![0, 1]);
        assert_eq!(s.n_days(), 2);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let bad = "timestamp,price,volume\n2016-01-04T09:31,100,1\n2016-01-04T09:32,abc,1\n";
        assert!(matches!(parse_bars(bad), Err(Error::Parse { line: 3, .. })));
        let neg = "timestamp,price,volume\n2016-01-04T09:31,-1,1\n";
        assert!(matches!(parse_bars(neg), Err(Error::Parse { line: 2, .. })));
        let back = "timestamp,price,volume\n2016-01-04T09:32,1,1\n2016-01-04T09:31,1,1\n";
        assert!(matches!(parse_bars(back), Err(Error::NonMonotoneTimestamp { line: 3 })));
    }

    #[test]
    fn rows_outside_sessions_are_rejected() {
        let bars = bars_at("2016-01-04T12:00", &[1.0, 1.0]);
        assert!(MarketSeries::from_bars(bars, SessionCalendar::shanghai()).is_err());
    }

    #[test]
    fn calendar_validation() {
        assert!(SessionCalendar::new(vec![(600, 500)]).is_err());
        assert!(SessionCalendar::new(vec![(500, 600), (590, 700)]).is_err());
        let c = SessionCalendar::from_wall_clock(&[("09:30", "11:30"), ("13:00", "15:00")]).unwrap();
        assert_eq!(c, SessionCalendar::shanghai());
        assert_eq!(c.minutes_per_day(), 240);
        assert_eq!(c.locate(13 * 60 + 5), Some((1, 5)));
        assert_eq!(c.locate(12 * 60), None);
    }

    #[test]
    fn timestamp_round_trip() {
        let m = parse_timestamp("2016-11-22T14:59").unwrap();
        assert_eq!(format_timestamp(m), "2016-11-22T14:59");
        assert_eq!(parse_timestamp("2016-11-22 14:59"), None);
    }

    #[test]
    fn news_sorted_and_deduplicated() {
        let n = parse_news("timestamp\n2016-01-04T10:02\n2016-01-04T10:01\n2016-01-04T10:02\n").unwrap();
        assert_eq!(n.len(), 2);
        assert!(n[0] < n[1]);
    }
}
