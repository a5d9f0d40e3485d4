//! Historical price series: ingestion, alignment, partitioning.
//!
//! A [`PriceSeries`] stores observations on a fixed time lattice (5-minute
//! real-time or hourly day-ahead). Gaps are explicit `None` slots, never
//! interpolated; downstream consumers decide how to treat them (training
//! breaks transition pairs, simulation skips incomplete days).
//!
//! The canonical CSV format is `timestamp,price` with naive ISO-8601
//! timestamps (`YYYY-MM-DDTHH:MM`) in market-local time and decimal prices
//! in $/MWh. One file per (zone, year, series kind), named
//! `<zone>_<kind>_<year>.csv` with kind `rtp` or `dap`.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CSV_HEADER: &str = "timestamp,price";
pub const TS_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Timestamped prices at a fixed interval for one zone.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    zone: String,
    interval_min: u32,
    /// Timestamp of slot 0; meaningful only when `slots` is non-empty.
    start: NaiveDateTime,
    /// Lattice of observations; first and last slots are always `Some`.
    slots: Vec<Option<f64>>,
}

impl PriceSeries {
    /// Build a series from (timestamp, price) points. Points are sorted if
    /// needed (with a warning), duplicates are rejected, and every timestamp
    /// must sit on the lattice implied by the earliest point and `interval_min`.
    pub fn new(
        zone: impl Into<String>,
        interval_min: u32,
        mut points: Vec<(NaiveDateTime, f64)>,
    ) -> Result<Self> {
        assert!(interval_min > 0, "interval must be positive");
        let zone = zone.into();
        if points.is_empty() {
            return Ok(Self {
                zone,
                interval_min,
                start: NaiveDateTime::default(),
                slots: Vec::new(),
            });
        }
        if !points.windows(2).all(|w| w[0].0 <= w[1].0) {
            log::warn!("price points for zone {zone} out of order; sorting");
            points.sort_by_key(|p| p.0);
        }
        let start = points[0].0;
        let step = i64::from(interval_min);
        let last_idx = slot_index(start, points[points.len() - 1].0, step)
            .ok_or(Error::IntervalMismatch {
                declared: interval_min,
                ts: points[points.len() - 1].0,
            })?;
        let mut slots = vec![None; last_idx + 1];
        for &(ts, price) in &points {
            let idx = slot_index(start, ts, step).ok_or(Error::IntervalMismatch {
                declared: interval_min,
                ts,
            })?;
            if slots[idx].is_some() {
                return Err(Error::DuplicateTimestamp(ts));
            }
            slots[idx] = Some(price);
        }
        Ok(Self {
            zone,
            interval_min,
            start,
            slots,
        })
    }

    /// Parse the canonical CSV format. The `timestamp,price` header line is
    /// optional; rows may arrive unsorted. Line numbers in errors refer to
    /// the byte stream, counting from 1.
    pub fn load_csv(source: impl Read, interval_min: u32, zone: impl Into<String>) -> Result<Self> {
        let reader = BufReader::new(source);
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if lineno == 1 && trimmed.eq_ignore_ascii_case(CSV_HEADER) {
                continue;
            }
            let (ts_str, price_str) =
                trimmed
                    .split_once(',')
                    .ok_or_else(|| Error::MalformedRow {
                        line: lineno,
                        reason: "expected `timestamp,price`".into(),
                    })?;
            let ts = NaiveDateTime::parse_from_str(ts_str.trim(), TS_FORMAT).map_err(|e| {
                Error::MalformedRow {
                    line: lineno,
                    reason: format!("bad timestamp `{}`: {e}", ts_str.trim()),
                }
            })?;
            let price: f64 = price_str.trim().parse().map_err(|_| Error::MalformedRow {
                line: lineno,
                reason: format!("bad price `{}`", price_str.trim()),
            })?;
            if !price.is_finite() {
                return Err(Error::MalformedRow {
                    line: lineno,
                    reason: format!("non-finite price `{}`", price_str.trim()),
                });
            }
            points.push((ts, price));
        }
        Self::new(zone, interval_min, points)
    }

    pub fn load_csv_path(path: impl AsRef<std::path::Path>, interval_min: u32, zone: impl Into<String>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load_csv(file, interval_min, zone)
    }

    /// Write the canonical CSV format (header plus one row per observed slot).
    pub fn save_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for (ts, price) in self.observed() {
            writeln!(out, "{},{}", ts.format(TS_FORMAT), price)?;
        }
        Ok(())
    }

    pub fn zone(&self) -> &str {
        &self.zone
    }

    pub fn interval_min(&self) -> u32 {
        self.interval_min
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn n_observed(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn slots(&self) -> &[Option<f64>] {
        &self.slots
    }

    pub fn ts_of_slot(&self, idx: usize) -> NaiveDateTime {
        self.start + Duration::minutes(idx as i64 * i64::from(self.interval_min))
    }

    pub fn slot_of_ts(&self, ts: NaiveDateTime) -> Option<usize> {
        if self.slots.is_empty() {
            return None;
        }
        let idx = slot_index(self.start, ts, i64::from(self.interval_min))?;
        (idx < self.slots.len()).then_some(idx)
    }

    /// Observed price at `ts`, or `None` when `ts` is off-lattice, out of
    /// range, or a gap.
    pub fn value_at(&self, ts: NaiveDateTime) -> Option<f64> {
        self.slot_of_ts(ts).and_then(|i| self.slots[i])
    }

    /// Day-ahead lookup: value for the hour containing `ts` (60-minute series).
    pub fn value_for_hour_of(&self, ts: NaiveDateTime) -> Option<f64> {
        self.value_at(hour_start(ts))
    }

    pub fn observed(&self) -> impl Iterator<Item = (NaiveDateTime, f64)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|p| (self.ts_of_slot(i), p)))
    }

    /// First and last observed calendar dates.
    pub fn date_span(&self) -> Option<(NaiveDate, NaiveDate)> {
        if self.slots.is_empty() {
            return None;
        }
        Some((
            self.start.date(),
            self.ts_of_slot(self.slots.len() - 1).date(),
        ))
    }

    /// The day's slots from midnight, one per interval (1440/interval
    /// entries); `None` for gaps and for slots outside the series range.
    pub fn day_slots(&self, date: NaiveDate) -> Vec<Option<f64>> {
        let per_day = (24 * 60 / self.interval_min) as usize;
        let midnight = date.and_hms_opt(0, 0, 0).unwrap();
        (0..per_day)
            .map(|k| {
                self.value_at(midnight + Duration::minutes(k as i64 * i64::from(self.interval_min)))
            })
            .collect()
    }

    pub fn observed_mean(&self) -> f64 {
        let (n, sum) = self
            .observed()
            .fold((0usize, 0.0), |(n, s), (_, p)| (n + 1, s + p));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn observed_std(&self) -> f64 {
        let mean = self.observed_mean();
        let (n, ss) = self
            .observed()
            .fold((0usize, 0.0), |(n, s), (_, p)| (n + 1, s + (p - mean).powi(2)));
        if n == 0 {
            0.0
        } else {
            (ss / n as f64).sqrt()
        }
    }
}

fn slot_index(start: NaiveDateTime, ts: NaiveDateTime, step_min: i64) -> Option<usize> {
    let delta = ts.signed_duration_since(start).num_minutes();
    if delta < 0 || delta % step_min != 0 || ts.second() != 0 {
        return None;
    }
    Some((delta / step_min) as usize)
}

pub fn hour_start(ts: NaiveDateTime) -> NaiveDateTime {
    ts.date().and_hms_opt(ts.hour(), 0, 0).unwrap()
}

/// RTP minus the DAP of the containing hour, on the RTP lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSeries(PriceSeries);

impl BiasSeries {
    pub fn series(&self) -> &PriceSeries {
        &self.0
    }

    pub fn into_series(self) -> PriceSeries {
        self.0
    }
}

/// Replicate an hourly series onto the 5-minute lattice; a missing hour
/// yields 12 missing slots.
pub fn broadcast_dap(dap: &PriceSeries) -> Result<PriceSeries> {
    if dap.interval_min() != 60 {
        return Err(Error::WrongInterval {
            expected: 60,
            got: dap.interval_min(),
        });
    }
    let mut points = Vec::with_capacity(dap.n_observed() * 12);
    for (ts, price) in dap.observed() {
        for k in 0..12 {
            points.push((ts + Duration::minutes(5 * k), price));
        }
    }
    PriceSeries::new(dap.zone(), 5, points)
}

/// bias(t) = rtp(t) - dap(hour of t). Every observed RTP timestamp must have
/// a covering DAP hour.
pub fn compute_bias(rtp: &PriceSeries, dap: &PriceSeries) -> Result<BiasSeries> {
    if dap.interval_min() != 60 {
        return Err(Error::WrongInterval {
            expected: 60,
            got: dap.interval_min(),
        });
    }
    let mut points = Vec::with_capacity(rtp.n_observed());
    for (ts, price) in rtp.observed() {
        let hourly = dap
            .value_for_hour_of(ts)
            .ok_or(Error::UncoveredHour(hour_start(ts)))?;
        points.push((ts, price - hourly));
    }
    Ok(BiasSeries(PriceSeries::new(
        rtp.zone(),
        rtp.interval_min(),
        points,
    )?))
}

/// Half-open calendar date range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, ts: NaiveDateTime) -> bool {
        let d = ts.date();
        self.start <= d && d < self.end
    }

    pub fn overlaps(&self, other: &DateRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Assign points to disjoint train/test ranges by timestamp membership.
/// Points in neither range are dropped.
pub fn split_train_test(
    series: &PriceSeries,
    train_range: DateRange,
    test_range: DateRange,
) -> Result<(PriceSeries, PriceSeries)> {
    if train_range.overlaps(&test_range) {
        return Err(Error::OverlappingRanges);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ts, price) in series.observed() {
        if train_range.contains(ts) {
            train.push((ts, price));
        } else if test_range.contains(ts) {
            test.push((ts, price));
        }
    }
    if test.is_empty() {
        log::warn!(
            "test range {}..{} contains no data",
            test_range.start,
            test_range.end
        );
    }
    Ok((
        PriceSeries::new(series.zone(), series.interval_min(), train)?,
        PriceSeries::new(series.zone(), series.interval_min(), test)?,
    ))
}

/// Partition of timestamps into Markov training classes.
///
/// `Seasonal` separates summer (June-August) from the rest of the year;
/// `Weekly` separates weekdays from weekends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalendarScheme {
    #[default]
    None,
    Seasonal,
    Weekly,
}

impl CalendarScheme {
    pub fn n_classes(&self) -> usize {
        match self {
            CalendarScheme::None => 1,
            CalendarScheme::Seasonal | CalendarScheme::Weekly => 2,
        }
    }

    pub fn class_labels(&self) -> &'static [&'static str] {
        match self {
            CalendarScheme::None => &["all"],
            CalendarScheme::Seasonal => &["summer", "nonsummer"],
            CalendarScheme::Weekly => &["weekday", "weekend"],
        }
    }

    pub fn class_of_date(&self, date: NaiveDate) -> usize {
        match self {
            CalendarScheme::None => 0,
            CalendarScheme::Seasonal => {
                if (6..=8).contains(&date.month()) {
                    0
                } else {
                    1
                }
            }
            CalendarScheme::Weekly => {
                use chrono::Weekday::{Sat, Sun};
                if matches!(date.weekday(), Sat | Sun) {
                    1
                } else {
                    0
                }
            }
        }
    }

    pub fn class_of(&self, ts: NaiveDateTime) -> usize {
        self.class_of_date(ts.date())
    }
}
