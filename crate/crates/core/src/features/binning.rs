//! Calendar binning: three-hour intervals, seasons and month windows.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDateTime, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

/// Number of three-hour intervals in a day.
pub const INTERVALS: usize = 8;
pub const HOURS_PER_INTERVAL: u32 = 3;
pub const SEASONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Fall,
}

impl Season {
    pub const ALL: [Season; SEASONS] = [Season::Winter, Season::Spring, Season::Summer, Season::Fall];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Fall => "fall",
        }
    }
}

/// Total month → season map, indexed by `month - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonMap([Season; 12]);

impl SeasonMap {
    /// Meteorological seasons: Dec–Feb winter, Mar–May spring, Jun–Aug summer, Sep–Nov fall.
    pub fn meteorological() -> Self {
        use Season::*;
        Self([Winter, Winter, Spring, Spring, Spring, Summer, Summer, Summer, Fall, Fall, Fall, Winter])
    }

    pub fn from_months(months: [Season; 12]) -> Self {
        Self(months)
    }

    pub fn season(&self, month: u8) -> Season {
        self.0[usize::from(month - 1)]
    }
}

impl Default for SeasonMap {
    fn default() -> Self {
        Self::meteorological()
    }
}

/// Decomposed calendar position of one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeBin {
    pub year: i32,
    /// 1–12
    pub month: u8,
    /// Monday = 0
    pub weekday: u8,
    /// 0–7, `floor(hour / 3)`
    pub interval: u8,
    pub season: Season,
}

impl TimeBin {
    pub fn year_month(&self) -> YearMonth {
        YearMonth { year: self.year, month: self.month }
    }
}

/// Local timezone plus season map; the day is always split into eight
/// three-hour bins starting at local midnight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeBinning {
    pub tz: Tz,
    pub seasons: SeasonMap,
}

impl Default for TimeBinning {
    fn default() -> Self {
        Self { tz: Tz::UTC, seasons: SeasonMap::default() }
    }
}

impl TimeBinning {
    pub fn new(tz: Tz, seasons: SeasonMap) -> Self {
        Self { tz, seasons }
    }

    /// Lower bound hour of every interval.
    pub fn interval_bounds() -> [u32; INTERVALS] {
        std::array::from_fn(|i| i as u32 * HOURS_PER_INTERVAL)
    }

    pub fn bin_utc(&self, ts: DateTime<Utc>) -> TimeBin {
        bin_timestamp(ts.with_timezone(&self.tz).naive_local(), self)
    }

    /// Converts a local wall-clock time to UTC, taking the earlier instant
    /// when ambiguous and shifting forward across DST gaps.
    pub fn local_to_utc(&self, local: NaiveDateTime) -> DateTime<Utc> {
        let mut t = local;
        for _ in 0..4 {
            if let Some(dt) = self.tz.from_local_datetime(&t).earliest() {
                return dt.with_timezone(&Utc);
            }
            t += chrono::Duration::minutes(30);
        }
        Utc.from_utc_datetime(&local)
    }
}

pub fn bin_timestamp(ts: NaiveDateTime, binning: &TimeBinning) -> TimeBin {
    let month = ts.month() as u8;
    TimeBin {
        year: ts.year(),
        month,
        weekday: ts.weekday().num_days_from_monday() as u8,
        interval: (ts.hour() / HOURS_PER_INTERVAL) as u8,
        season: binning.seasons.season(month),
    }
}

/// Parses an ISO-8601 timestamp. Values with an offset are converted to UTC;
/// values without one are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    const NAIVE: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];
    let s = s.strip_suffix(['Z', 'z']).unwrap_or(s);
    NAIVE.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok()).map(|n| Utc.from_utc_datetime(&n))
}

/// Canonical text form used when writing timestamps back out.
pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    /// Months since year 0.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self { year: ord.div_euclid(12) as i32, month: (ord.rem_euclid(12) + 1) as u8 }
    }

    pub fn plus_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, m) = s.split_once('-').ok_or_else(|| format!("expected YYYY-MM, got {s:?}"))?;
        let year = y.parse().map_err(|_| format!("bad year in {s:?}"))?;
        let month = m.parse().map_err(|_| format!("bad month in {s:?}"))?;
        YearMonth::new(year, month).ok_or_else(|| format!("month out of range in {s:?}"))
    }
}

/// Half-open range of whole months `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthWindow {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl MonthWindow {
    pub fn new(start: YearMonth, end: YearMonth) -> Self {
        Self { start, end }
    }

    pub fn months(start: YearMonth, n: i64) -> Self {
        Self { start, end: start.plus_months(n) }
    }

    /// Whole calendar years `[first, first + n)`.
    pub fn years(first: i32, n: i32) -> Self {
        Self::months(YearMonth { year: first, month: 1 }, i64::from(n) * 12)
    }

    pub fn len_months(&self) -> i64 {
        (self.end.ordinal() - self.start.ordinal()).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len_months() == 0
    }

    pub fn contains(&self, ym: YearMonth) -> bool {
        ym >= self.start && ym < self.end
    }

    pub fn iter(&self) -> impl Iterator<Item = YearMonth> {
        let s = self.start.ordinal();
        (s..self.end.ordinal()).map(YearMonth::from_ordinal)
    }
}

impl fmt::Display for MonthWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}
