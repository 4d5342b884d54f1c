//! Cumulative download series: cleaning, monthly rollups and milestones.
//!
//! Daily series carry `f64` values so that filtered and interpolated
//! cumulative counts stay exact enough to re-filter without drift. Month
//! labels are first-of-month dates meaning "as of the first of that month",
//! i.e. the value through the last day of the previous month.

mod filter;
mod milestone;
mod monthly;

pub use filter::{daily_deltas, flag_outliers, iqr_filter, DailyDelta, FilterConfig, FilterOutcome, FilterWindow, FlaggedDelta, OutlierSide};
pub use milestone::{milestone_value, Milestone, MILESTONE_DAYS};
pub use monthly::{aggregate_group, growth_ratio, monthly_rollup, splice, MonthlyPoint, MonthlySeries};

use std::fmt;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("dates must be strictly increasing (at {0})")]
    NonIncreasingDates(NaiveDate),
    #[error("invalid cumulative value {value} at {date}")]
    InvalidValue { date: NaiveDate, value: f64 },
    #[error("month label {0} is not the first of a month")]
    NotFirstOfMonth(NaiveDate),
    #[error("no baseline value at splice date {0}")]
    MissingBaseline(NaiveDate),
    #[error("scraper data does not cover the splice date {0}")]
    ScraperNotCovering(NaiveDate),
    #[error("scraper gap: no snapshots during {0}")]
    ScraperGap(String),
    #[error("milestone must be one of 7/14/30/60/90/180/365 days, got {0}")]
    UnknownMilestone(u32),
    #[error("month {0} not present in series")]
    MissingLabel(NaiveDate),
    #[error("ratio undefined: value at {0} is zero")]
    UndefinedRatio(NaiveDate),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

/// Per-point annotations carried into exports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const OUTLIER: Flags = Flags(1);
    pub const CLAMPED: Flags = Flags(1 << 1);
    pub const CARRIED: Flags = Flags(1 << 2);
    pub const NEGATIVE: Flags = Flags(1 << 3);
    pub const TOO_SHORT: Flags = Flags(1 << 4);

    const NAMES: [(Flags, &'static str); 5] = [
        (Flags::OUTLIER, "outlier"),
        (Flags::CLAMPED, "clamped"),
        (Flags::CARRIED, "carried"),
        (Flags::NEGATIVE, "negative"),
        (Flags::TOO_SHORT, "too_short"),
    ];

    pub fn empty() -> Flags {
        Flags(0)
    }

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Flags) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Flags {
    /// `;`-joined token list, e.g. `outlier;clamped`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (flag, name) in Flags::NAMES {
            if self.contains(flag) {
                if !first {
                    f.write_str(";")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        Ok(())
    }
}

/// Ordered cumulative-download observations for one model or group.
#[derive(Debug, Clone, PartialEq)]
pub struct DownloadSeries {
    pub model_id: String,
    points: Vec<(NaiveDate, f64)>,
}

impl DownloadSeries {
    /// Builds a series from points that must already be strictly increasing
    /// in date, with finite non-negative values.
    pub fn new(
        model_id: impl Into<String>,
        points: Vec<(NaiveDate, f64)>,
    ) -> Result<DownloadSeries, SeriesError> {
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SeriesError::NonIncreasingDates(w[1].0));
            }
        }
        if let Some(&(date, value)) = points.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(SeriesError::InvalidValue { date, value });
        }
        Ok(DownloadSeries { model_id: model_id.into(), points })
    }

    /// Sorts by date first; duplicate dates are still an error.
    pub fn from_unsorted(
        model_id: impl Into<String>,
        mut points: Vec<(NaiveDate, f64)>,
    ) -> Result<DownloadSeries, SeriesError> {
        points.sort_by_key(|p| p.0);
        DownloadSeries::new(model_id, points)
    }

    pub fn empty(model_id: impl Into<String>) -> DownloadSeries {
        DownloadSeries { model_id: model_id.into(), points: Vec::new() }
    }

    pub fn points(&self) -> &[(NaiveDate, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.points.first().map(|p| p.0)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.points.last().map(|p| p.0)
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    /// Value of the last observation strictly before `date`.
    pub fn value_before(&self, date: NaiveDate) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.0 < date);
        idx.checked_sub(1).map(|i| self.points[i].1)
    }

    /// Value of the last observation on or before `date`.
    pub fn value_on_or_before(&self, date: NaiveDate) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.0 <= date);
        idx.checked_sub(1).map(|i| self.points[i].1)
    }

    /// Points dated on or before `date`.
    pub fn truncated(&self, date: NaiveDate) -> DownloadSeries {
        let idx = self.points.partition_point(|p| p.0 <= date);
        DownloadSeries { model_id: self.model_id.clone(), points: self.points[..idx].to_vec() }
    }

    /// Pointwise sum over the union of all observation dates, each member
    /// contributing its last value on or before the date (zero before its
    /// first observation).
    pub fn sum<'a>(
        model_id: impl Into<String>,
        members: impl IntoIterator<Item = &'a DownloadSeries>,
    ) -> DownloadSeries {
        let members: Vec<&DownloadSeries> = members.into_iter().collect();
        let mut dates: Vec<NaiveDate> =
            members.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        dates.sort();
        dates.dedup();
        let points = dates
            .into_iter()
            .map(|d| (d, members.iter().filter_map(|s| s.value_on_or_before(d)).sum()))
            .collect();
        DownloadSeries { model_id: model_id.into(), points }
    }
}

/// Writes `id,date,cumulative_downloads,flags` rows.
pub fn write_series_csv<W: Write>(
    out: W,
    rows: impl IntoIterator<Item = (String, NaiveDate, f64, Flags)>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "date", "cumulative_downloads", "flags"])?;
    for (id, date, value, flags) in rows {
        w.write_record([id, date.to_string(), format_value(value), flags.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip representation; integral values print without a
/// fractional part.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn first_of_month(d: NaiveDate) -> NaiveDate {
    d.with_day(1).expect("day 1 exists")
}

pub fn next_month(label: NaiveDate) -> NaiveDate {
    label.checked_add_months(chrono::Months::new(1)).expect("date in range")
}

pub fn prev_month(label: NaiveDate) -> NaiveDate {
    label.checked_sub_months(chrono::Months::new(1)).expect("date in range")
}

pub fn is_month_label(d: NaiveDate) -> bool {
    d.day() == 1
}
