use chrono::NaiveDate;

use super::{DownloadSeries, SeriesError};
use crate::stats::Quartiles;

/// One day's download increment. Gaps between snapshots are split evenly
/// over the gap days.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyDelta {
    pub date: NaiveDate,
    pub delta: f64,
    /// The hub counter went down over this day.
    pub negative: bool,
}

pub fn daily_deltas(series: &DownloadSeries) -> Result<Vec<DailyDelta>, SeriesError> {
    let pts = series.points();
    if pts.len() < 2 {
        return Err(SeriesError::InsufficientData { needed: 2, got: pts.len() });
    }
    let mut out = Vec::with_capacity(pts.len());
    for w in pts.windows(2) {
        let (d0, c0) = w[0];
        let (d1, c1) = w[1];
        let gap = (d1 - d0).num_days();
        let delta = (c1 - c0) / gap as f64;
        for k in 1..=gap {
            out.push(DailyDelta {
                date: d0 + chrono::Days::new(k as u64),
                delta,
                negative: delta < 0.0,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterWindow {
    /// Quartiles over the model's full delta history.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub iqr_multiplier: f64,
    pub window: FilterWindow,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { iqr_multiplier: 2.5, window: FilterWindow::Global }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), SeriesError> {
        if self.iqr_multiplier > 0.0 && self.iqr_multiplier.is_finite() {
            Ok(())
        } else {
            Err(SeriesError::InvalidConfig(format!(
                "iqr_multiplier must be positive, got {}",
                self.iqr_multiplier
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierSide {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlaggedDelta {
    pub date: NaiveDate,
    /// The delta value when it was flagged.
    pub delta: f64,
    pub replacement: f64,
    pub side: OutlierSide,
    /// Detection pass, starting at 1.
    pub pass: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub series: DownloadSeries,
    pub flagged: Vec<FlaggedDelta>,
    /// Fewer than four points: returned unchanged.
    pub too_short: bool,
    pub passes: usize,
}

/// Indices of values outside `[Q1 - k*IQR, Q3 + k*IQR]`, with the quartiles
/// used.
pub fn flag_outliers(values: &[f64], k: f64) -> (Quartiles, Vec<(usize, OutlierSide)>) {
    let q = Quartiles::of(values).expect("non-empty values");
    let lo = q.q1 - k * q.iqr();
    let hi = q.q3 + k * q.iqr();
    let flagged = values
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            if v > hi {
                Some((i, OutlierSide::High))
            } else if v < lo {
                Some((i, OutlierSide::Low))
            } else {
                None
            }
        })
        .collect();
    (q, flagged)
}

const MAX_PASSES: usize = 64;

/// IQR spike filter on the daily-delta distribution.
///
/// Outlying deltas are replaced with the median delta and the cumulative
/// series is rebuilt from its first point. Detection repeats on the
/// corrected deltas until a pass flags nothing, so the output is a fixed
/// point: filtering it again changes nothing. Series without outliers are
/// returned unchanged.
pub fn iqr_filter(series: &DownloadSeries, cfg: &FilterConfig) -> Result<FilterOutcome, SeriesError> {
    cfg.validate()?;
    if series.len() < 4 {
        return Ok(FilterOutcome {
            series: series.clone(),
            flagged: Vec::new(),
            too_short: true,
            passes: 0,
        });
    }
    let days = daily_deltas(series)?;
    let mut values: Vec<f64> = days.iter().map(|d| d.delta).collect();
    let mut flagged = Vec::new();
    let mut passes = 0;
    while passes < MAX_PASSES {
        let (q, hits) = flag_outliers(&values, cfg.iqr_multiplier);
        passes += 1;
        if hits.is_empty() {
            break;
        }
        for (i, side) in hits {
            flagged.push(FlaggedDelta {
                date: days[i].date,
                delta: values[i],
                replacement: q.median,
                side,
                pass: passes,
            });
            values[i] = q.median;
        }
    }
    if flagged.is_empty() {
        return Ok(FilterOutcome { series: series.clone(), flagged, too_short: false, passes });
    }
    flagged.sort_by_key(|f| (f.date, f.pass));

    let pts = series.points();
    let mut rebuilt = Vec::with_capacity(pts.len());
    rebuilt.push(pts[0]);
    let mut cum = pts[0].1;
    let mut day = 0;
    for w in pts.windows(2) {
        let gap = (w[1].0 - w[0].0).num_days() as usize;
        let original = days[day].delta;
        let corrected = &values[day..day + gap];
        if corrected.iter().all(|&v| v == original) {
            cum += w[1].1 - w[0].1;
        } else {
            cum += corrected.iter().sum::<f64>();
        }
        rebuilt.push((w[1].0, cum.max(0.0)));
        day += gap;
    }
    Ok(FilterOutcome {
        series: DownloadSeries::new(series.model_id.clone(), rebuilt)?,
        flagged,
        too_short: false,
        passes,
    })
}
