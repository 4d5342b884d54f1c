use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{DownloadSeries, SeriesError};

/// Post-release milestones, in days.
pub const MILESTONE_DAYS: [u16; 7] = [7, 14, 30, 60, 90, 180, 365];

/// A day offset from [`MILESTONE_DAYS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Milestone(u16);

impl Milestone {
    pub fn new(days: u32) -> Result<Milestone, SeriesError> {
        MILESTONE_DAYS
            .iter()
            .find(|&&m| u32::from(m) == days)
            .map(|&m| Milestone(m))
            .ok_or(SeriesError::UnknownMilestone(days))
    }

    pub fn all() -> impl Iterator<Item = Milestone> {
        MILESTONE_DAYS.iter().map(|&m| Milestone(m))
    }

    pub fn days(self) -> u32 {
        u32::from(self.0)
    }

    /// Calendar date the milestone falls on for a given release.
    pub fn date_for(self, release: NaiveDate) -> NaiveDate {
        release + chrono::Days::new(u64::from(self.0))
    }
}

impl TryFrom<u32> for Milestone {
    type Error = SeriesError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Milestone::new(v)
    }
}

impl From<Milestone> for u32 {
    fn from(m: Milestone) -> u32 {
        m.days()
    }
}

impl fmt::Display for Milestone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}d", self.0)
    }
}

/// Cumulative downloads `t` days after release, or `None` when the
/// milestone date is past the last snapshot.
///
/// Dates between snapshots are linearly interpolated. A series that starts
/// after the release is anchored at zero downloads on the release date.
pub fn milestone_value(
    series: &DownloadSeries,
    release_date: NaiveDate,
    t: u32,
) -> Result<Option<f64>, SeriesError> {
    let m = Milestone::new(t)?;
    let target = m.date_for(release_date);
    let pts = series.points();
    let Some(&(last, _)) = pts.last() else {
        return Ok(None);
    };
    if target > last {
        return Ok(None);
    }
    let idx = pts.partition_point(|p| p.0 < target);
    if pts[idx].0 == target {
        return Ok(Some(pts[idx].1));
    }
    let (d0, v0) = match idx.checked_sub(1) {
        Some(i) => pts[i],
        None if release_date < pts[0].0 => (release_date, 0.0),
        None => return Ok(None),
    };
    let (d1, v1) = pts[idx];
    let span = (d1 - d0).num_days() as f64;
    let frac = (target - d0).num_days() as f64 / span;
    Ok(Some(v0 + frac * (v1 - v0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::tests::d;

    fn release() -> NaiveDate {
        d("2026-01-01")
    }

    fn at(day: u64, v: f64) -> (NaiveDate, f64) {
        (release() + chrono::Days::new(day), v)
    }

    #[test]
    fn interpolates_midpoint() {
        let s = DownloadSeries::new("a/b", vec![at(6, 90_000.0), at(8, 110_000.0)]).unwrap();
        assert_eq!(milestone_value(&s, release(), 7).unwrap(), Some(100_000.0));
    }

    #[test]
    fn unreached_milestone_absent() {
        let s = DownloadSeries::new("a/b", vec![at(1, 5.0), at(20, 500.0)]).unwrap();
        assert_eq!(milestone_value(&s, release(), 30).unwrap(), None);
        assert!(milestone_value(&s, release(), 14).unwrap().is_some());
    }

    #[test]
    fn exact_hit() {
        let s = DownloadSeries::new("a/b", vec![at(13, 1.0), at(14, 42.0), at(15, 50.0)]).unwrap();
        assert_eq!(milestone_value(&s, release(), 14).unwrap(), Some(42.0));
    }

    #[test]
    fn release_after_data_is_absent() {
        let s = DownloadSeries::new("a/b", vec![at(0, 1.0)]).unwrap();
        assert_eq!(milestone_value(&s, d("2027-01-01"), 7).unwrap(), None);
    }

    #[test]
    fn zero_anchor_at_release() {
        let s = DownloadSeries::new("a/b", vec![at(10, 1000.0)]).unwrap();
        assert_eq!(milestone_value(&s, release(), 7).unwrap(), Some(700.0));
    }

    #[test]
    fn rejects_unknown_milestone() {
        let s = DownloadSeries::new("a/b", vec![at(10, 1000.0)]).unwrap();
        assert_eq!(milestone_value(&s, release(), 8), Err(SeriesError::UnknownMilestone(8)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interpolation_is_bracketed(
                steps in prop::collection::vec((1u64..20, 0u32..100_000), 1..40),
                which in 0usize..7,
            ) {
                let mut day = 0;
                let mut cum = 0.0;
                let mut pts = Vec::new();
                for (gap, inc) in steps {
                    day += gap;
                    cum += f64::from(inc);
                    pts.push(at(day, cum));
                }
                let s = DownloadSeries::new("a/b", pts.clone()).unwrap();
                let t = u32::from(MILESTONE_DAYS[which]);
                if let Some(v) = milestone_value(&s, release(), t).unwrap() {
                    let target = release() + chrono::Days::new(u64::from(t));
                    let before = pts.iter().rev().find(|p| p.0 <= target).map_or(0.0, |p| p.1);
                    let after = pts.iter().find(|p| p.0 >= target).unwrap().1;
                    prop_assert!(before.min(after) <= v && v <= before.max(after));
                }
            }
        }
    }
}
