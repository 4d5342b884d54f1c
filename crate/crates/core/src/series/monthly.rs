use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;

use super::{first_of_month, is_month_label, next_month, prev_month, DownloadSeries, Flags, SeriesError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonthlyPoint {
    /// First-of-month label; the value is cumulative through the previous day.
    pub label: NaiveDate,
    pub value: f64,
    pub flags: Flags,
}

/// Monthly cumulative series with strictly increasing labels and
/// non-decreasing values.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySeries {
    pub id: String,
    points: Vec<MonthlyPoint>,
}

impl MonthlySeries {
    pub fn new(id: impl Into<String>, points: Vec<MonthlyPoint>) -> Result<MonthlySeries, SeriesError> {
        for p in &points {
            if !is_month_label(p.label) {
                return Err(SeriesError::NotFirstOfMonth(p.label));
            }
            if !p.value.is_finite() || p.value < 0.0 {
                return Err(SeriesError::InvalidValue { date: p.label, value: p.value });
            }
        }
        for w in points.windows(2) {
            if w[1].label <= w[0].label {
                return Err(SeriesError::NonIncreasingDates(w[1].label));
            }
            if w[1].value < w[0].value {
                return Err(SeriesError::InvalidValue { date: w[1].label, value: w[1].value });
            }
        }
        Ok(MonthlySeries { id: id.into(), points })
    }

    /// Convenience constructor from `(label, value)` pairs without flags.
    pub fn from_values(
        id: impl Into<String>,
        values: impl IntoIterator<Item = (NaiveDate, f64)>,
    ) -> Result<MonthlySeries, SeriesError> {
        MonthlySeries::new(
            id,
            values
                .into_iter()
                .map(|(label, value)| MonthlyPoint { label, value, flags: Flags::empty() })
                .collect(),
        )
    }

    pub fn points(&self) -> &[MonthlyPoint] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn labels(&self) -> Vec<NaiveDate> {
        self.points.iter().map(|p| p.label).collect()
    }

    pub fn value_at(&self, label: NaiveDate) -> Option<f64> {
        self.points
            .binary_search_by_key(&label, |p| p.label)
            .ok()
            .map(|i| self.points[i].value)
    }

    /// Last value at or before `label`, zero before the first label.
    pub fn carried_value(&self, label: NaiveDate) -> f64 {
        let idx = self.points.partition_point(|p| p.label <= label);
        idx.checked_sub(1).map_or(0.0, |i| self.points[i].value)
    }

    pub fn last(&self) -> Option<&MonthlyPoint> {
        self.points.last()
    }
}

/// Monthly labels from the month after the first snapshot through the month
/// after the last one; each value is the last snapshot strictly before the
/// label. Decreases in the raw counter are clamped to the running maximum.
pub fn monthly_rollup(series: &DownloadSeries) -> MonthlySeries {
    let (Some(first), Some(last)) = (series.first_date(), series.last_date()) else {
        return MonthlySeries { id: series.model_id.clone(), points: Vec::new() };
    };
    let end = next_month(first_of_month(last));
    let mut label = next_month(first_of_month(first));
    let mut points = Vec::new();
    let mut running = 0.0f64;
    while label <= end {
        let mut flags = Flags::empty();
        let window_start = prev_month(label);
        let idx_hi = series.points().partition_point(|p| p.0 < label);
        let idx_lo = series.points().partition_point(|p| p.0 < window_start);
        if idx_hi == idx_lo {
            flags.insert(Flags::CARRIED);
        }
        let mut value = series.value_before(label).unwrap_or(0.0);
        if value < running {
            value = running;
            flags.insert(Flags::CLAMPED);
        }
        running = value;
        points.push(MonthlyPoint { label, value, flags });
        label = next_month(label);
    }
    MonthlySeries { id: series.model_id.clone(), points }
}

/// Continues a filtered monthly baseline with raw monthly increments from
/// scraper snapshots.
///
/// The output equals `history` through `splice_date`; each later label adds
/// the scraper's increment over that month (negative increments clamp to
/// zero and are flagged).
pub fn splice(
    history: &MonthlySeries,
    scraper: &DownloadSeries,
    splice_date: NaiveDate,
) -> Result<MonthlySeries, SeriesError> {
    if !is_month_label(splice_date) {
        return Err(SeriesError::NotFirstOfMonth(splice_date));
    }
    if history.value_at(splice_date).is_none() {
        return Err(SeriesError::MissingBaseline(splice_date));
    }
    let mut points: Vec<MonthlyPoint> =
        history.points.iter().copied().filter(|p| p.label <= splice_date).collect();

    let Some(last) = scraper.last_date().filter(|&l| l >= splice_date) else {
        return MonthlySeries::new(history.id.clone(), points);
    };
    let mut prev_raw = scraper
        .value_before(splice_date)
        .ok_or(SeriesError::ScraperNotCovering(splice_date))?;
    let mut prev_out = points.last().expect("baseline present").value;
    let end = next_month(first_of_month(last));
    let mut label = next_month(splice_date);
    while label <= end {
        let month_start = prev_month(label);
        let any_in_month = scraper
            .points()
            .iter()
            .any(|p| p.0 >= month_start && p.0 < label);
        if !any_in_month {
            return Err(SeriesError::ScraperGap(month_start.format("%Y-%m").to_string()));
        }
        let raw = scraper.value_before(label).expect("snapshot in month");
        let mut flags = Flags::empty();
        let mut delta = raw - prev_raw;
        if delta < 0.0 {
            delta = 0.0;
            flags.insert(Flags::CLAMPED);
        }
        prev_out += delta;
        prev_raw = raw;
        points.push(MonthlyPoint { label, value: prev_out, flags });
        label = next_month(label);
    }
    MonthlySeries::new(history.id.clone(), points)
}

/// Sums member series per group on the union of all labels. Members
/// contribute their carried-forward value (zero before their first label);
/// ids missing from `group_map` go to `"Other"`.
pub fn aggregate_group(
    series_list: &[MonthlySeries],
    group_map: &HashMap<String, String>,
) -> BTreeMap<String, MonthlySeries> {
    let labels: BTreeSet<NaiveDate> =
        series_list.iter().flat_map(|s| s.points.iter().map(|p| p.label)).collect();
    let mut members: BTreeMap<&str, Vec<&MonthlySeries>> = BTreeMap::new();
    for s in series_list {
        let group = group_map.get(&s.id).map_or("Other", String::as_str);
        members.entry(group).or_default().push(s);
    }
    members
        .into_iter()
        .map(|(group, list)| {
            let points = labels
                .iter()
                .map(|&label| MonthlyPoint {
                    label,
                    value: list.iter().map(|s| s.carried_value(label)).sum(),
                    flags: Flags::empty(),
                })
                .collect();
            (group.to_string(), MonthlySeries { id: group.to_string(), points })
        })
        .collect()
}

pub fn growth_ratio(series: &MonthlySeries, from: NaiveDate, to: NaiveDate) -> Result<f64, SeriesError> {
    let a = series.value_at(from).ok_or(SeriesError::MissingLabel(from))?;
    let b = series.value_at(to).ok_or(SeriesError::MissingLabel(to))?;
    if a == 0.0 {
        return Err(SeriesError::UndefinedRatio(from));
    }
    Ok(b / a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::tests::d;

    fn monthly(id: &str, start: &str, values: &[f64]) -> MonthlySeries {
        let mut label = d(start);
        let mut pts = Vec::new();
        for &v in values {
            pts.push((label, v));
            label = next_month(label);
        }
        MonthlySeries::from_values(id, pts).unwrap()
    }

    #[test]
    fn rollup_uses_last_snapshot_before_label() {
        let s = DownloadSeries::new(
            "a/b",
            vec![(d("2025-07-29"), 10.0), (d("2025-07-31"), 12.0), (d("2025-08-02"), 15.0)],
        )
        .unwrap();
        let m = monthly_rollup(&s);
        assert_eq!(m.value_at(d("2025-08-01")), Some(12.0));
        assert_eq!(m.value_at(d("2025-09-01")), Some(15.0));
    }

    #[test]
    fn rollup_single_and_carry_forward() {
        let s = DownloadSeries::new("a/b", vec![(d("2025-07-15"), 5.0)]).unwrap();
        let m = monthly_rollup(&s);
        assert_eq!(m.points().len(), 1);
        assert_eq!(m.points()[0].label, d("2025-08-01"));

        let s = DownloadSeries::new("a/b", vec![(d("2025-06-10"), 5.0), (d("2025-08-10"), 9.0)])
            .unwrap();
        let m = monthly_rollup(&s);
        assert_eq!(m.values(), vec![5.0, 5.0, 9.0]);
        assert!(m.points()[1].flags.contains(Flags::CARRIED));
    }

    #[test]
    fn rollup_clamps_counter_decrease() {
        let s = DownloadSeries::new("a/b", vec![(d("2025-06-10"), 50.0), (d("2025-07-10"), 40.0)])
            .unwrap();
        let m = monthly_rollup(&s);
        assert_eq!(m.values(), vec![50.0, 50.0]);
        assert!(m.points()[1].flags.contains(Flags::CLAMPED));
    }

    #[test]
    fn splice_continuity() {
        let history = monthly("a/b", "2025-06-01", &[800_000.0, 900_000.0, 1_000_000.0]);
        let scraper = DownloadSeries::new(
            "a/b",
            vec![
                (d("2025-07-31"), 5_000_000.0),
                (d("2025-08-31"), 5_040_000.0),
                (d("2025-09-30"), 5_090_000.0),
            ],
        )
        .unwrap();
        let out = splice(&history, &scraper, d("2025-08-01")).unwrap();
        assert_eq!(out.value_at(d("2025-08-01")), Some(1_000_000.0));
        assert_eq!(out.value_at(d("2025-09-01")), Some(1_040_000.0));
        assert_eq!(out.value_at(d("2025-10-01")), Some(1_090_000.0));
    }

    #[test]
    fn splice_clamps_reset() {
        let history = monthly("a/b", "2025-08-01", &[1_000_000.0]);
        let scraper = DownloadSeries::new(
            "a/b",
            vec![(d("2025-07-31"), 500_000.0), (d("2025-08-31"), 470_000.0), (d("2025-09-30"), 480_000.0)],
        )
        .unwrap();
        let out = splice(&history, &scraper, d("2025-08-01")).unwrap();
        assert_eq!(out.values(), vec![1_000_000.0, 1_000_000.0, 1_010_000.0]);
        assert!(out.points()[1].flags.contains(Flags::CLAMPED));
        assert!(!out.points()[2].flags.contains(Flags::CLAMPED));
    }

    #[test]
    fn splice_empty_scraper_and_errors() {
        let history = monthly("a/b", "2025-07-01", &[900.0, 1000.0]);
        let empty = DownloadSeries::empty("a/b");
        assert_eq!(splice(&history, &empty, d("2025-08-01")).unwrap(), history);

        assert_eq!(
            splice(&history, &empty, d("2025-09-01")),
            Err(SeriesError::MissingBaseline(d("2025-09-01")))
        );
        let gap = DownloadSeries::new(
            "a/b",
            vec![(d("2025-07-31"), 1.0), (d("2025-08-31"), 2.0), (d("2025-10-15"), 3.0)],
        )
        .unwrap();
        assert_eq!(
            splice(&history, &gap, d("2025-08-01")),
            Err(SeriesError::ScraperGap("2025-09".into()))
        );
        let late = DownloadSeries::new("a/b", vec![(d("2025-08-03"), 1.0)]).unwrap();
        assert_eq!(
            splice(&history, &late, d("2025-08-01")),
            Err(SeriesError::ScraperNotCovering(d("2025-08-01")))
        );
    }

    #[test]
    fn aggregation() {
        let a = monthly("q/a", "2025-01-01", &[100.0, 200.0]);
        let b = monthly("q/b", "2025-01-01", &[50.0, 70.0]);
        let late = monthly("m/c", "2025-02-01", &[30.0]);
        let map: HashMap<String, String> = [
            ("q/a".to_string(), "China".to_string()),
            ("q/b".to_string(), "China".to_string()),
        ]
        .into_iter()
        .collect();
        let g = aggregate_group(&[a, b, late], &map);
        assert_eq!(g["China"].values(), vec![150.0, 270.0]);
        assert_eq!(g["Other"].values(), vec![0.0, 30.0]);
    }

    #[test]
    fn regional_gap_from_published_totals() {
        let china = monthly("c/x", "2026-03-01", &[1.15e9]);
        let usa = monthly("u/x", "2026-03-01", &[7.23e8]);
        let map: HashMap<String, String> = [
            ("c/x".to_string(), "China".to_string()),
            ("u/x".to_string(), "USA".to_string()),
        ]
        .into_iter()
        .collect();
        let g = aggregate_group(&[china, usa], &map);
        let label = d("2026-03-01");
        let gap = g["China"].value_at(label).unwrap() - g["USA"].value_at(label).unwrap();
        assert_eq!(gap, 1.15e9 - 7.23e8);
        // published gap is 428M; the totals carry +-5M and +-0.5M rounding
        assert!((gap - 4.28e8).abs() <= 5.5e6, "gap {gap}");
    }

    #[test]
    fn growth() {
        let s = monthly("x/y", "2025-03-01", &[97e6, 1.15e9]);
        let r = growth_ratio(&s, d("2025-03-01"), d("2025-04-01")).unwrap();
        assert_eq!(format!("{r:.1}"), "11.9");
        let s = monthly("x/y", "2025-03-01", &[5.0, 5.0]);
        assert_eq!(growth_ratio(&s, d("2025-03-01"), d("2025-04-01")).unwrap(), 1.0);
        let z = monthly("x/y", "2025-03-01", &[0.0, 5.0]);
        assert_eq!(
            growth_ratio(&z, d("2025-03-01"), d("2025-04-01")),
            Err(SeriesError::UndefinedRatio(d("2025-03-01")))
        );
        assert!(growth_ratio(&s, d("2024-01-01"), d("2025-04-01")).is_err());
    }
}
