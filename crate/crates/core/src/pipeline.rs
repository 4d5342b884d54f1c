//! End-to-end batch run: filter, splice or roll up, then RAM per bucket.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::ram::{build_reference_curve, ram_trajectory, RamError, RamScore, ReferenceCurve};
use crate::registry::{Registry, SizeBucket};
use crate::series::{iqr_filter, monthly_rollup, splice, DownloadSeries, FilterConfig, Flags, MonthlySeries};
use crate::Result;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    /// Hand-off label between vendor history and scraper data. Without it,
    /// monthly series come from the filtered scraper data alone.
    pub splice_date: Option<NaiveDate>,
    pub reference_date: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub filtered: DownloadSeries,
    pub outliers: usize,
    pub too_short: bool,
    pub monthly: MonthlySeries,
}

#[derive(Debug, Default)]
pub struct PipelineOutput {
    pub models: BTreeMap<String, ModelOutput>,
    pub curves: BTreeMap<SizeBucket, ReferenceCurve>,
    pub unavailable: BTreeMap<SizeBucket, RamError>,
    /// Scores for every variant group whose bucket has a curve, ordered by
    /// group then milestone.
    pub scores: Vec<RamScore>,
    pub warnings: Vec<String>,
}

fn process_model(
    id: &str,
    raw: &DownloadSeries,
    history: Option<&MonthlySeries>,
    cfg: &PipelineConfig,
) -> Result<(ModelOutput, Vec<String>)> {
    let mut warnings = Vec::new();
    let outcome = iqr_filter(raw, &cfg.filter)?;
    if outcome.too_short {
        warnings.push(format!("{id}: fewer than 4 points, left unfiltered"));
    }
    let monthly = match (history, cfg.splice_date) {
        (Some(h), Some(date)) => splice(h, raw, date)?,
        _ => monthly_rollup(&outcome.series),
    };
    let clamped = monthly.points().iter().filter(|p| p.flags.contains(Flags::CLAMPED)).count();
    if clamped > 0 {
        warnings.push(format!("{id}: {clamped} monthly deltas clamped to zero"));
    }
    Ok((
        ModelOutput {
            outliers: outcome.flagged.len(),
            too_short: outcome.too_short,
            filtered: outcome.series,
            monthly,
        },
        warnings,
    ))
}

/// Filters every scraper series and builds its monthly series, spliced
/// onto vendor history when both a history and a splice date exist.
pub fn process_models(
    series: &BTreeMap<String, DownloadSeries>,
    history: &BTreeMap<String, MonthlySeries>,
    cfg: &PipelineConfig,
) -> Result<(BTreeMap<String, ModelOutput>, Vec<String>)> {
    cfg.filter.validate()?;
    let processed: Vec<(String, ModelOutput, Vec<String>)> = series
        .par_iter()
        .map(|(id, raw)| {
            let (out, w) = process_model(id, raw, history.get(id), cfg)?;
            Ok((id.clone(), out, w))
        })
        .collect::<Result<_>>()?;
    let mut models = BTreeMap::new();
    let mut warnings = Vec::new();
    for (id, model, w) in processed {
        warnings.extend(w);
        models.insert(id, model);
    }
    Ok((models, warnings))
}

/// Runs every stage. Per-model work is parallel; merging is by id so the
/// output does not depend on scheduling.
pub fn run_pipeline(
    registry: &Registry,
    series: &BTreeMap<String, DownloadSeries>,
    history: &BTreeMap<String, MonthlySeries>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let (models, warnings) = process_models(series, history, cfg)?;
    let mut output = PipelineOutput { models, warnings, ..PipelineOutput::default() };

    let filtered: HashMap<String, DownloadSeries> =
        output.models.iter().map(|(id, m)| (id.clone(), m.filtered.clone())).collect();
    let curves: Vec<(SizeBucket, std::result::Result<ReferenceCurve, RamError>)> = SizeBucket::ALL
        .par_iter()
        .map(|&b| (b, build_reference_curve(b, registry, &filtered, cfg.reference_date)))
        .collect();
    for (bucket, res) in curves {
        match res {
            Ok(curve) => {
                for m in curve.milestones.iter().filter(|m| m.reduced_support()) {
                    output.warnings.push(format!(
                        "{bucket} t={}: reduced reference support {}",
                        m.t, m.support
                    ));
                }
                output.curves.insert(bucket, curve);
            }
            Err(e) => {
                output.warnings.push(format!("{bucket}: RAM unavailable: {e}"));
                output.unavailable.insert(bucket, e);
            }
        }
    }

    let groups: Vec<(&String, SizeBucket)> = registry
        .variant_groups()
        .iter()
        .filter_map(|(g, members)| {
            let bucket = registry.get(members.first()?.as_str())?.bucket();
            Some((g, bucket))
        })
        .filter(|(g, _)| {
            registry
                .group_members(g)
                .is_some_and(|ms| ms.iter().any(|m| filtered.contains_key(m.as_str())))
        })
        .collect();
    let scored: Vec<Vec<RamScore>> = groups
        .par_iter()
        .filter_map(|(g, bucket)| {
            let curve = output.curves.get(bucket)?;
            Some(ram_trajectory(g, registry, &filtered, curve))
        })
        .collect::<std::result::Result<_, _>>()?;
    output.scores = scored.into_iter().flatten().collect();
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::OrgAliases;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn small_corpus() {
        let mut csv = String::from("model_id,organization,total_params,release_date\n");
        let mut series = BTreeMap::new();
        for i in 0..12 {
            let id = format!("org/m{i:02}");
            csv.push_str(&format!("{id},Org,8B,2025-01-01\n"));
            let pts: Vec<_> = (1..=200u64)
                .map(|k| (d("2025-01-01") + chrono::Days::new(k), (i as f64 + 1.0) * 100.0 * k as f64))
                .collect();
            series.insert(id.clone(), DownloadSeries::new(id, pts).unwrap());
        }
        let reg = Registry::from_csv(&csv, OrgAliases::default()).unwrap().0;
        let cfg = PipelineConfig {
            filter: FilterConfig::default(),
            splice_date: None,
            reference_date: d("2026-01-01"),
        };
        let out = run_pipeline(&reg, &series, &BTreeMap::new(), &cfg).unwrap();
        assert_eq!(out.models.len(), 12);
        assert_eq!(out.curves.len(), 1);
        assert_eq!(out.unavailable.len(), 6);
        // 200 days of data: 7..180 reached.
        assert_eq!(out.scores.len(), 12 * 6);
        let top = out.scores.iter().find(|s| s.model == "org/m11" && s.t == 7).unwrap();
        // Members m02..m11 carry multipliers 3..=12, median 7.5.
        assert!((top.score - 12.0 / 7.5).abs() < 1e-9);
    }
}
